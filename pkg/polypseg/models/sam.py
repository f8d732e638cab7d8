"""Similarity aggregation: non-local correlation plus graph reasoning.

T1 (semantic, stride 8) supplies queries/keys; T2 (detail, stride 4)
supplies a one-channel attention map that weights the keys before they are
pooled into a small node grid. Node states are built from Q through the
correlation map f, reasoned over by one graph layer and projected back.
"""
from typing import NamedTuple, Optional

import torch
import torch.nn as nn

from polypseg.core.exceptions import ConfigError, ShapeError
from polypseg.models.layers import BasicConv2d, resize
from polypseg.schemas.model import AblationVariant, DecoderConfig


class GraphConv(nn.Module):
    """Single graph layer over (state × node) features: ReLU(W_s((A − I)X))"""

    def __init__(self, num_state: int, num_node: int, bias: bool = False):
        super().__init__()
        self.adjacency = nn.Conv1d(num_node, num_node, kernel_size=1)
        self.state = nn.Conv1d(num_state, num_state, kernel_size=1, bias=bias)
        self.relu = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.adjacency(x.permute(0, 2, 1)).permute(0, 2, 1)
        h = h - x
        return self.relu(self.state(h))


class NodeConv(nn.Module):
    """1×1 convolution over node states (the convolutional ablation of GraphConv)"""

    def __init__(self, num_state: int):
        super().__init__()
        self.conv = nn.Conv1d(num_state, num_state, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


def build_graph_layer(variant: AblationVariant, num_state: int, num_node: int) -> nn.Module:
    if variant == AblationVariant.SAM_NOGCN:
        return nn.Identity()
    if variant == AblationVariant.SAM_CONV:
        return NodeConv(num_state)
    if variant == AblationVariant.FULL:
        return GraphConv(num_state, num_node)
    raise ConfigError(f"variant {variant} has no similarity aggregation module")


class SAMTrace(NamedTuple):
    q: torch.Tensor
    k: torch.Tensor
    attention: torch.Tensor
    v: torch.Tensor
    f: torch.Tensor
    nodes: torch.Tensor
    graph: torch.Tensor
    y: torch.Tensor
    z: torch.Tensor


class SAM(nn.Module):
    def __init__(self, cfg: DecoderConfig, t2_channels: int):
        super().__init__()
        c, s = cfg.channel, cfg.sam_state
        self.num_state = s
        self.nodes = cfg.sam_nodes
        self.offset = cfg.crop_offset

        self.w_theta = nn.Conv2d(c, s, kernel_size=1)
        self.w_phi = nn.Conv2d(c, s, kernel_size=1)
        self.wg = BasicConv2d(t2_channels, c, kernel_size=1)
        self.pool = nn.AdaptiveAvgPool2d(cfg.sam_pool)
        self.graph = build_graph_layer(cfg.variant, s, cfg.num_nodes)

        wz_in = cfg.sam_wz_in or s
        if wz_in != s:
            self.lift = nn.Conv2d(s, wz_in, kernel_size=1, bias=False)
            self.wz = BasicConv2d(wz_in, c, kernel_size=1)
        else:
            self.lift = nn.Identity()
            self.wz = nn.Conv2d(s, c, kernel_size=1, bias=False)

    def attention_map(self, t2: torch.Tensor, size) -> torch.Tensor:
        """Second channel of the channel-softmax of Wg(T2) on T1's grid"""
        return torch.softmax(resize(self.wg(t2), size), dim=1)[:, 1:2]

    def node_features(self, k: torch.Tensor, attention: torch.Tensor) -> torch.Tensor:
        """Pool K ⊙ T2' and center-crop to the node grid; B × state × nodes"""
        pooled = self.pool(k * attention)
        o, n = self.offset, self.nodes
        v = pooled[:, :, o:o + n, o:o + n]
        return v.reshape(k.shape[0], self.num_state, -1)

    @staticmethod
    def correlation(v: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
        """f = softmax over positions of Vᵀ·K; B × nodes × N"""
        k_flat = k.reshape(k.shape[0], k.shape[1], -1)
        return torch.softmax(torch.matmul(v.transpose(1, 2), k_flat), dim=-1)

    def forward(self, t1: torch.Tensor, t2: torch.Tensor,
                trace: bool = False) -> torch.Tensor:
        if t1.shape[1] != self.w_theta.in_channels:
            raise ShapeError(
                f"SAM expects T1 with {self.w_theta.in_channels} channels, got {t1.shape[1]}",
                stage="sam",
            )
        B, _, H, W = t1.shape
        q = self.w_theta(t1)
        k = self.w_phi(t1)
        attention = self.attention_map(t2, (H, W))
        v = self.node_features(k, attention)
        f = self.correlation(v, k)

        nodes = torch.matmul(q.reshape(B, self.num_state, -1), f.transpose(1, 2))
        graph = self.graph(nodes)
        y = torch.matmul(graph, f).reshape(B, self.num_state, H, W)
        z = t1 + self.wz(self.lift(y))
        if trace:
            return SAMTrace(q, k, attention, v, f, nodes, graph, y, z)
        return z


def zero_residual(sam: SAM) -> None:
    """Zero the last convolution of Wz so that SAM(T1, T2) == T1"""
    conv: Optional[nn.Conv2d] = sam.wz if isinstance(sam.wz, nn.Conv2d) else sam.wz.conv
    with torch.no_grad():
        conv.weight.zero_()
