"""Pyramid vision transformer (v2) encoder.

Four stages, each an overlapping patch embedding followed by transformer
blocks with spatial-reduction attention and a convolutional feed-forward.
Stage outputs sit at strides 4/8/16/32 of the input image.
"""
import math
from pathlib import Path
from typing import List, NamedTuple, Tuple, Union

import torch
import torch.nn as nn
from timm.layers import DropPath, trunc_normal_

from polypseg.core.exceptions import CheckpointError, ShapeError
from polypseg.core.logger import get_logger
from polypseg.schemas.model import BackboneConfig
from polypseg.schemas.response import LoadReport

logger = get_logger(__name__)

STAGE_STRIDES = (4, 8, 16, 32)


class PyramidFeatures(NamedTuple):
    x1: torch.Tensor
    x2: torch.Tensor
    x3: torch.Tensor
    x4: torch.Tensor


def _init_weights(m: nn.Module) -> None:
    if isinstance(m, nn.Linear):
        trunc_normal_(m.weight, std=.02)
        if m.bias is not None:
            nn.init.constant_(m.bias, 0)
    elif isinstance(m, nn.LayerNorm):
        nn.init.constant_(m.bias, 0)
        nn.init.constant_(m.weight, 1.0)
    elif isinstance(m, nn.Conv2d):
        fan_out = m.kernel_size[0] * m.kernel_size[1] * m.out_channels // m.groups
        m.weight.data.normal_(0, math.sqrt(2.0 / fan_out))
        if m.bias is not None:
            m.bias.data.zero_()


def embed_geometry(stage: int, patch_size: int) -> Tuple[int, int, int]:
    """(kernel, stride, padding) of the stage-entry embedding"""
    if stage == 1:
        return patch_size + 3, patch_size, (patch_size + 3) // 2
    return 3, 2, 1


class OverlapPatchEmbed(nn.Module):
    """Strided convolution to embed_dims[stage] channels, then layer norm over tokens"""

    def __init__(self, stage: int, in_chans: int, embed_dim: int,
                 patch_size: int = 4, eps: float = 1e-6):
        super().__init__()
        kernel, stride, padding = embed_geometry(stage, patch_size)
        self.stage = stage
        self.stride = stride
        self.proj = nn.Conv2d(in_chans, embed_dim, kernel_size=kernel, stride=stride, padding=padding)
        self.norm = nn.LayerNorm(embed_dim, eps=eps)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, int, int]:
        H, W = x.shape[-2:]
        if H % self.stride or W % self.stride:
            raise ShapeError(
                f"stage {self.stage} patch embedding needs spatial dims divisible by "
                f"{self.stride}, got {H}x{W}",
                stage=f"stage{self.stage}", height=H, width=W,
            )
        x = self.proj(x)
        _, _, H, W = x.shape
        x = x.flatten(2).transpose(1, 2)
        return self.norm(x), H, W


class DWConv(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dwconv = nn.Conv2d(dim, dim, 3, 1, 1, bias=True, groups=dim)

    def forward(self, x: torch.Tensor, H: int, W: int) -> torch.Tensor:
        B, N, C = x.shape
        x = x.transpose(1, 2).reshape(B, C, H, W)
        x = self.dwconv(x)
        return x.flatten(2).transpose(1, 2)


class Mlp(nn.Module):
    """Feed-forward with a depthwise 3×3 convolution between the two linears"""

    def __init__(self, in_features: int, hidden_features: int, drop: float = 0.):
        super().__init__()
        self.fc1 = nn.Linear(in_features, hidden_features)
        self.dwconv = DWConv(hidden_features)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden_features, in_features)
        self.drop = nn.Dropout(drop)

    def forward(self, x: torch.Tensor, H: int, W: int) -> torch.Tensor:
        x = self.act(self.dwconv(self.fc1(x), H, W))
        x = self.drop(x)
        x = self.fc2(x)
        return self.drop(x)


class SRAttention(nn.Module):
    """Multi-head attention whose keys/values come from a grid reduced by sr_ratio"""

    def __init__(self, dim: int, num_heads: int, sr_ratio: int = 1, qkv_bias: bool = True,
                 proj_drop: float = 0., eps: float = 1e-6):
        super().__init__()
        if dim % num_heads:
            raise ShapeError(f"dim {dim} should be divisible by num_heads {num_heads}")
        if sr_ratio < 1:
            raise ShapeError(f"sr_ratio must be >= 1, got {sr_ratio}")
        self.dim = dim
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.sr_ratio = sr_ratio

        self.q = nn.Linear(dim, dim, bias=qkv_bias)
        self.kv = nn.Linear(dim, dim * 2, bias=qkv_bias)
        self.proj = nn.Linear(dim, dim)
        self.proj_drop = nn.Dropout(proj_drop)
        if sr_ratio > 1:
            self.sr = nn.Conv2d(dim, dim, kernel_size=sr_ratio, stride=sr_ratio)
            self.norm = nn.LayerNorm(dim, eps=eps)

    def reduced_tokens(self, x: torch.Tensor, H: int, W: int) -> torch.Tensor:
        if self.sr_ratio == 1:
            return x
        if H % self.sr_ratio or W % self.sr_ratio:
            raise ShapeError(
                f"sr_ratio {self.sr_ratio} does not divide token grid {H}x{W}",
                height=H, width=W, sr_ratio=self.sr_ratio,
            )
        B, N, C = x.shape
        x_ = x.transpose(1, 2).reshape(B, C, H, W)
        x_ = self.sr(x_).reshape(B, C, -1).transpose(1, 2)
        return self.norm(x_)

    def forward(self, x: torch.Tensor, H: int, W: int,
                return_attention: bool = False) -> Union[torch.Tensor, Tuple[torch.Tensor, torch.Tensor]]:
        B, N, C = x.shape
        if C != self.dim:
            raise ShapeError(f"token dim {C} does not match attention dim {self.dim}")
        head_dim = C // self.num_heads
        q = self.q(x).reshape(B, N, self.num_heads, head_dim).permute(0, 2, 1, 3)
        kv = self.kv(self.reduced_tokens(x, H, W))
        kv = kv.reshape(B, -1, 2, self.num_heads, head_dim).permute(2, 0, 3, 1, 4)
        k, v = kv[0], kv[1]

        attn = ((q @ k.transpose(-2, -1)) * self.scale).softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, N, C)
        out = self.proj_drop(self.proj(out))
        if return_attention:
            return out, attn
        return out


class Block(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: int, sr_ratio: int,
                 qkv_bias: bool = True, drop: float = 0., drop_path: float = 0., eps: float = 1e-6):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=eps)
        self.attn = SRAttention(dim, num_heads, sr_ratio=sr_ratio, qkv_bias=qkv_bias,
                                proj_drop=drop, eps=eps)
        self.drop_path = DropPath(drop_path) if drop_path > 0. else nn.Identity()
        self.norm2 = nn.LayerNorm(dim, eps=eps)
        self.mlp = Mlp(dim, dim * mlp_ratio, drop=drop)

    def forward(self, x: torch.Tensor, H: int, W: int) -> torch.Tensor:
        x = x + self.drop_path(self.attn(self.norm1(x), H, W))
        return x + self.drop_path(self.mlp(self.norm2(x), H, W))


class PVTStage(nn.Module):
    """patch_embed, block0..block{depth-1}, norm"""

    def __init__(self, stage: int, cfg: BackboneConfig, drop_path_rates: List[float]):
        super().__init__()
        i = stage - 1
        in_chans = cfg.in_chans if stage == 1 else cfg.embed_dims[i - 1]
        dim = cfg.embed_dims[i]
        self.depth = cfg.depths[i]
        self.patch_embed = OverlapPatchEmbed(stage, in_chans, dim, cfg.patch_size, cfg.norm_eps)
        for j in range(self.depth):
            self.add_module(f"block{j}", Block(
                dim, cfg.num_heads[i], cfg.mlp_ratios[i], cfg.sr_ratios[i],
                qkv_bias=cfg.qkv_bias, drop=cfg.drop_rate,
                drop_path=drop_path_rates[j], eps=cfg.norm_eps,
            ))
        self.norm = nn.LayerNorm(dim, eps=cfg.norm_eps)

    def blocks(self) -> List[Block]:
        return [getattr(self, f"block{j}") for j in range(self.depth)]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B = x.shape[0]
        x, H, W = self.patch_embed(x)
        for blk in self.blocks():
            x = blk(x, H, W)
        x = self.norm(x)
        return x.reshape(B, H, W, -1).permute(0, 3, 1, 2).contiguous()


class PyramidVisionTransformer(nn.Module):
    """Encoder returning X1..X4; no classification head"""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        dpr = torch.linspace(0, cfg.drop_path_rate, sum(cfg.depths)).tolist()
        cursor = 0
        for stage in range(1, 5):
            depth = cfg.depths[stage - 1]
            self.add_module(f"stage{stage}", PVTStage(stage, cfg, dpr[cursor:cursor + depth]))
            cursor += depth
        self.apply(_init_weights)

    def stages(self) -> List[PVTStage]:
        return [getattr(self, f"stage{i}") for i in range(1, 5)]

    def forward(self, img: torch.Tensor) -> PyramidFeatures:
        if img.dim() != 4 or img.shape[1] != self.cfg.in_chans:
            raise ShapeError(
                f"expected N×{self.cfg.in_chans}×H×W image, got {tuple(img.shape)}",
                stage="input",
            )
        H, W = img.shape[-2:]
        if H % 32 or W % 32:
            raise ShapeError(
                f"image height and width must be divisible by 32, got {H}x{W}",
                stage="input", height=H, width=W,
            )
        feats = []
        x = img
        for stage in self.stages():
            x = stage(x)
            feats.append(x)
        return PyramidFeatures(*feats)


def count_parameters(cfg: BackboneConfig) -> int:
    """Closed-form parameter count of PyramidVisionTransformer(cfg)"""
    total = 0
    bias = 1 if cfg.qkv_bias else 0
    for i in range(4):
        stage = i + 1
        dim = cfg.embed_dims[i]
        in_chans = cfg.in_chans if stage == 1 else cfg.embed_dims[i - 1]
        kernel, _, _ = embed_geometry(stage, cfg.patch_size)
        hidden = dim * cfg.mlp_ratios[i]
        sr = cfg.sr_ratios[i]

        embed = in_chans * dim * kernel * kernel + dim + 2 * dim
        attn = (dim * dim + bias * dim) + (2 * dim * dim + bias * 2 * dim) + (dim * dim + dim)
        if sr > 1:
            attn += dim * dim * sr * sr + dim + 2 * dim
        mlp = (dim * hidden + hidden) + (9 * hidden + hidden) + (hidden * dim + dim)
        block = 2 * dim + attn + 2 * dim + mlp
        total += embed + cfg.depths[i] * block + 2 * dim
    return total


def load_pretrained(backbone: PyramidVisionTransformer, weight_file: Union[str, Path],
                    strict: bool = True) -> LoadReport:
    """Overwrite backbone parameters from a flat name→tensor file.

    Keys may carry the ``backbone.`` prefix used by full-model checkpoints.
    Shape mismatches always raise; missing or unexpected keys raise when strict.
    """
    from polypseg.models.checkpoint import read_tensor_map

    tensors = read_tensor_map(weight_file)
    prefix = "backbone."
    incoming = {
        (k[len(prefix):] if k.startswith(prefix) else k): v
        for k, v in tensors.items()
        if k.startswith(prefix) or k.startswith("stage")
    }
    own = backbone.state_dict()

    mismatched = sorted(
        k for k in own.keys() & incoming.keys() if own[k].shape != incoming[k].shape
    )
    missing = sorted(own.keys() - incoming.keys())
    unexpected = sorted(incoming.keys() - own.keys())
    if mismatched or (strict and (missing or unexpected)):
        raise CheckpointError(
            f"weight file {weight_file} does not match backbone config: "
            f"{len(mismatched)} mismatched, {len(missing)} missing, {len(unexpected)} unexpected",
            mismatched=mismatched, missing=missing, unexpected=unexpected,
        )

    loaded = sorted(own.keys() & incoming.keys())
    with torch.no_grad():
        for k in loaded:
            own[k].copy_(incoming[k].to(dtype=own[k].dtype))
    if missing or unexpected:
        logger.warning(
            f"Partial backbone load from {weight_file}: "
            f"{len(missing)} missing, {len(unexpected)} unexpected"
        )
    logger.info(f"Loaded {len(loaded)} backbone tensors from {weight_file}")
    return LoadReport(loaded=loaded, missing=missing, unexpected=unexpected)
