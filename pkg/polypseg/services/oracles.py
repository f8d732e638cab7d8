"""Straight-line numpy renditions of the decoder modules.

Every function takes one feature map as a C×H×W float64 array and reads the
frozen weights out of the corresponding torch module. Batch norm is always
evaluated with running statistics. Nothing here calls torch operators, so the
results are an independent reference for the torch modules.
"""
from typing import Tuple

import numpy as np
import torch
import torch.nn as nn

from polypseg.models.cfm import CFM
from polypseg.models.cim import CIM, ChannelAttention, SpatialAttention
from polypseg.models.layers import BasicConv2d
from polypseg.models.sam import SAM, GraphConv, NodeConv


def to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().to(torch.float64).cpu().numpy()


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def softmax(x: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def conv2d(x: np.ndarray, conv: nn.Conv2d) -> np.ndarray:
    w = to_numpy(conv.weight)
    k = w.shape[-1]
    p = conv.padding[0]
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    h, wd = xp.shape[1] - k + 1, xp.shape[2] - k + 1
    out = np.zeros((w.shape[0], h, wd))
    for i in range(k):
        for j in range(k):
            out += np.einsum("oc,chw->ohw", w[:, :, i, j], xp[:, i:i + h, j:j + wd])
    if conv.bias is not None:
        out += to_numpy(conv.bias)[:, None, None]
    return out


def batchnorm(x: np.ndarray, bn: nn.BatchNorm2d) -> np.ndarray:
    mean = to_numpy(bn.running_mean)[:, None, None]
    var = to_numpy(bn.running_var)[:, None, None]
    gamma = to_numpy(bn.weight)[:, None, None]
    beta = to_numpy(bn.bias)[:, None, None]
    return (x - mean) / np.sqrt(var + bn.eps) * gamma + beta


def basic_conv(x: np.ndarray, unit: BasicConv2d) -> np.ndarray:
    return relu(batchnorm(conv2d(x, unit.conv), unit.bn))


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the half-pixel bilinear weights of output i"""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    return m


def bilinear(x: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    if x.shape[1:] == tuple(size):
        return x
    mh = _interp_matrix(x.shape[1], size[0])
    mw = _interp_matrix(x.shape[2], size[1])
    return np.einsum("ih,chw,jw->cij", mh, x, mw)


def adaptive_avg_pool(x: np.ndarray, out: int) -> np.ndarray:
    _, h, w = x.shape
    pooled = np.zeros((x.shape[0], out, out))
    for i in range(out):
        r0, r1 = (i * h) // out, -((-(i + 1) * h) // out)
        for j in range(out):
            c0, c1 = (j * w) // out, -((-(j + 1) * w) // out)
            pooled[:, i, j] = x[:, r0:r1, c0:c1].mean(axis=(1, 2))
    return pooled


def cfm(module: CFM, x2: np.ndarray, x3: np.ndarray, x4: np.ndarray) -> np.ndarray:
    up4 = bilinear(x4, x3.shape[1:])
    x34 = basic_conv(np.concatenate([basic_conv(up4, module.f1) * x3,
                                     basic_conv(up4, module.f2)]), module.f3)
    size = x2.shape[1:]
    product = (basic_conv(bilinear(x4, size), module.f4)
               * basic_conv(bilinear(x3, size), module.f5) * x2)
    fused = np.concatenate([product, basic_conv(bilinear(x34, size), module.f6)])
    return basic_conv(basic_conv(fused, module.f7), module.f8)


def channel_attention(module: ChannelAttention, x: np.ndarray) -> np.ndarray:
    w1 = to_numpy(module.fc1.weight)[:, :, 0, 0]
    w2 = to_numpy(module.fc2.weight)[:, :, 0, 0]

    def mlp(v: np.ndarray) -> np.ndarray:
        return w2 @ relu(w1 @ v)

    gate = sigmoid(mlp(x.max(axis=(1, 2))) + mlp(x.mean(axis=(1, 2))))
    return gate[:, None, None] * x


def spatial_attention(module: SpatialAttention, x: np.ndarray) -> np.ndarray:
    stacked = np.stack([x.max(axis=0), x.mean(axis=0)])
    return sigmoid(conv2d(stacked, module.conv)) * x


def cim(module: CIM, x1: np.ndarray) -> np.ndarray:
    return spatial_attention(module.sa, channel_attention(module.ca, x1))


def graph_layer(module: nn.Module, nodes: np.ndarray) -> np.ndarray:
    """nodes: state × node"""
    if isinstance(module, GraphConv):
        a = to_numpy(module.adjacency.weight)[:, :, 0]
        h = nodes @ a.T + to_numpy(module.adjacency.bias)[None, :] - nodes
        ws = to_numpy(module.state.weight)[:, :, 0]
        out = ws @ h
        if module.state.bias is not None:
            out += to_numpy(module.state.bias)[:, None]
        return relu(out)
    if isinstance(module, NodeConv):
        return to_numpy(module.conv.weight)[:, :, 0] @ nodes + to_numpy(module.conv.bias)[:, None]
    return nodes


def sam(module: SAM, t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
    c, h, w = t1.shape
    q = conv2d(t1, module.w_theta)
    k = conv2d(t1, module.w_phi)
    attention = softmax(bilinear(basic_conv(t2, module.wg), (h, w)), axis=0)[1]

    pooled = adaptive_avg_pool(k * attention[None], module.pool.output_size
                               if isinstance(module.pool.output_size, int)
                               else module.pool.output_size[0])
    o, n = module.offset, module.nodes
    v = pooled[:, o:o + n, o:o + n].reshape(k.shape[0], -1)
    k_flat = k.reshape(k.shape[0], -1)
    f = softmax(v.T @ k_flat, axis=1)

    nodes = q.reshape(q.shape[0], -1) @ f.T
    y = (graph_layer(module.graph, nodes) @ f).reshape(-1, h, w)
    if isinstance(module.lift, nn.Conv2d):
        y = conv2d(y, module.lift)
    z_res = conv2d(y, module.wz) if isinstance(module.wz, nn.Conv2d) else basic_conv(y, module.wz)
    return t1 + z_res
