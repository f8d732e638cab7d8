from typing import List, Sequence

import torch
import torch.nn as nn

from polypseg.core.exceptions import ShapeError
from polypseg.models.layers import BasicConv2d, resize


class ChannelReduction(nn.Module):
    """X2, X3, X4 → X2', X3', X4' with `channel` channels each"""

    def __init__(self, in_channels: Sequence[int], channel: int):
        super().__init__()
        c2, c3, c4 = in_channels
        self.x2 = BasicConv2d(c2, channel, 3)
        self.x3 = BasicConv2d(c3, channel, 3)
        self.x4 = BasicConv2d(c4, channel, 3)

    def forward(self, x2: torch.Tensor, x3: torch.Tensor, x4: torch.Tensor) -> List[torch.Tensor]:
        return [self.x2(x2), self.x3(x3), self.x4(x4)]


def _check_pair(low: torch.Tensor, high: torch.Tensor, what: str) -> None:
    if low.shape[1] != high.shape[1]:
        raise ShapeError(
            f"{what}: channel mismatch {low.shape[1]} vs {high.shape[1]}", stage="cfm",
        )
    if low.shape[-2] != 2 * high.shape[-2] or low.shape[-1] != 2 * high.shape[-1]:
        raise ShapeError(
            f"{what}: expected a 2× stride gap, got {tuple(low.shape[-2:])} and "
            f"{tuple(high.shape[-2:])}",
            stage="cfm",
        )


class CFM(nn.Module):
    """Cascaded fusion of the three reduced high-level features into T1"""

    def __init__(self, channel: int):
        super().__init__()
        c = channel
        self.f1 = BasicConv2d(c, c, 3)
        self.f2 = BasicConv2d(c, c, 3)
        self.f3 = BasicConv2d(2 * c, c, 3)
        self.f4 = BasicConv2d(c, c, 3)
        self.f5 = BasicConv2d(c, c, 3)
        self.f6 = BasicConv2d(c, c, 3)
        self.f7 = BasicConv2d(2 * c, 2 * c, 3)
        self.f8 = BasicConv2d(2 * c, c, 3)

    def part1(self, x3: torch.Tensor, x4: torch.Tensor) -> torch.Tensor:
        _check_pair(x3, x4, "cfm part 1")
        up = resize(x4, x3.shape[-2:])
        return self.f3(torch.cat([self.f1(up) * x3, self.f2(up)], dim=1))

    def part2(self, x2: torch.Tensor, x3: torch.Tensor, x4: torch.Tensor,
              x34: torch.Tensor) -> torch.Tensor:
        _check_pair(x2, x3, "cfm part 2")
        size = x2.shape[-2:]
        product = self.f4(resize(x4, size)) * self.f5(resize(x3, size)) * x2
        return self.f8(self.f7(torch.cat([product, self.f6(resize(x34, size))], dim=1)))

    def forward(self, x2: torch.Tensor, x3: torch.Tensor, x4: torch.Tensor) -> torch.Tensor:
        return self.part2(x2, x3, x4, self.part1(x3, x4))


def plain_fusion(x2: torch.Tensor, x3: torch.Tensor, x4: torch.Tensor) -> torch.Tensor:
    """CFM replacement for ablations: sum of the upsampled reduced features"""
    size = x2.shape[-2:]
    return x2 + resize(x3, size) + resize(x4, size)
