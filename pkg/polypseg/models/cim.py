import torch
import torch.nn as nn

from polypseg.core.exceptions import ConfigError


class ChannelAttention(nn.Module):
    """Per-channel sigmoid gate from shared-MLP max and average descriptors"""

    def __init__(self, in_planes: int, reduction: int = 16):
        super().__init__()
        if in_planes % reduction:
            raise ConfigError(
                f"channel attention needs channels divisible by the reduction ratio: "
                f"{in_planes} % {reduction} != 0",
                {"channels": in_planes, "reduction": reduction},
            )
        self.avg_pool = nn.AdaptiveAvgPool2d(1)
        self.max_pool = nn.AdaptiveMaxPool2d(1)
        self.fc1 = nn.Conv2d(in_planes, in_planes // reduction, 1, bias=False)
        self.relu = nn.ReLU()
        self.fc2 = nn.Conv2d(in_planes // reduction, in_planes, 1, bias=False)

    def shared_mlp(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.relu(self.fc1(x)))

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.shared_mlp(self.max_pool(x)) + self.shared_mlp(self.avg_pool(x)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.gate(x) * x


class SpatialAttention(nn.Module):
    """Per-pixel sigmoid gate from channel-wise max and mean maps"""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=False)

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        max_out, _ = torch.max(x, dim=1, keepdim=True)
        avg_out = torch.mean(x, dim=1, keepdim=True)
        return torch.sigmoid(self.conv(torch.cat([max_out, avg_out], dim=1)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.gate(x) * x


class CIM(nn.Module):
    """T2 = spatial(channel(X1))"""

    def __init__(self, in_planes: int, reduction: int = 16):
        super().__init__()
        self.ca = ChannelAttention(in_planes, reduction)
        self.sa = SpatialAttention(7)

    def forward(self, x1: torch.Tensor) -> torch.Tensor:
        return self.sa(self.ca(x1))
