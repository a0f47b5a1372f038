"""Neural building blocks: windowed score U-Net and Koopman encoder/decoder.

The score network takes a window of W perturbed frames stacked as channels
plus the diffusion time k and predicts the per-frame noise; its output shape
equals its input shape.  The Koopman encoder maps one frame to an n_d latent
through stride-2 convolutions and a dense head, the decoder mirrors it.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn


class SinusoidalFeatures(nn.Module):
    """Sinusoidal features of the scalar diffusion time k in [0, 1]."""

    def __init__(self, dim: int = 64, max_freq: float = 1000.0):
        super().__init__()
        half = dim // 2
        freqs = torch.exp(torch.linspace(0.0, math.log(max_freq), half))
        self.register_buffer("freqs", freqs)

    def forward(self, k: torch.Tensor) -> torch.Tensor:
        angles = k[:, None].to(self.freqs) * self.freqs[None, :]
        return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class TimeEmbedding(nn.Module):
    """Sinusoidal features followed by a two-layer dense net."""

    def __init__(self, embed_dim: int = 64, hidden: int = 256):
        super().__init__()
        self.features = SinusoidalFeatures(embed_dim)
        self.net = nn.Sequential(
            nn.Linear(embed_dim, hidden), nn.SiLU(), nn.Linear(hidden, embed_dim)
        )

    def forward(self, k: torch.Tensor) -> torch.Tensor:
        return self.net(self.features(k))


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, embed_dim: int):
        super().__init__()
        self.norm1 = _norm(channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.emb_proj = nn.Linear(embed_dim, channels)
        self.norm2 = _norm(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return x + h


class WindowUNet(nn.Module):
    """U-Net denoiser over W-frame windows with diffusion-time conditioning."""

    def __init__(
        self,
        window: int = 5,
        channels: tuple[int, ...] = (16, 32, 64),
        blocks: tuple[int, ...] = (3, 3, 3),
        embed_dim: int = 64,
        time_hidden: int = 256,
    ):
        super().__init__()
        if window < 1 or window % 2 == 0:
            raise ValueError("window must be a positive odd integer")
        if len(channels) != len(blocks):
            raise ValueError("channels and blocks must have the same length")
        self.window = window
        self.channels = tuple(channels)
        self.blocks = tuple(blocks)
        self.embed_dim = embed_dim
        self.time_hidden = time_hidden
        self.time = TimeEmbedding(embed_dim, time_hidden)
        self.stem = nn.Conv2d(window, channels[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        for level, (ch, nb) in enumerate(zip(channels, blocks)):
            self.down_blocks.append(
                nn.ModuleList([ResidualBlock(ch, embed_dim) for _ in range(nb)])
            )
            if level < len(channels) - 1:
                self.downsamplers.append(nn.Conv2d(ch, channels[level + 1], 3, stride=2, padding=1))

        self.middle = ResidualBlock(channels[-1], embed_dim)

        self.up_blocks = nn.ModuleList()
        self.upsamplers = nn.ModuleList()
        self.skip_merge = nn.ModuleList()
        for level in reversed(range(len(channels) - 1)):
            self.upsamplers.append(
                nn.ConvTranspose2d(channels[level + 1], channels[level], 4, stride=2, padding=1)
            )
            self.skip_merge.append(nn.Conv2d(2 * channels[level], channels[level], 1))
            self.up_blocks.append(
                nn.ModuleList([ResidualBlock(channels[level], embed_dim) for _ in range(blocks[level])])
            )

        self.head = nn.Sequential(
            _norm(channels[0]), nn.SiLU(), nn.Conv2d(channels[0], window, 3, padding=1)
        )

    def architecture(self) -> dict:
        return {
            "type": "window-unet",
            "window": self.window,
            "channels": list(self.channels),
            "blocks": list(self.blocks),
            "embed_dim": self.embed_dim,
            "time_hidden": self.time_hidden,
        }

    def forward(self, u: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
        if u.dim() != 4 or u.shape[1] != self.window:
            raise ValueError(f"expected input of shape (B, {self.window}, N, N), got {tuple(u.shape)}")
        emb = self.time(k.reshape(-1).to(u.dtype))
        h = self.stem(u)
        skips = []
        for level, blocks in enumerate(self.down_blocks):
            for block in blocks:
                h = block(h, emb)
            skips.append(h)
            if level < len(self.down_blocks) - 1:
                h = self.downsamplers[level](h)
        h = self.middle(h, emb)
        for i, (up, merge, blocks) in enumerate(
            zip(self.upsamplers, self.skip_merge, self.up_blocks)
        ):
            h = up(h)
            skip = skips[len(self.down_blocks) - 2 - i]
            h = merge(torch.cat([h, skip], dim=1))
            for block in blocks:
                h = block(h, emb)
        return self.head(h)


def _encoder_strides(grid_size: int, n_stages: int) -> list[int]:
    """Stride-2 stages until the spatial extent reaches 1, then stride 1."""
    strides = []
    size = grid_size
    for _ in range(n_stages):
        if size > 1:
            strides.append(2)
            size //= 2
        else:
            strides.append(1)
    return strides


# Variance retention of SiLU under unit-normal input is ~0.355; deep
# norm-free SiLU stacks need the compensating gain or the signal dies.
SILU_GAIN = 1.0 / math.sqrt(0.355)


def _init_silu_conv(conv: nn.Module, fan_in: int):
    nn.init.normal_(conv.weight, std=SILU_GAIN / math.sqrt(fan_in))
    nn.init.zeros_(conv.bias)


class KoopmanEncoder(nn.Module):
    def __init__(self, grid_size: int, widths: tuple[int, ...], latent_dim: int):
        super().__init__()
        strides = _encoder_strides(grid_size, len(widths))
        layers = []
        prev = 1
        size = grid_size
        for width, stride in zip(widths, strides):
            conv = nn.Conv2d(prev, width, 3, stride=stride, padding=1)
            _init_silu_conv(conv, prev * 9)
            layers += [conv, nn.SiLU()]
            prev = width
            size = size // stride
        self.conv = nn.Sequential(*layers)
        self.out_size = size
        self.head = nn.Linear(widths[-1] * size * size, latent_dim)

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        h = self.conv(u)
        return self.head(h.flatten(1))


class KoopmanDecoder(nn.Module):
    def __init__(self, grid_size: int, widths: tuple[int, ...], latent_dim: int):
        super().__init__()
        strides = _encoder_strides(grid_size, len(widths))
        size = grid_size
        for s in strides:
            size //= s
        self.in_size = size
        self.in_width = widths[-1]
        self.head = nn.Linear(latent_dim, widths[-1] * size * size)
        layers = []
        chans = list(widths[::-1]) + [1]
        for i, stride in enumerate(reversed(strides)):
            cin, cout = chans[i], chans[i + 1]
            if stride == 2:
                conv = nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1)
                _init_silu_conv(conv, cin * 4)
            else:
                conv = nn.Conv2d(cin, cout, 3, padding=1)
                _init_silu_conv(conv, cin * 9)
            layers.append(conv)
            if i < len(strides) - 1:
                layers.append(nn.SiLU())
        self.conv = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = self.head(z).reshape(-1, self.in_width, self.in_size, self.in_size)
        return self.conv(h)
