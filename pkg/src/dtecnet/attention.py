"""Lightweight windowed multi-head self-attention layer.

The block squeezes channels, runs non-shifted window attention with a
learned relative position bias, post-processes with a convolution and
token-wise layer norm, expands channels back, and adds the input as a
residual. The channel-expanding map is zero-initialized so a freshly
built layer is the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class AttentionConfig:
    channels: int            # width of the surrounding block
    inner_channels: int      # squeezed width inside the attention path
    head_width: int          # per-head projection width
    heads: int = 2
    window: int = 8
    use_position_bias: bool = True

    def __post_init__(self):
        if self.inner_channels >= self.channels:
            raise ValueError("inner_channels must be smaller than channels")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.heads < 1 or self.head_width < 1:
            raise ValueError("heads and head_width must be positive")

    @classmethod
    def default(cls, channels: int, window: int = 8, heads: int = 2,
                use_position_bias: bool = True) -> "AttentionConfig":
        inner = max(heads, channels // 2)
        return cls(channels=channels, inner_channels=inner,
                   head_width=max(1, inner // heads), heads=heads,
                   window=window, use_position_bias=use_position_bias)


def window_partition(x, window):
    """(B, C, H, W) -> (B*nWin, window*window, C); H and W must divide."""
    b, c, h, w = x.shape
    if h % window or w % window:
        raise ValueError(f"spatial dims {(h, w)} not divisible by window {window}")
    x = x.view(b, c, h // window, window, w // window, window)
    x = x.permute(0, 2, 4, 3, 5, 1).contiguous()
    return x.view(-1, window * window, c)


def window_reverse(tokens, window, h, w):
    """Inverse of window_partition back to (B, C, H, W)."""
    n = tokens.shape[0] // ((h // window) * (w // window))
    x = tokens.view(n, h // window, w // window, window, window, -1)
    x = x.permute(0, 5, 1, 3, 2, 4).contiguous()
    return x.view(n, -1, h, w)


def pad_to_multiple(x, window):
    """Reflect-pad bottom/right so both spatial dims divide the window."""
    h, w = x.shape[-2:]
    ph = (-h) % window
    pw = (-w) % window
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="reflect")
    return x, (ph, pw)


def _relative_index(window):
    coords = torch.stack(torch.meshgrid(torch.arange(window), torch.arange(window),
                                        indexing="ij")).flatten(1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel = rel.permute(1, 2, 0) + (window - 1)
    return rel[..., 0] * (2 * window - 1) + rel[..., 1]


class WindowAttention(nn.Module):
    """Multi-head self-attention over one window of tokens."""

    def __init__(self, inner_channels, heads, head_width, window, use_position_bias=True):
        super().__init__()
        self.heads = heads
        self.head_width = head_width
        self.window = window
        self.use_position_bias = use_position_bias
        width = heads * head_width
        self.q = nn.Linear(inner_channels, width)
        self.k = nn.Linear(inner_channels, width)
        self.v = nn.Linear(inner_channels, width)
        self.proj = nn.Linear(width, inner_channels)
        self.position_bias = nn.Parameter(
            torch.zeros((2 * window - 1) ** 2, heads))
        nn.init.trunc_normal_(self.position_bias, std=0.02)
        self.register_buffer("rel_index", _relative_index(window), persistent=False)

    def forward(self, tokens, return_attn=False):
        nw, n, _ = tokens.shape
        q = self.q(tokens).view(nw, n, self.heads, self.head_width).transpose(1, 2)
        k = self.k(tokens).view(nw, n, self.heads, self.head_width).transpose(1, 2)
        v = self.v(tokens).view(nw, n, self.heads, self.head_width).transpose(1, 2)
        logits = q @ k.transpose(-2, -1) / math.sqrt(self.head_width)
        if self.use_position_bias and n == self.window * self.window:
            bias = self.position_bias[self.rel_index.view(-1)]
            bias = bias.view(n, n, self.heads).permute(2, 0, 1)
            logits = logits + bias.unsqueeze(0)
        attn = logits.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(nw, n, self.heads * self.head_width)
        out = self.proj(out)
        if return_attn:
            return out, attn
        return out


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class WindowTransformer(nn.Module):
    """Squeeze -> residual pre-block -> window MSA -> POP -> unsqueeze -> +x."""

    def __init__(self, cfg: AttentionConfig):
        super().__init__()
        self.cfg = cfg
        c, ci = cfg.channels, cfg.inner_channels
        self.squeeze = nn.Conv2d(c, ci, 1)
        self.pre = ResidualBlock(ci)
        self.attn = WindowAttention(ci, cfg.heads, cfg.head_width, cfg.window,
                                    cfg.use_position_bias)
        self.pop_conv = nn.Conv2d(ci, ci, 3, padding=1)
        self.pop_norm = nn.LayerNorm(ci)
        self.unsqueeze = nn.Conv2d(ci, c, 1)
        # zero-init the expansion so the whole block starts as the identity
        nn.init.zeros_(self.unsqueeze.weight)
        nn.init.zeros_(self.unsqueeze.bias)

    def forward(self, x):
        if x.shape[1] != self.cfg.channels:
            raise ValueError(f"expected {self.cfg.channels} channels, got {x.shape[1]}")
        p = self.cfg.window
        y = self.pre(self.squeeze(x))
        y, (ph, pw) = pad_to_multiple(y, p)
        hp, wp = y.shape[-2:]
        tokens = window_partition(y, p)
        tokens = self.attn(tokens)
        y = window_reverse(tokens, p, hp, wp)
        if ph or pw:
            y = y[..., :hp - ph, :wp - pw]
        y = self.pop_conv(y)
        y = self.pop_norm(y.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
        return x + self.unsqueeze(y)
