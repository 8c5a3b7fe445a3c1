"""Hierarchical encoder producing the densely reused coding sequence.

A stem convolution lifts the single-channel image to ``channels`` feature
maps; N dense transformer blocks then extend the sequence, where block i
(i >= 2) consumes a 1x1 channel compression of the concatenation of every
earlier entry, newest first. The full sequence (stem output plus one entry
per block, all at input resolution) is returned; its last entry is the
high-level feature handed to the reconstruction decoders.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .attention import AttentionConfig
from .blocks import DenseTransformerBlock


class HierarchicalEncoder(nn.Module):
    def __init__(self, channels=32, n_blocks=3, n_dense=6, window=8, heads=2,
                 reduction=4, only_transformer=False, use_position_bias=True,
                 gate_from_output=False):
        super().__init__()
        if n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        self.channels = channels
        self.n_blocks = n_blocks
        self.stem = nn.Conv2d(1, channels, 3, padding=1)
        attn_cfg = AttentionConfig.default(channels, window=window, heads=heads,
                                           use_position_bias=use_position_bias)
        self.blocks = nn.ModuleList(
            DenseTransformerBlock(channels, n_dense=n_dense, attn_cfg=attn_cfg,
                                  reduction=reduction,
                                  gate_from_output=gate_from_output,
                                  only_transformer=only_transformer)
            for _ in range(n_blocks))
        # 1x1 channel compression of the concatenated history, for blocks 2..N
        self.squeezers = nn.ModuleList(
            nn.Conv2d(i * channels, channels, 1) for i in range(2, n_blocks + 1))

    @property
    def sequence_length(self) -> int:
        return self.n_blocks + 1

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 1:
            raise ValueError(f"expected (B, 1, H, W) input, got {tuple(x.shape)}")
        seq = [self.stem(x)]
        seq.append(self.blocks[0](seq[0]))
        for i in range(2, self.n_blocks + 1):
            history = torch.cat(seq[::-1], dim=1)  # newest entry first
            seq.append(self.blocks[i - 1](self.squeezers[i - 2](history)))
        return seq
