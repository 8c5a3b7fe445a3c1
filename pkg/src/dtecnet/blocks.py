"""Dense feature-reuse block: windowed transformer, densely connected
convolutions, and a squeeze-excitation style channel gate.

Each block runs the lightweight transformer, then a chain of 3x3
convolutions where convolution j consumes the concatenation of the block
input and every previous stage (j*C -> C channels), and finally scales the
last stage by a per-channel gate computed from the block input before
adding the input back as a residual. The ``only_transformer`` variant
drops everything after the transformer.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import AttentionConfig, WindowTransformer


class ChannelGate(nn.Module):
    """Per-channel sigmoid gate from globally pooled reference features.

    forward(x, ref) returns x * gate(ref) + ref; the gate source is the
    block input by default and can be switched to the gated features
    themselves.
    """

    def __init__(self, channels, reduction=4, gate_from_output=False):
        super().__init__()
        if channels % reduction:
            raise ValueError("reduction must divide channels")
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, channels)
        self.gate_from_output = gate_from_output

    def gate(self, source):
        pooled = source.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(pooled))))

    def forward(self, x, ref):
        if x.shape != ref.shape:
            raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(ref.shape)}")
        g = self.gate(x if self.gate_from_output else ref)
        return x * g[:, :, None, None] + ref


class DenseTransformerBlock(nn.Module):
    def __init__(self, channels, n_dense=6, attn_cfg: AttentionConfig | None = None,
                 reduction=4, gate_from_output=False, only_transformer=False):
        super().__init__()
        if n_dense < 1:
            raise ValueError("n_dense must be >= 1")
        self.channels = channels
        self.n_dense = n_dense
        self.only_transformer = only_transformer
        self.transformer = WindowTransformer(attn_cfg or AttentionConfig.default(channels))
        if not only_transformer:
            self.convs = nn.ModuleList(
                nn.Conv2d(j * channels, channels, 3, padding=1)
                for j in range(1, n_dense + 1))
            self.gate = ChannelGate(channels, reduction, gate_from_output)

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        t = self.transformer(x)
        if self.only_transformer:
            return t
        stages = [x]
        y = F.relu(self.convs[0](t))
        stages.append(y)
        for j in range(2, self.n_dense + 1):
            y = F.relu(self.convs[j - 1](torch.cat(stages, dim=1)))
            stages.append(y)
        return self.gate(stages[-1], x)
