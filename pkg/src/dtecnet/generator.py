"""Three-encoder / four-decoder disentanglement generator.

The hierarchical encoder codes the corrupted image into a feature
sequence; a plain convolutional encoder extracts its artifact component,
and a second one codes the clean unpaired image into a structural latent.
Four decoders produce: the artifact-free restoration (from the full
sequence), the corrupted-image reconstruction (from the last sequence
entry plus the artifact latent only), the artifact-added clean image
(structural latent plus artifact latent) and the clean identity
reconstruction. A self-reduction pass re-encodes the artifact-added image
through the shared encoder/decoder.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from .attention import ResidualBlock
from .encoder import HierarchicalEncoder

CHECKPOINT_VERSION = "dtecnet-v1"


@dataclass
class ModelConfig:
    channels: int = 32
    n_dtd: int = 3
    n_dense: int = 6
    window: int = 8
    heads: int = 2
    se_reduction: int = 4
    sod_mar: bool = True
    only_transformer: bool = False
    use_position_bias: bool = True
    gate_from_output: bool = False

    def __post_init__(self):
        if self.n_dtd not in (1, 2, 3):
            raise ValueError("n_dtd must be 1, 2 or 3")
        if self.channels % 2 or self.channels % self.se_reduction:
            raise ValueError("channels must be even and divisible by se_reduction")


class ConvEncoder(nn.Module):
    """Stem convolution plus two residual blocks at full resolution."""

    def __init__(self, channels):
        super().__init__()
        self.stem = nn.Conv2d(1, channels, 3, padding=1)
        self.block1 = ResidualBlock(channels)
        self.block2 = ResidualBlock(channels)

    def forward(self, x):
        return self.block2(self.block1(self.stem(x)))


class SequenceDecoder(nn.Module):
    """Per-entry accept headers, fusion, residual trunk, image head."""

    def __init__(self, channels, n_entries):
        super().__init__()
        self.headers = nn.ModuleList(nn.Conv2d(channels, channels, 1)
                                     for _ in range(n_entries))
        self.fuse = nn.Conv2d(n_entries * channels, channels, 1)
        self.trunk = nn.Sequential(*[ResidualBlock(channels) for _ in range(4)])
        self.out = nn.Conv2d(channels, 1, 3, padding=1)

    @property
    def n_entries(self) -> int:
        return len(self.headers)

    def forward(self, seq):
        if len(seq) != len(self.headers):
            raise ValueError(f"decoder accepts {len(self.headers)} entries, got {len(seq)}")
        fused = self.fuse(torch.cat([h(f) for h, f in zip(self.headers, seq)], dim=1))
        return self.out(self.trunk(fused))


class PairDecoder(nn.Module):
    """Decodes the concatenation of two equally shaped latents to an image."""

    def __init__(self, channels):
        super().__init__()
        self.fuse = nn.Conv2d(2 * channels, channels, 1)
        self.trunk = nn.Sequential(*[ResidualBlock(channels) for _ in range(4)])
        self.out = nn.Conv2d(channels, 1, 3, padding=1)

    def forward(self, a, b):
        if a.shape != b.shape:
            raise ValueError(f"latent shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
        return self.out(self.trunk(self.fuse(torch.cat([a, b], dim=1))))


@dataclass
class GeneratorOutputs:
    artifact_removed: torch.Tensor       # restoration of the corrupted input
    artifact_added: torch.Tensor         # clean input with artifacts painted on
    artifact_recon: torch.Tensor         # identity reconstruction of the corrupted input
    clean_recon: torch.Tensor            # identity reconstruction of the clean input
    self_cleaned: torch.Tensor           # restoration of the artifact-added image
    coding_seq: list = field(default_factory=list)
    artifact_latent: torch.Tensor | None = None
    structure_latent: torch.Tensor | None = None


class DisentanglementGenerator(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        c = self.cfg.channels
        self.encoder = HierarchicalEncoder(
            channels=c, n_blocks=self.cfg.n_dtd, n_dense=self.cfg.n_dense,
            window=self.cfg.window, heads=self.cfg.heads,
            reduction=self.cfg.se_reduction,
            only_transformer=self.cfg.only_transformer,
            use_position_bias=self.cfg.use_position_bias,
            gate_from_output=self.cfg.gate_from_output)
        self.artifact_encoder = ConvEncoder(c)
        self.content_encoder = ConvEncoder(c)
        n_accept = self.encoder.sequence_length if self.cfg.sod_mar else 1
        self.clean_decoder = SequenceDecoder(c, n_accept)
        self.artifact_recon_decoder = PairDecoder(c)
        self.artifact_add_decoder = PairDecoder(c)
        self.clean_identity_decoder = SequenceDecoder(c, 1)

    def decode_clean(self, seq):
        if self.cfg.sod_mar:
            return self.clean_decoder(seq)
        return self.clean_decoder([seq[-1]])

    def remove_artifacts(self, x):
        """Inference path: corrupted image in, restored image out."""
        return self.decode_clean(self.encoder(x))

    def forward(self, x_a, y_c) -> GeneratorOutputs:
        if x_a.shape != y_c.shape:
            raise ValueError("corrupted and clean batches must share shape")
        seq = self.encoder(x_a)
        high = seq[-1]
        artifact_latent = self.artifact_encoder(x_a)
        structure_latent = self.content_encoder(y_c)

        artifact_removed = self.decode_clean(seq)
        artifact_recon = self.artifact_recon_decoder(high, artifact_latent)
        artifact_added = self.artifact_add_decoder(structure_latent, artifact_latent)
        clean_recon = self.clean_identity_decoder([structure_latent])
        self_cleaned = self.decode_clean(self.encoder(artifact_added))

        return GeneratorOutputs(
            artifact_removed=artifact_removed,
            artifact_added=artifact_added,
            artifact_recon=artifact_recon,
            clean_recon=clean_recon,
            self_cleaned=self_cleaned,
            coding_seq=seq,
            artifact_latent=artifact_latent,
            structure_latent=structure_latent,
        )


def _manifest(state):
    return {name: {"shape": list(t.shape), "dtype": str(t.dtype)}
            for name, t in state.items()}


def save_checkpoint(path, generator: DisentanglementGenerator, extra=None):
    """Write a single archive with weights, a manifest, and the model config."""
    state = generator.state_dict()
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(generator.cfg),
        "weights": state,
        "manifest": _manifest(state),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path):
    """Rebuild the generator from an archive; returns (generator, payload)."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {payload.get('version')!r}")
    state = payload["weights"]
    for name, meta in payload["manifest"].items():
        t = state[name]
        if list(t.shape) != meta["shape"] or str(t.dtype) != meta["dtype"]:
            raise ValueError(f"checkpoint manifest mismatch for {name}")
    generator = DisentanglementGenerator(ModelConfig(**payload["config"]))
    generator.load_state_dict(state)
    return generator, payload
