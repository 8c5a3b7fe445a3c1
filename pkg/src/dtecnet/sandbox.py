"""Self-contained CT simulation sandbox.

Provides everything needed to produce paired "with metal artifact" /
"without metal artifact" images from scratch: random soft-tissue phantoms,
a parallel-beam projector, Ram-Lak filtered back-projection, a
beam-hardening + photon-noise corruption model, and the classic
linear-interpolation (LI) sinogram-inpainting baseline.

Conventions: images are square H×W float arrays with attenuation values
normalized to [0, 1]; metal pixels are stored at 1.0. Sinograms are A×D
arrays of line integrals in pixel units (detector spacing = 1 pixel,
angles uniform over [0, pi)). A fixed constant maps pixel-unit line
integrals to the physical units used by the Beer-Lambert noise channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

# Attenuation accumulated by a ray crossing one pixel of value 1.0, in the
# physical units fed to the Beer-Lambert channel. 0.2 puts a typical 64px
# body path around s ~ 3 (transmission ~5%), dense metal paths around 6-9.
MU_PIXEL = 0.2

# Step along rays for bilinear sampling, in pixels.
RAY_STEP = 0.5


class SandboxError(ValueError):
    """Raised on malformed simulation inputs."""


@dataclass
class Image:
    """Single-channel attenuation map in [0, 1] plus a binary metal mask."""

    pixels: np.ndarray
    metal_mask: np.ndarray | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise SandboxError(f"pixels must be 2-D, got shape {self.pixels.shape}")
        if not np.isfinite(self.pixels).all():
            raise SandboxError("pixels contain non-finite values")
        if self.metal_mask is None:
            self.metal_mask = np.zeros(self.pixels.shape, dtype=bool)
        else:
            self.metal_mask = np.asarray(self.metal_mask, dtype=bool)
        if self.metal_mask.shape != self.pixels.shape:
            raise SandboxError("metal_mask shape does not match pixels")

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    @property
    def has_metal(self) -> bool:
        return bool(self.metal_mask.any())


@dataclass
class Sinogram:
    """Parallel-beam line integrals (angles x detector bins)."""

    values: np.ndarray
    angles: np.ndarray
    metal_trace: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.values.ndim != 2:
            raise SandboxError("sinogram values must be 2-D (angles x detectors)")
        if self.angles.shape != (self.values.shape[0],):
            raise SandboxError("angles length does not match sinogram rows")
        if not np.isfinite(self.values).all():
            raise SandboxError("sinogram contains non-finite values")
        if (self.values < 0).any():
            raise SandboxError("sinogram contains negative line integrals")
        if self.metal_trace is None:
            self.metal_trace = np.zeros(self.values.shape, dtype=bool)
        else:
            self.metal_trace = np.asarray(self.metal_trace, dtype=bool)
        if self.metal_trace.shape != self.values.shape:
            raise SandboxError("metal_trace shape does not match values")

    @property
    def n_angles(self) -> int:
        return self.values.shape[0]

    @property
    def n_dets(self) -> int:
        return self.values.shape[1]


@dataclass
class CorruptionParams:
    """Knobs of the metal corruption channel.

    beam_hardening_strength: quadratic nonlinearity coefficient applied to
        the metal-only line integral (physical units).
    poisson_photon_count: incident photons per ray; ``math.inf`` disables
        the noise channel entirely.
    metal_attenuation: physical attenuation of metal relative to the stored
        pixel value of 1.0.
    """

    beam_hardening_strength: float = 0.5
    poisson_photon_count: float = 1e5
    metal_attenuation: float = 2.5

    def __post_init__(self):
        if self.beam_hardening_strength < 0:
            raise SandboxError("beam_hardening_strength must be >= 0")
        if not self.poisson_photon_count > 0:
            raise SandboxError("poisson_photon_count must be > 0")
        if self.metal_attenuation < 1:
            raise SandboxError("metal_attenuation must be >= 1")

    @property
    def noise_enabled(self) -> bool:
        return math.isfinite(self.poisson_photon_count)


def _paint_ellipse(canvas, cx, cy, ax0, ax1, angle, value):
    h, w = canvas.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    ca, sa = math.cos(angle), math.sin(angle)
    u = dx * ca + dy * sa
    v = -dx * sa + dy * ca
    inside = (u / ax0) ** 2 + (v / ax1) ** 2 <= 1.0
    canvas[inside] = value
    return inside


def generate_phantom(seed: int, size: int, n_ellipses: int, with_metal: bool) -> Image:
    """Random soft-tissue phantom, optionally with 1-3 small metal disks.

    Deterministic for a fixed seed. The body is a union of ellipses with
    values in [0.1, 0.6] (later ellipses paint over earlier ones), kept
    inside the inscribed scan circle; metal disks are placed strictly
    inside the body and stored at value 1.0.
    """
    if size < 32:
        raise SandboxError("size must be >= 32 (windowed attention needs room downstream)")
    if n_ellipses < 1:
        raise SandboxError("n_ellipses must be >= 1")

    rng = np.random.default_rng(seed)
    canvas = np.zeros((size, size), dtype=np.float64)
    c = (size - 1) / 2.0

    # large body ellipse first, interior structures after
    body_ax0 = rng.uniform(0.30, 0.42) * size
    body_ax1 = rng.uniform(0.30, 0.42) * size
    body_cx = c + rng.uniform(-0.02, 0.02) * size
    body_cy = c + rng.uniform(-0.02, 0.02) * size
    body_val = rng.uniform(0.15, 0.30)
    body = _paint_ellipse(canvas, body_cx, body_cy, body_ax0, body_ax1,
                          rng.uniform(0, math.pi), body_val)

    for _ in range(n_ellipses - 1):
        ax0 = rng.uniform(0.05, 0.16) * size
        ax1 = rng.uniform(0.05, 0.16) * size
        cx = body_cx + rng.uniform(-0.18, 0.18) * size
        cy = body_cy + rng.uniform(-0.18, 0.18) * size
        val = rng.uniform(0.1, 0.6)
        _paint_ellipse(canvas, cx, cy, ax0, ax1, rng.uniform(0, math.pi), val)

    mask = np.zeros((size, size), dtype=bool)
    if with_metal:
        # candidate centers: body pixels eroded so disks stay inside
        erosion = 5
        while erosion > 0:
            interior = ndimage.binary_erosion(body, iterations=erosion)
            if interior.any():
                break
            erosion -= 1
        else:
            interior = body
        ys, xs = np.nonzero(interior)
        n_disks = int(rng.integers(1, 4))
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        for _ in range(n_disks):
            k = int(rng.integers(0, len(ys)))
            r = rng.uniform(1.6, 3.4)
            disk = (xx - xs[k]) ** 2 + (yy - ys[k]) ** 2 <= r ** 2
            mask |= disk
        canvas[mask] = 1.0

    return Image(canvas, mask)


def _ray_samples(size: int, n_dets: int):
    """Detector offsets and along-ray sample offsets, both in pixels."""
    t = np.arange(n_dets, dtype=np.float64) - (n_dets - 1) / 2.0
    half = 0.5 * math.sqrt(2.0) * max(size, n_dets) + 1.0
    n_samples = int(math.ceil(2 * half / RAY_STEP)) + 1
    s = np.linspace(-half, half, n_samples)
    return t, s, s[1] - s[0]


def _project(pixels: np.ndarray, angles: np.ndarray, n_dets: int) -> np.ndarray:
    """Parallel-beam forward projection by bilinear sampling along rays."""
    size = pixels.shape[0]
    c = (size - 1) / 2.0
    t, s, ds = _ray_samples(size, n_dets)
    tt, ss = np.meshgrid(t, s, indexing="ij")
    out = np.empty((len(angles), n_dets), dtype=np.float64)
    for i, theta in enumerate(angles):
        ca, sa = math.cos(theta), math.sin(theta)
        xs = c + tt * ca - ss * sa
        ys = c + tt * sa + ss * ca
        vals = ndimage.map_coordinates(pixels, [ys.ravel(), xs.ravel()],
                                       order=1, mode="constant", cval=0.0)
        out[i] = vals.reshape(tt.shape).sum(axis=1) * ds
    return out


def radon(img: Image, n_angles: int, n_dets: int) -> Sinogram:
    """Forward-project an image; the metal trace is the support of the
    projected metal mask."""
    if n_angles < 16:
        raise SandboxError("n_angles must be >= 16")
    if n_dets < img.size:
        raise SandboxError("n_dets must be >= image size")
    angles = np.linspace(0.0, math.pi, n_angles, endpoint=False)
    values = _project(img.pixels, angles, n_dets)
    trace = None
    if img.has_metal:
        trace = _project(img.metal_mask.astype(np.float64), angles, n_dets) > 0.0
    return Sinogram(values, angles, trace)


def _ramlak_filter(n: int) -> np.ndarray:
    """Frequency response of the band-limited spatial-domain ramp."""
    f = np.zeros(n, dtype=np.float64)
    f[0] = 0.25
    odd = np.arange(1, n // 2 + 1, 2)
    f[odd] = -1.0 / (math.pi * odd) ** 2
    f[-odd] = -1.0 / (math.pi * odd) ** 2
    return 2.0 * np.real(np.fft.fft(f))


def fbp(sino: Sinogram, size: int) -> Image:
    """Ram-Lak filtered back-projection, clipped to [0, inf)."""
    a, d = sino.values.shape
    n_pad = max(64, 1 << int(math.ceil(math.log2(2 * d))))
    padded = np.zeros((a, n_pad), dtype=np.float64)
    padded[:, :d] = sino.values
    filt = _ramlak_filter(n_pad)
    filtered = np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * filt, axis=1))[:, :d]

    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    xs, ys = xx - c, yy - c
    det_idx = np.arange(d, dtype=np.float64)
    accum = np.zeros((size, size), dtype=np.float64)
    for i, theta in enumerate(sino.angles):
        t = xs * math.cos(theta) + ys * math.sin(theta) + (d - 1) / 2.0
        accum += np.interp(t.ravel(), det_idx, filtered[i], left=0.0, right=0.0).reshape(size, size)
    accum *= math.pi / (2.0 * a)
    return Image(np.maximum(accum, 0.0))


def _fill_metal(pixels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace metal pixels by the nearest non-metal value."""
    if not mask.any():
        return pixels.copy()
    iy, ix = ndimage.distance_transform_edt(mask, return_distances=False, return_indices=True)
    return pixels[iy, ix]


def corrupt(img: Image, params: CorruptionParams, n_angles: int,
            seed: int | None = None) -> tuple[Image, Image]:
    """Simulate metal corruption; returns (artifact_image, clean_image).

    The clean image is the FBP reconstruction of the anatomy with metal
    pixels replaced by nearby tissue; the artifact image is the FBP of a
    sinogram whose metal-crossing rays receive a quadratic beam-hardening
    term and Poisson noise at the configured photon count. With the
    channel fully disabled (strength 0, infinite photons, metal
    attenuation 1) the artifact image is exactly the plain reconstruction
    of the input. Both outputs are clipped to [0, 1].
    """
    if not img.has_metal:
        raise SandboxError("corrupt requires a nonempty metal mask")
    size = img.size
    mask = img.metal_mask

    tissue = _fill_metal(img.pixels, mask)
    clean = fbp(radon(Image(tissue), n_angles, size), size)
    clean_img = Image(np.clip(clean.pixels, 0.0, 1.0))

    ma = params.metal_attenuation
    if ma != 1.0:
        composite = img.pixels + (ma - 1.0) * mask
    else:
        composite = img.pixels
    sino = radon(Image(composite, mask), n_angles, size)

    corrupted = sino.values
    if params.beam_hardening_strength > 0 or params.noise_enabled:
        s_phys = corrupted * MU_PIXEL
        if params.beam_hardening_strength > 0:
            s_metal = _project(ma * mask.astype(np.float64), sino.angles, size) * MU_PIXEL
            s_phys = s_phys + params.beam_hardening_strength * s_metal ** 2
        if params.noise_enabled:
            i0 = params.poisson_photon_count
            rng = np.random.default_rng(seed)
            counts = rng.poisson(i0 * np.exp(-s_phys)).astype(np.float64)
            counts = np.clip(counts, 1.0, i0)  # photon starvation floor, no gain
            s_phys = np.log(i0) - np.log(counts)
        corrupted = s_phys / MU_PIXEL

    artifact = fbp(Sinogram(corrupted, sino.angles, sino.metal_trace), size)
    artifact_img = Image(np.clip(artifact.pixels, 0.0, 1.0), mask.copy())
    return artifact_img, clean_img


def inpaint_metal_trace(sino: Sinogram) -> Sinogram:
    """Replace metal-trace bins by 1-D linear interpolation along each row."""
    values = sino.values.copy()
    pos = np.arange(sino.n_dets, dtype=np.float64)
    for i in range(sino.n_angles):
        tr = sino.metal_trace[i]
        if not tr.any():
            continue
        if tr.all():
            raise SandboxError(f"metal trace covers entire row {i}; no interpolation anchors")
        values[i, tr] = np.interp(pos[tr], pos[~tr], values[i, ~tr])
    return Sinogram(values, sino.angles.copy(), sino.metal_trace.copy())


def li_mar(artifact_img: Image, mask: np.ndarray, n_angles: int) -> Image:
    """Linear-interpolation MAR baseline.

    Forward-projects the corrupted image, linearly interpolates across the
    metal trace per angle, reconstructs, and re-inserts the original metal
    pixels. An empty mask returns the input unchanged.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return Image(artifact_img.pixels.copy(), mask)
    size = artifact_img.size
    sino = radon(Image(artifact_img.pixels, mask), n_angles, size)
    inpainted = inpaint_metal_trace(sino)
    recon = fbp(inpainted, size)
    out = np.clip(recon.pixels, 0.0, 1.0)
    out[mask] = artifact_img.pixels[mask]
    return Image(out, mask)
