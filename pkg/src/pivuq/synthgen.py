"""Deterministic synthetic particle-image scenes with analytic ground-truth flows.

Particles are rendered as Gaussian blobs at seeded random positions; frame B
renders the same particles displaced by the analytic flow evaluated at each
particle center. Degradations (additive Gaussian noise, Gaussian blur) mimic
sensor noise and motion blur.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError
from .flowdata import FlowField, ImagePair

# Global cap on analytic displacement magnitude, px/frame.
MAX_DISPLACEMENT = 10.0

# Particle positions are sampled over the image extended by this margin so
# particles can enter and leave the frame under displacement.
RENDER_PAD = 12.0

FLOW_KINDS = ("uniform", "solid_rotation", "shear", "lamb_oseen")


def _rng(seed: int) -> np.random.Generator:
    # Philox: counter-based, published constants, explicit seeding.
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


@dataclass(frozen=True)
class SceneSpec:
    """Geometry, seeding density and illumination of one synthetic scene."""

    width: int
    height: int
    particle_density: float = 0.03  # particles per px^2
    particle_diameter: float = 2.5  # px
    peak_intensity: float = 220.0
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ParameterError(f"scene dimensions must be positive, got {self.width}x{self.height}")
        if not 0.0 < self.particle_density <= 0.2:
            raise ParameterError(f"particle_density {self.particle_density} outside (0, 0.2]")
        if not 1.0 <= self.particle_diameter <= 6.0:
            raise ParameterError(f"particle_diameter {self.particle_diameter} outside [1, 6]")
        if not 0.0 < self.peak_intensity <= 255.0:
            raise ParameterError(f"peak_intensity {self.peak_intensity} outside (0, 255]")


@dataclass(frozen=True)
class AnalyticFlow:
    """Closed-form displacement field, evaluable at any real (x, y).

    kinds: uniform(u0, v0); solid_rotation(omega, center);
    shear(rate, about center y); lamb_oseen(circulation, core_radius, center).
    """

    kind: str
    u0: float = 0.0
    v0: float = 0.0
    omega: float = 0.0  # rad/frame
    rate: float = 0.0  # px/frame per px
    circulation: float = 0.0  # px^2/frame
    core_radius: float = 4.0  # px
    center: tuple[float, float] = (0.0, 0.0)  # (x, y)
    max_displacement: float = MAX_DISPLACEMENT

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise ParameterError(f"unknown flow kind {self.kind!r}, expected one of {FLOW_KINDS}")
        if not 0.0 < self.max_displacement <= MAX_DISPLACEMENT:
            raise ParameterError(
                f"max_displacement {self.max_displacement} outside (0, {MAX_DISPLACEMENT}]"
            )
        if self.core_radius <= 0.0:
            raise ParameterError("core_radius must be positive")

    def evaluate(self, x, y):
        """Vectorized displacement (u, v) at positions (x, y)."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        cx, cy = self.center
        if self.kind == "uniform":
            return np.full_like(x, self.u0), np.full_like(y, self.v0)
        if self.kind == "solid_rotation":
            return -self.omega * (y - cy), self.omega * (x - cx)
        if self.kind == "shear":
            return self.rate * (y - cy), np.zeros_like(y)
        # lamb_oseen: tangential speed G/(2 pi r) (1 - exp(-r^2/rc^2)),
        # finite limit G r / (2 pi rc^2) at the core center.
        dx = x - cx
        dy = y - cy
        r2 = dx**2 + dy**2
        rc2 = self.core_radius**2
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(
                r2 > 1e-12,
                self.circulation / (2.0 * np.pi * r2) * (1.0 - np.exp(-r2 / rc2)),
                self.circulation / (2.0 * np.pi * rc2),
            )
        return -g * dy, g * dx


def uniform_flow(u0: float, v0: float, **kw) -> AnalyticFlow:
    return AnalyticFlow(kind="uniform", u0=u0, v0=v0, **kw)


def solid_rotation_flow(omega: float, center: tuple[float, float], **kw) -> AnalyticFlow:
    return AnalyticFlow(kind="solid_rotation", omega=omega, center=center, **kw)


def shear_flow(rate: float, center: tuple[float, float], **kw) -> AnalyticFlow:
    return AnalyticFlow(kind="shear", rate=rate, center=center, **kw)


def lamb_oseen_flow(circulation: float, core_radius: float, center: tuple[float, float], **kw) -> AnalyticFlow:
    return AnalyticFlow(
        kind="lamb_oseen", circulation=circulation, core_radius=core_radius, center=center, **kw
    )


def sample_flow(flow: AnalyticFlow, width: int, height: int) -> FlowField:
    """Sample the analytic flow at every pixel center of a width x height grid."""
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    u, v = flow.evaluate(xs, ys)
    return FlowField(u=u, v=v)


def particle_positions(scene: SceneSpec) -> np.ndarray:
    """Seeded particle centers, shape (N, 2) as (x, y), over the padded domain."""
    w_ext = scene.width + 2.0 * RENDER_PAD
    h_ext = scene.height + 2.0 * RENDER_PAD
    count = int(round(scene.particle_density * w_ext * h_ext))
    unit = _rng(scene.seed).random((count, 2))
    positions = np.empty_like(unit)
    positions[:, 0] = unit[:, 0] * w_ext - RENDER_PAD
    positions[:, 1] = unit[:, 1] * h_ext - RENDER_PAD
    return positions


def render_particles(positions: np.ndarray, scene: SceneSpec) -> np.ndarray:
    """Render Gaussian blobs of sigma = diameter/4 at the given centers.

    Summation runs in particle order (fixed-order reduction) so repeated
    renders are bit-identical.
    """
    sigma = scene.particle_diameter / 4.0
    rcut = int(math.ceil(5.0 * sigma))  # blob support; tails below ~4e-6 of peak
    img = np.zeros((scene.height, scene.width), dtype=np.float64)
    inv_two_s2 = 1.0 / (2.0 * sigma * sigma)
    for px, py in positions:
        x0 = max(int(math.floor(px)) - rcut, 0)
        x1 = min(int(math.floor(px)) + rcut + 1, scene.width)
        y0 = max(int(math.floor(py)) - rcut, 0)
        y1 = min(int(math.floor(py)) + rcut + 1, scene.height)
        if x0 >= x1 or y0 >= y1:
            continue
        gx = np.exp(-((np.arange(x0, x1) - px) ** 2) * inv_two_s2)
        gy = np.exp(-((np.arange(y0, y1) - py) ** 2) * inv_two_s2)
        img[y0:y1, x0:x1] += scene.peak_intensity * np.outer(gy, gx)
    return np.clip(img, 0.0, 255.0)


def generate_pair(scene: SceneSpec, flow: AnalyticFlow) -> tuple[ImagePair, FlowField]:
    """Render frame A, advect particles by the flow, render frame B.

    Returns the pair and the ground-truth flow sampled at pixel centers.
    Fully deterministic given (scene.seed, scene, flow).
    """
    gt = sample_flow(flow, scene.width, scene.height)
    positions = particle_positions(scene)
    pu, pv = flow.evaluate(positions[:, 0], positions[:, 1])
    max_mag = 0.0
    for uu, vv in ((gt.u, gt.v), (pu, pv)):
        mag = np.sqrt(uu**2 + vv**2)
        if mag.size:
            max_mag = max(max_mag, float(mag.max()))
    if max_mag > flow.max_displacement:
        raise ParameterError(
            f"flow magnitude {max_mag:.3f} px exceeds declared bound {flow.max_displacement} px"
        )
    frame_a = render_particles(positions, scene)
    displaced = positions + np.stack([pu, pv], axis=1)
    frame_b = render_particles(displaced, scene)
    return ImagePair(frame_a=frame_a, frame_b=frame_b), gt


# ---------------------------------------------------------------------------
# Degradations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DegradationSpec:
    """Additive Gaussian noise variance and Gaussian blur sigma."""

    noise_var: float = 0.0  # intensity^2 on the 0-255 scale
    blur_sigma: float = 0.0  # px
    noise_seed: int = 0

    def __post_init__(self):
        if self.noise_var < 0.0:
            raise ParameterError(f"noise_var must be >= 0, got {self.noise_var}")
        if self.blur_sigma < 0.0:
            raise ParameterError(f"blur_sigma must be >= 0, got {self.blur_sigma}")


def add_noise(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise of variance noise_var, then clamp.

    Clamping to [0, 255] mimics sensor saturation. Deterministic given
    noise_seed; noise_var = 0 returns an unchanged copy.
    """
    img = np.asarray(img, dtype=np.float64)
    if spec.noise_var == 0.0:
        return img.copy()
    noise = _rng(spec.noise_seed).normal(0.0, math.sqrt(spec.noise_var), img.shape)
    return np.clip(img + noise, 0.0, 255.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel with radius ceil(3*sigma)."""
    if sigma <= 0.0:
        return np.ones(1, dtype=np.float64)
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve1d_reflect(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    if radius == 0:
        return arr.copy()
    if radius >= arr.shape[axis]:
        raise ParameterError(
            f"blur radius {radius} px does not fit image extent {arr.shape[axis]} px"
        )
    pad = [(radius, radius) if a == axis else (0, 0) for a in range(arr.ndim)]
    padded = np.pad(arr, pad, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=axis)
    return np.tensordot(windows, kernel, axes=([-1], [0]))


def add_blur(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; sigma = 0 is the identity."""
    img = np.asarray(img, dtype=np.float64)
    if spec.blur_sigma == 0.0:
        return img.copy()
    kernel = gaussian_kernel(spec.blur_sigma)
    out = _convolve1d_reflect(img, kernel, axis=0)
    out = _convolve1d_reflect(out, kernel, axis=1)
    return np.clip(out, 0.0, 255.0)


def degrade_pair(pair: ImagePair, spec: DegradationSpec) -> ImagePair:
    """Blur then noise, applied to both frames with independent noise streams."""
    seed_a, seed_b = np.random.SeedSequence(spec.noise_seed).generate_state(2, dtype=np.uint64)
    frames = []
    for frame, seed in ((pair.frame_a, seed_a), (pair.frame_b, seed_b)):
        out = add_blur(frame, spec)
        out = add_noise(out, replace(spec, noise_seed=int(seed)))
        frames.append(out)
    return ImagePair(frame_a=frames[0], frame_b=frames[1])
