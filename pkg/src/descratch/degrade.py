"""Synthetic dust/scratch artifact engine and median filtering.

Images are float arrays in [0, 1], channel-first: (c, h, w) for single
images, (n, c, h, w) inside batches. Artifact masks are (h, w) coverage
maps in [0, 1]; a mask value of 0 means the pixel is bit-identical to
the clean source.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .tensorops import Tensor

SEVERITIES = ("light", "medium", "heavy")

# (min specs, max specs) per severity, inclusive
SPEC_COUNTS = {"light": (1, 5), "medium": (4, 12), "heavy": (10, 30)}

# fraction of sampled artifacts that are scratches / vertical scratches
SCRATCH_PROB = 0.4
VERTICAL_PROB = 0.6


def median_filter(image, k: int):
    """Per-channel k x k median with reflected (symmetric) borders.

    Accepts (c, h, w) / (n, c, h, w) arrays or a Tensor; returns the
    same kind.
    """
    if k % 2 == 0 or k < 1:
        raise ValueError(f"median kernel must be odd and positive, got {k}")
    if isinstance(image, Tensor):
        return Tensor(median_filter(image.data, k))
    arr = np.asarray(image)
    h, w = arr.shape[-2], arr.shape[-1]
    if k > min(h, w):
        raise ValueError(f"median kernel {k} exceeds image dims {h}x{w}")
    size = (1,) * (arr.ndim - 2) + (k, k)
    return ndimage.median_filter(arr, size=size, mode="reflect")


@dataclass
class DegradationSpec:
    """One parametric dust speck or scratch.

    For dust: (x0, y0) is the center and size the radius in px; the
    falloff softness is derived from the seed so the line-oriented text
    format (which does not carry softness) round-trips exactly. For
    scratches: (x0, y0)-(x1, y1) are the endpoints and size the width.
    intensity in [-1, 1] sets the artifact color (dark to light).
    """

    kind: str
    x0: float
    y0: float
    size: float
    intensity: float
    opacity: float
    seed: int
    x1: float | None = None
    y1: float | None = None
    softness: float = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("dust", "scratch"):
            raise ValueError(f"unknown artifact kind {self.kind!r}")
        if self.kind == "dust" and self.size < 0.5:
            raise ValueError(f"dust radius must be >= 0.5 px, got {self.size}")
        if self.kind == "scratch":
            if self.size < 1.0:
                raise ValueError(f"scratch width must be >= 1 px, got {self.size}")
            if self.x1 is None or self.y1 is None:
                raise ValueError("scratch needs both endpoints")
            if self.x0 == self.x1 and self.y0 == self.y1:
                raise ValueError("zero-length scratch rejected")
        if not -1.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity must be in [-1, 1], got {self.intensity}")
        if not 0.0 < self.opacity <= 1.0:
            raise ValueError(f"opacity must be in (0, 1], got {self.opacity}")
        if self.softness is None:
            self.softness = derived_softness(self.seed)
        if not 0.0 <= self.softness <= 1.0:
            raise ValueError(f"softness must be in [0, 1], got {self.softness}")

    @property
    def color(self) -> float:
        # light artifacts pull toward white, dark toward black
        return float(np.clip(0.5 + 0.5 * self.intensity, 0.0, 1.0))

    def to_line(self) -> str:
        """`kind x0 y0 [x1 y1] size intensity opacity seed`."""
        fields = [self.kind, _fmt(self.x0), _fmt(self.y0)]
        if self.kind == "scratch":
            fields += [_fmt(self.x1), _fmt(self.y1)]
        fields += [_fmt(self.size), _fmt(self.intensity), _fmt(self.opacity),
                   str(self.seed)]
        return " ".join(fields)

    @classmethod
    def from_line(cls, line: str) -> "DegradationSpec":
        tokens = line.split()
        if not tokens:
            raise ValueError("empty spec line")
        kind = tokens[0]
        if kind == "dust" and len(tokens) == 7:
            x0, y0, size, inten, op = map(float, tokens[1:6])
            return cls(kind, x0, y0, size, inten, op, int(tokens[6]))
        if kind == "scratch" and len(tokens) == 9:
            x0, y0, x1, y1, size, inten, op = map(float, tokens[1:8])
            return cls(kind, x0, y0, size, inten, op, int(tokens[8]), x1=x1, y1=y1)
        raise ValueError(f"malformed spec line: {line!r}")


def _fmt(v: float) -> str:
    # repr round-trips doubles exactly
    return repr(float(v))


def derived_softness(seed: int) -> float:
    return float(np.random.default_rng(seed ^ 0x5F0F7E55).uniform(0.0, 0.8))


def specs_to_text(specs) -> str:
    return "".join(s.to_line() + "\n" for s in specs)


def specs_from_text(text: str):
    return [DegradationSpec.from_line(ln) for ln in text.splitlines() if ln.strip()]


def render_artifact(spec: DegradationSpec, dims) -> np.ndarray:
    """Rasterize one spec to an (h, w) coverage map in [0, spec.opacity]."""
    h, w = dims
    if h < 1 or w < 1:
        raise ValueError(f"non-positive dims {dims}")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if spec.kind == "dust":
        d = np.hypot(xx - spec.x0, yy - spec.y0)
        r = spec.size
        r_in = r * (1.0 - spec.softness)
        if r > r_in:
            alpha = np.clip((r - d) / (r - r_in), 0.0, 1.0)
        else:
            alpha = (d <= r).astype(np.float64)
    else:
        d = _segment_distance(xx, yy, spec.x0, spec.y0, spec.x1, spec.y1)
        alpha = np.clip(spec.size / 2.0 + 0.5 - d, 0.0, 1.0)
    return spec.opacity * alpha


def _segment_distance(xx, yy, x0, y0, x1, y1):
    dx, dy = x1 - x0, y1 - y0
    length2 = dx * dx + dy * dy
    t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / length2, 0.0, 1.0)
    return np.hypot(xx - (x0 + t * dx), yy - (y0 + t * dy))


def composite(clean: np.ndarray, specs, pair_id: str = ""):
    """Overlay specs (in order) on a clean (c, h, w) image.

    Returns an ImagePair whose mask is the elementwise max of all
    coverage maps. Pixels with zero total coverage stay bit-identical.
    """
    from .data import ImagePair  # ImagePair lives with the dataset code

    clean = np.asarray(clean, dtype=np.float64)
    c, h, w = clean.shape
    corrupted = clean.copy()
    mask = np.zeros((h, w), dtype=np.float64)
    for spec in specs:
        alpha = render_artifact(spec, (h, w))
        touched = alpha > 0
        a = alpha[touched]
        corrupted[:, touched] = np.clip(
            corrupted[:, touched] * (1.0 - a) + spec.color * a, 0.0, 1.0)
        mask = np.maximum(mask, alpha)
    return ImagePair(clean=clean, corrupted=corrupted, mask=mask, id=pair_id)


def sample_specs(rng_seed: int, image_dims, severity: str = "medium"):
    """Draw a seed-deterministic list of specs for one image.

    Scratches are sampled with elevated probability of being near
    vertical; all geometry lands inside the image bounds.
    """
    if severity not in SPEC_COUNTS:
        raise ValueError(f"severity must be one of {SEVERITIES}, got {severity!r}")
    h, w = image_dims
    rng = np.random.default_rng(rng_seed)
    lo, hi = SPEC_COUNTS[severity]
    count = int(rng.integers(lo, hi + 1))
    max_dust_r = max(1.0, min(h, w) / 16.0)
    specs = []
    for _ in range(count):
        child_seed = int(rng.integers(0, 2**31 - 1))
        intensity = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.4, 1.0))
        opacity = float(rng.uniform(0.5, 1.0))
        if rng.random() < SCRATCH_PROB and min(h, w) > 8:
            width = float(rng.uniform(1.0, 3.0))
            x0 = float(rng.uniform(1, w - 2))
            y0 = float(rng.uniform(1, h - 2))
            if rng.random() < VERTICAL_PROB:
                x1 = float(np.clip(x0 + rng.uniform(-2, 2), 0, w - 1))
                y1 = float(np.clip(y0 + rng.choice([-1.0, 1.0]) * rng.uniform(h / 4, h), 0, h - 1))
            else:
                ang = float(rng.uniform(0, 2 * np.pi))
                ln = float(rng.uniform(min(h, w) / 4, min(h, w)))
                x1 = float(np.clip(x0 + ln * np.cos(ang), 0, w - 1))
                y1 = float(np.clip(y0 + ln * np.sin(ang), 0, h - 1))
            if x1 == x0 and y1 == y0:
                y1 = min(h - 1.0, y0 + 1.0)
            specs.append(DegradationSpec("scratch", x0, y0, width, intensity,
                                         opacity, child_seed, x1=x1, y1=y1))
        else:
            radius = float(rng.uniform(0.8, max_dust_r))
            x0 = float(rng.uniform(0, w - 1))
            y0 = float(rng.uniform(0, h - 1))
            specs.append(DegradationSpec("dust", x0, y0, max(0.5, radius),
                                         intensity, opacity, child_seed))
    return specs
