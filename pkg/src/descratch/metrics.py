"""Full-reference quality metrics: PSNR, SSIM, and report aggregation.

Both metrics operate on 8-bit-quantized pixel values (configurable bit
depth). SSIM uses a uniform sliding window (default 8x8, stride 1) with
population statistics, per channel, then averages; the window and the
stabilizing constants are echoed in every report so numbers stay
comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PSNR_INF = math.inf


def _quantize(img, d: int):
    peak = 2 ** d - 1
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * peak)


def psnr(a, b, d: int = 8) -> float:
    """Peak signal-to-noise ratio in dB over integer pixel values.

    Inputs are float images in [0, 1] of identical shape; identical
    images return the +inf sentinel.
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if d < 1:
        raise ValueError("bit depth must be >= 1")
    qa, qb = _quantize(a, d), _quantize(b, d)
    sq = float(((qa - qb) ** 2).sum())
    if sq == 0.0:
        return PSNR_INF
    peak = 2 ** d - 1
    return 10.0 * math.log10(peak * peak * qa.size / sq)


def ssim(a, b, window: int = 8, k1: float = 0.01, k2: float = 0.03,
         d: int = 8) -> float:
    """Mean structural similarity over sliding windows, per channel.

    Population statistics, uniform weighting, no padding. Identical
    images give exactly 1.0.
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    h, w = a.shape[-2], a.shape[-1]
    if window > min(h, w):
        raise ValueError(f"ssim window {window} exceeds image dims {h}x{w}")
    qa, qb = _quantize(a, d), _quantize(b, d)
    if qa.ndim == 2:
        qa, qb = qa[None], qb[None]
    else:
        qa = qa.reshape(-1, h, w)
        qb = qb.reshape(-1, h, w)
    peak = 2 ** d - 1
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    vals = [
        _ssim_map(qa[c], qb[c], window, c1, c2).mean() for c in range(qa.shape[0])
    ]
    return float(np.mean(vals))


def _window_means(x, window):
    win = np.lib.stride_tricks.sliding_window_view(x, (window, window))
    return win.mean(axis=(-2, -1))


def _ssim_map(x, y, window, c1, c2):
    mx = _window_means(x, window)
    my = _window_means(y, window)
    exx = _window_means(x * x, window)
    eyy = _window_means(y * y, window)
    exy = _window_means(x * y, window)
    vx = exx - mx * mx
    vy = eyy - my * my
    cxy = exy - mx * my
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1)
                                                    * (vx + vy + c2))


@dataclass
class QualityReport:
    """Per-image PSNR/SSIM plus aggregate means and the metric config."""

    entries: list = field(default_factory=list)  # (id, psnr, ssim)
    bit_depth: int = 8
    window: int = 8
    k1: float = 0.01
    k2: float = 0.03

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([e[1] for e in self.entries])) if self.entries else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([e[2] for e in self.entries])) if self.entries else math.nan

    @property
    def psnr_inf_count(self) -> int:
        return sum(1 for e in self.entries if math.isinf(e[1]))

    def to_tsv(self) -> str:
        lines = ["id\tpsnr_db\tssim\n"]
        for pid, p, s in self.entries:
            lines.append(f"{pid}\t{_fmt_db(p)}\t{s!r}\n")
        lines.append(f"MEAN\t{_fmt_db(self.mean_psnr)}\t{self.mean_ssim!r}\n")
        lines.append(f"# bit_depth={self.bit_depth} window={self.window} "
                     f"k1={self.k1} k2={self.k2}\n")
        return "".join(lines)

    def to_table(self) -> str:
        rows = [f"{'id':<24}{'PSNR (dB)':>12}{'SSIM':>10}"]
        for pid, p, s in self.entries:
            rows.append(f"{pid:<24}{_fmt_db(p, 2):>12}{s:>10.4f}")
        rows.append(f"{'mean':<24}{_fmt_db(self.mean_psnr, 2):>12}"
                    f"{self.mean_ssim:>10.4f}")
        return "\n".join(rows)


def _fmt_db(v, prec=None):
    if math.isinf(v):
        return "inf"
    return f"{v:.{prec}f}" if prec is not None else repr(v)


def evaluate(restored: dict, reference: dict, bit_depth: int = 8,
             window: int = 8) -> QualityReport:
    """Score restored images against references with matching ids."""
    missing = sorted(set(restored) ^ set(reference))
    if missing:
        raise KeyError(f"ids without a counterpart: {missing}")
    report = QualityReport(bit_depth=bit_depth, window=window)
    for pid in sorted(restored):
        report.entries.append((
            pid,
            psnr(restored[pid], reference[pid], d=bit_depth),
            ssim(restored[pid], reference[pid], window=window, d=bit_depth),
        ))
    return report
