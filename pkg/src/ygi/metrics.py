"""Image-quality metrics and per-method comparison reports.

SSIM here is the single-window (whole image) form: one mean, variance and
covariance per image, stabilizers C1 = (0.01 MAX)^2 and C2 = (0.03 MAX)^2
with MAX = 1 for images in [0, 1].  PSNR is 10 log10(MAX^2 / MSE) and is
reported as infinite (not an overflow) when the images match exactly.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = ["ssim", "psnr", "compare_methods", "MetricReport"]

_C1 = (0.01 * 1.0) ** 2
_C2 = (0.03 * 1.0) ** 2


def _as_pair(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ConfigError(f"shape mismatch {u.shape} vs {v.shape}")
    return u, v


def ssim(u, v) -> float:
    """Whole-image structural similarity of two [0, 1] images."""
    u, v = _as_pair(u, v)
    mu, mv = u.mean(), v.mean()
    vu, vv = u.var(), v.var()
    cov = ((u - mu) * (v - mv)).mean()
    return float((2 * mu * mv + _C1) * (2 * cov + _C2)
                 / ((mu ** 2 + mv ** 2 + _C1) * (vu + vv + _C2)))


def psnr(u, v) -> float:
    """Peak signal-to-noise ratio in dB with MAX = 1; inf when u == v."""
    u, v = _as_pair(u, v)
    mse = float(((u - v) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return float(10.0 * np.log10(1.0 / mse))


@dataclass
class MetricReport:
    """Per-sample SSIM/PSNR columns for each reconstruction method."""

    methods: list[str]
    ssim_columns: dict[str, list[float]]
    psnr_columns: dict[str, list[float]]
    labels: list[str] = field(default_factory=list)

    def mean_ssim(self, method: str) -> float:
        return float(np.mean(self.ssim_columns[method]))

    def mean_psnr(self, method: str) -> float:
        col = self.psnr_columns[method]
        return math.inf if any(math.isinf(x) for x in col) else float(np.mean(col))

    def to_text_table(self) -> str:
        out = io.StringIO()
        head = ["sample"]
        for m in self.methods:
            head += [f"SSIM[{m}]", f"PSNR[{m}]"]
        widths = [max(10, len(h) + 2) for h in head]
        line = "".join(h.rjust(w) for h, w in zip(head, widths))
        out.write(line + "\n" + "-" * len(line) + "\n")
        count = len(next(iter(self.ssim_columns.values())))
        for i in range(count):
            label = self.labels[i] if self.labels else str(i)
            row = [label]
            for m in self.methods:
                row.append(f"{self.ssim_columns[m][i]:.4f}")
                row.append(f"{self.psnr_columns[m][i]:.4f}")
            out.write("".join(c.rjust(w) for c, w in zip(row, widths)) + "\n")
        row = ["mean"]
        for m in self.methods:
            row.append(f"{self.mean_ssim(m):.4f}")
            mp = self.mean_psnr(m)
            row.append("inf" if math.isinf(mp) else f"{mp:.4f}")
        out.write("-" * len(line) + "\n")
        out.write("".join(c.rjust(w) for c, w in zip(row, widths)) + "\n")
        return out.getvalue()

    def to_csv(self) -> str:
        out = io.StringIO()
        head = ["sample"]
        for m in self.methods:
            head += [f"ssim_{m}", f"psnr_{m}"]
        out.write(",".join(head) + "\n")
        count = len(next(iter(self.ssim_columns.values())))
        for i in range(count):
            label = self.labels[i] if self.labels else str(i)
            row = [label]
            for m in self.methods:
                row.append(repr(self.ssim_columns[m][i]))
                row.append(repr(self.psnr_columns[m][i]))
            out.write(",".join(row) + "\n")
        return out.getvalue()


def compare_methods(targets, outputs_per_method: dict[str, list],
                    labels: list[str] | None = None) -> MetricReport:
    """Score each method's outputs against the aligned targets."""
    methods = list(outputs_per_method)
    for m in methods:
        if len(outputs_per_method[m]) != len(targets):
            raise ConfigError(
                f"method {m!r} has {len(outputs_per_method[m])} outputs for "
                f"{len(targets)} targets")
    ssim_cols = {m: [ssim(o, t) for o, t in zip(outputs_per_method[m], targets)]
                 for m in methods}
    psnr_cols = {m: [psnr(o, t) for o, t in zip(outputs_per_method[m], targets)]
                 for m in methods}
    return MetricReport(methods=methods, ssim_columns=ssim_cols,
                        psnr_columns=psnr_cols, labels=labels or [])
