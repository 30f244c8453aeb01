"""Pseudo-thermal speckle-pair synthesis for a two-arm lensless imaging bench.

Geometry: a delta-correlated random-phase source disc illuminates two arms
split by an ideal beam splitter.  The reference arm propagates freely over
d1 + d2 to one detector; the test arm propagates d1, passes through a
transmissive sample, then propagates d2 to the other detector.  Both arms
see the *same* source realization, which is what correlates the two
recorded speckle patterns.

Propagation uses the paraxial free-space transfer function applied in the
frequency domain (the FFT equivalent of the quadratic-phase convolution
kernel), with zero-padding to suppress periodic wrap-around.  All field
arithmetic is double precision; energy and composition invariants in the
test suite rely on that.

Conventions:
  - grids are square, cell centers at ``(i - n//2) * pitch``
  - a sample of extent ``E`` covers the half-open window ``[-E/2, E/2)``
  - intensities are |E|^2 per cell; energy is ``sum(|E|^2) * pitch^2``
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .errors import ConfigError, GeometryError, NumericError

__all__ = [
    "OpticalConfig",
    "ComplexField",
    "SampleImage",
    "IntensityImage",
    "SpecklePair",
    "paper_bench_config",
    "ccd_bench_config",
    "make_source_field",
    "propagate",
    "apply_transmittance",
    "detect",
    "simulate_pair",
    "autocorrelation_g2",
    "g2_peak_stats",
    "coherence_width",
    "field_energy",
]


@dataclass(frozen=True)
class OpticalConfig:
    """Bench geometry and sampling for the speckle simulation.

    Distances and pitches are meters.  ``sim_pitch`` must divide
    ``detector_pitch`` exactly (integer binning) and the detector window
    must fit inside the simulation window.
    """

    wavelength: float
    d1: float
    d2: float
    source_diameter: float
    sim_grid_n: int
    sim_pitch: float
    detector_n: int
    detector_pitch: float
    pad_factor: int = 2

    def __post_init__(self):
        for name in ("wavelength", "d1", "d2", "source_diameter",
                     "sim_pitch", "detector_pitch"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be strictly positive")
        for name in ("sim_grid_n", "detector_n", "pad_factor"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive count")
        ratio = self.detector_pitch / self.sim_pitch
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ConfigError(
                "sim_pitch must divide detector_pitch exactly "
                f"(ratio {ratio:.6f})")
        if self.detector_n * self.detector_pitch > self.sim_grid_n * self.sim_pitch * (1 + 1e-12):
            raise ConfigError("detector window exceeds simulation window")

    @property
    def bin_ratio(self) -> int:
        return int(round(self.detector_pitch / self.sim_pitch))

    @property
    def total_distance(self) -> float:
        return self.d1 + self.d2


def paper_bench_config() -> OpticalConfig:
    """Default bench: 532 nm, d1 = 5 cm, d2 = 20.1 cm, 1 mm source disc,
    64x64 detector at 46.88 um.

    The simulation grid is 256x256 at half the detector pitch (6 mm window,
    twice the detector span) with pad_factor 1, i.e. exactly unitary
    periodic propagation.  At these distances light that leaves the window
    re-enters on the far side but lands only in the outer annulus, never on
    the central detector, so detected speckle is wrap-free while energy and
    composition invariants hold to machine precision for arbitrary fields.
    """
    return OpticalConfig(
        wavelength=532e-9,
        d1=0.05,
        d2=0.201,
        source_diameter=1e-3,
        sim_grid_n=256,
        sim_pitch=23.44e-6,
        detector_n=64,
        detector_pitch=46.88e-6,
        pad_factor=1,
    )


def ccd_bench_config() -> OpticalConfig:
    """Same bench sampled at the native 5.86 um camera pixel (512x512 grid,
    binned 8x8 to the 64x64 detector).  Used as the high-resolution
    cross-check route for speckle statistics.

    The fine pitch diffracts light into a much wider cone (Nyquist walk-off
    ~11.4 mm at the reference distance), so this route needs pad_factor 8
    for the detected region to stay free of periodic wrap.
    """
    return OpticalConfig(
        wavelength=532e-9,
        d1=0.05,
        d2=0.201,
        source_diameter=1e-3,
        sim_grid_n=512,
        sim_pitch=5.86e-6,
        detector_n=64,
        detector_pitch=46.88e-6,
        pad_factor=8,
    )


@dataclass
class ComplexField:
    """Sampled complex amplitude on a square grid with physical pitch (m)."""

    grid_n: int
    pitch: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != (self.grid_n, self.grid_n):
            raise ConfigError(
                f"field values must be {self.grid_n}x{self.grid_n}, "
                f"got {self.values.shape}")

    @property
    def window(self) -> float:
        return self.grid_n * self.pitch

    def coords(self) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        return (np.arange(self.grid_n) - self.grid_n // 2) * self.pitch


@dataclass
class SampleImage:
    """Transmittance mask in [0, 1] with physical extent ``n * pitch``."""

    n: int
    pitch: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.n, self.n):
            raise ConfigError(f"sample must be {self.n}x{self.n}")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("sample contains non-finite values")
        if self.values.min() < 0 or self.values.max() > 1:
            raise ConfigError("sample transmittance must lie in [0, 1]")

    @property
    def extent(self) -> float:
        return self.n * self.pitch

    @classmethod
    def from_array(cls, values: np.ndarray, extent: float = 1e-3) -> "SampleImage":
        values = np.asarray(values, dtype=np.float64)
        n = values.shape[0]
        return cls(n=n, pitch=extent / n, values=values)


@dataclass
class IntensityImage:
    """Nonnegative detected intensity on a square pixel grid."""

    n: int
    pitch: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.n, self.n):
            raise ConfigError(f"intensity image must be {self.n}x{self.n}")
        if not np.all(np.isfinite(self.values)):
            raise NumericError("intensity image contains non-finite values")
        if self.values.min() < 0:
            raise NumericError("intensity image contains negative values")


@dataclass
class SpecklePair:
    """Co-registered reference/test intensities from one source realization."""

    reference: IntensityImage
    test: IntensityImage
    seed: int
    sample_id: int = 0
    mode: Literal["static", "dynamic"] = "dynamic"

    def __post_init__(self):
        if (self.reference.n != self.test.n
                or self.reference.pitch != self.test.pitch):
            raise ConfigError("reference and test images must share geometry")


def field_energy(field: ComplexField) -> float:
    """Total energy ``sum |E|^2 * pitch^2``."""
    return float(np.sum(np.abs(field.values) ** 2) * field.pitch ** 2)


def make_source_field(config: OpticalConfig, seed: int) -> ComplexField:
    """One pseudo-thermal source realization: unit amplitude on the centered
    disc of ``source_diameter``, i.i.d. uniform phase per in-disc cell.

    The phase draw is keyed by ``seed`` alone, so identical (config, seed)
    yields a bit-identical field.
    """
    if config.source_diameter < config.sim_pitch:
        raise GeometryError(
            "source aperture smaller than one grid cell (degenerate source)")
    n = config.sim_grid_n
    x = (np.arange(n) - n // 2) * config.sim_pitch
    xx, yy = np.meshgrid(x, x, indexing="ij")
    mask = (xx ** 2 + yy ** 2) <= (config.source_diameter / 2) ** 2
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(n, n))
    values = np.where(mask, np.exp(1j * phase), 0.0 + 0.0j)
    return ComplexField(grid_n=n, pitch=config.sim_pitch, values=values)


def propagate(field: ComplexField, distance: float,
              config: OpticalConfig) -> ComplexField:
    """Paraxial free-space propagation over ``distance`` meters.

    Frequency-domain transfer function ``exp(ikz) * exp(-i pi lambda z f^2)``
    applied on a grid zero-padded by ``config.pad_factor``; the output is
    cropped back to the input grid.  Energy and the composition property
    ``prop(a) o prop(b) == prop(a+b)`` hold to high accuracy for fields whose
    propagated support stays inside the simulation window; light diffracted
    past the window is absorbed by the padding (not wrapped) and is lost,
    exactly as it would miss a finite detector.
    """
    if distance < 0:
        raise ConfigError("propagation distance must be >= 0")
    if distance == 0:
        return ComplexField(field.grid_n, field.pitch, field.values.copy())
    n = field.grid_n
    n_pad = n * config.pad_factor
    big = np.zeros((n_pad, n_pad), dtype=np.complex128)
    off = (n_pad - n) // 2
    big[off:off + n, off:off + n] = field.values

    f = np.fft.fftfreq(n_pad, d=field.pitch)
    fsq = f[:, None] ** 2 + f[None, :] ** 2
    lam = config.wavelength
    transfer = np.exp(2j * np.pi * distance / lam) * np.exp(
        -1j * np.pi * lam * distance * fsq)
    big = np.fft.ifft2(np.fft.fft2(big) * transfer)
    return ComplexField(n, field.pitch, big[off:off + n, off:off + n])


def apply_transmittance(field: ComplexField, sample: SampleImage) -> ComplexField:
    """Multiply the field by the sample transmittance, opaque outside.

    The sample is resampled onto the field grid by nearest neighbor: a field
    cell centered at x picks the sample pixel ``floor((x + extent/2)/pitch)``
    when x lies in the half-open window ``[-extent/2, extent/2)``, and 0
    otherwise.
    """
    extent = sample.extent
    if extent > field.window * (1 + 1e-12):
        raise GeometryError(
            f"sample extent {extent:.3e} m exceeds field window "
            f"{field.window:.3e} m")
    coords = field.coords()
    idx = np.floor((coords + extent / 2) / sample.pitch).astype(int)
    inside = (idx >= 0) & (idx < sample.n)
    idx_c = np.clip(idx, 0, sample.n - 1)
    trans = sample.values[np.ix_(idx_c, idx_c)]
    trans = trans * (inside[:, None] & inside[None, :])
    return ComplexField(field.grid_n, field.pitch, field.values * trans)


def detect(field: ComplexField, config: OpticalConfig) -> IntensityImage:
    """Record |E|^2 on the central detector window, mean-binned to
    ``detector_n`` pixels of ``detector_pitch``."""
    ratio = config.bin_ratio
    span = config.detector_n * ratio
    if span > field.grid_n:
        raise GeometryError("detector window exceeds simulation grid")
    off = (field.grid_n - span) // 2
    intensity = np.abs(field.values[off:off + span, off:off + span]) ** 2
    binned = intensity.reshape(
        config.detector_n, ratio, config.detector_n, ratio).mean(axis=(1, 3))
    return IntensityImage(config.detector_n, config.detector_pitch, binned)


def simulate_pair(sample: SampleImage, config: OpticalConfig, seed: int,
                  sample_id: int = 0,
                  mode: Literal["static", "dynamic"] = "dynamic") -> SpecklePair:
    """Synthesize one conjugate speckle pair from a single source draw.

    Reference arm: source propagated d1 + d2.  Test arm: source propagated
    d1, masked by the sample, propagated d2.  Both arms share the identical
    source realization, so the function is pure in (sample, config, seed).
    """
    source = make_source_field(config, seed)
    reference = detect(propagate(source, config.total_distance, config), config)
    at_sample = propagate(source, config.d1, config)
    behind = apply_transmittance(at_sample, sample)
    test = detect(propagate(behind, config.d2, config), config)
    return SpecklePair(reference=reference, test=test, seed=seed,
                       sample_id=sample_id, mode=mode)


def autocorrelation_g2(image: IntensityImage) -> np.ndarray:
    """Normalized intensity autocorrelation map g2(dy, dx).

    ``g2 = <I(x) I(x+d)>_x / <I>^2`` averaged over all in-frame pixel pairs
    for each displacement; output is (2n-1) x (2n-1) with zero displacement
    at the center.  Symmetric under d -> -d by construction.
    """
    v = image.values
    mean = float(v.mean())
    if mean <= 0:
        raise NumericError("g2 undefined for zero-mean image")
    n = image.n
    m = 2 * n
    spec = np.fft.rfft2(v, s=(m, m))
    raw = np.fft.irfft2(spec * np.conj(spec), s=(m, m))
    ones = np.fft.rfft2(np.ones_like(v), s=(m, m))
    counts = np.rint(np.fft.irfft2(ones * np.conj(ones), s=(m, m)))
    shifts = np.arange(-(n - 1), n) % m
    grid = np.ix_(shifts, shifts)
    return (raw[grid] / counts[grid]) / mean ** 2


def g2_peak_stats(g2_map: np.ndarray) -> tuple[float, float]:
    """Peak height and full width of the central correlation peak.

    Returns ``(g2(0), fwhm_pixels)`` where the width is measured at
    ``(g2(0) + 1) / 2`` (halfway between the peak and the uncorrelated
    baseline of 1), linearly interpolated along the central row and column
    and averaged.
    """
    c = g2_map.shape[0] // 2
    g0 = float(g2_map[c, c])
    level = (g0 + 1.0) / 2.0

    def half_extent(profile: np.ndarray) -> float:
        # distance from center to the interpolated crossing of `level`
        for j in range(c, profile.size - 1):
            if profile[j] >= level > profile[j + 1]:
                frac = (profile[j] - level) / (profile[j] - profile[j + 1])
                return (j - c) + frac
        raise NumericError("correlation peak does not cross half level")

    widths = []
    for profile in (g2_map[c, :], g2_map[:, c]):
        widths.append(half_extent(profile) + half_extent(profile[::-1]))
    return g0, float(np.mean(widths))


def coherence_width(config: OpticalConfig, distance: float | None = None) -> float:
    """Transverse speckle-grain scale ``lambda * z / source_diameter`` (m)
    at the given distance (defaults to the reference-arm distance)."""
    z = config.total_distance if distance is None else distance
    return config.wavelength * z / config.source_diameter
