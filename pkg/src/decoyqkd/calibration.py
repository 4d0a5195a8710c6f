"""Active phase-compensation: scan, fringe fit and working points.

Before key exchange, the receiver scans his phase modulator against
strong reference pulses and watches the detector counting rate trace
out an interference fringe. Fitting that fringe yields the fringe zero
(the constructive-interference phase) and the visibility; the four
working points are the fringe zero plus multiples of pi/2.

At scan intensities the click probability saturates, so the fit model
is the interferometric click law 1 - exp(-k*(1 + v*cos(phi - phi0)))
rather than a bare cosine; a first-harmonic projection of the
log-inverted counts seeds a deterministic local refinement, and the
residuals are minimized in the count-fraction domain. Dark counts are
negligible against the strong-pulse click rates and are not fitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.special import i0 as bessel_i0

from .link import LinkModel, click_probability, transmittance

__all__ = [
    "ScanCurve",
    "FringeFit",
    "InsufficientScanRangeError",
    "scan_intensity_for_peak",
    "simulate_scan",
    "fit_fringe",
    "working_points",
    "scan_overhead",
    "write_scan_curve",
    "read_scan_curve",
]

SATURATION_PEAK = 0.999
TWO_PI = 2.0 * math.pi


class InsufficientScanRangeError(ValueError):
    """The scan grid does not cover a full fringe period."""


def _wrap_phase(value: float) -> float:
    """Map to [0, 2*pi); float rounding can make `x % 2*pi` hit 2*pi exactly."""
    wrapped = value % TWO_PI
    return 0.0 if wrapped >= TWO_PI else wrapped


@dataclass(frozen=True)
class ScanCurve:
    """Counting-rate trace of a phase scan.

    offsets must be strictly increasing and span at least 2*pi.
    counts holds detected counts per setting (floats are accepted so
    noiseless expected curves can be represented exactly). saturated
    flags scans whose peak click probability reached the saturation
    threshold; their fringe contrast is unreliable.
    """

    offsets: np.ndarray
    counts: np.ndarray
    pulses_per_point: int
    saturated: bool = False

    def __post_init__(self) -> None:
        offsets = np.asarray(self.offsets, dtype=float)
        counts = np.asarray(self.counts, dtype=float)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "counts", counts)
        if offsets.ndim != 1 or offsets.size != counts.size:
            raise ValueError("offsets and counts must be 1-d arrays of equal length")
        if offsets.size > 1 and not np.all(np.diff(offsets) > 0):
            raise ValueError("scan offsets must be strictly increasing")
        if self.pulses_per_point < 1:
            raise ValueError(f"pulses_per_point={self.pulses_per_point} must be >= 1")
        if np.any(counts < 0) or np.any(counts > self.pulses_per_point):
            raise ValueError("counts must lie in [0, pulses_per_point]")

    @property
    def span(self) -> float:
        return float(self.offsets[-1] - self.offsets[0]) if self.offsets.size else 0.0


@dataclass(frozen=True)
class FringeFit:
    """Fitted fringe: mean click probability, visibility, zero phase, rms residual."""

    amplitude: float
    visibility_est: float
    phase_zero: float
    residual: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.visibility_est <= 1.0:
            raise ValueError(f"visibility_est={self.visibility_est} must be in [0, 1]")
        if not 0.0 <= self.phase_zero < TWO_PI:
            raise ValueError(f"phase_zero={self.phase_zero} must be normalized to [0, 2*pi)")


def scan_intensity_for_peak(model: LinkModel, peak: float = 0.5,
                            length_km: float = 0.0) -> float:
    """Reference-pulse mean photon number giving the requested peak click probability."""
    if not 0.0 < peak < 1.0:
        raise ValueError(f"peak={peak} must be in (0, 1)")
    eta = transmittance(model, length_km)
    if eta <= 0:
        raise ValueError("link transmittance is zero; no scan intensity exists")
    residual = (1.0 - peak) / (1.0 - model.y0)
    if residual >= 1.0:
        raise ValueError(f"dark counts alone exceed the requested peak {peak}")
    return -math.log(residual) / (eta * (1.0 + model.visibility) / 2.0)


def simulate_scan(model: LinkModel, strong_mean_photons: float, offsets: Sequence[float],
                  pulses_per_point: int, seed: int = 0, true_phase_zero: float = 0.0,
                  length_km: float = 0.0, noiseless: bool = False) -> ScanCurve:
    """Scan the fringe: binomial counts per offset against the click model.

    Each point draws from its own sub-stream SeedSequence((seed, i)),
    so points may be sampled concurrently without changing the result.
    noiseless replaces sampling with exact expected counts. A peak
    click probability at or above the saturation threshold only flags
    the curve; the counts are still produced.
    """
    grid = np.asarray(list(offsets), dtype=float)
    if grid.size < 2 or grid[-1] - grid[0] < TWO_PI - 1e-9:
        raise InsufficientScanRangeError(
            f"scan must span >= 2*pi, got {grid[-1] - grid[0] if grid.size else 0.0:.3f} rad"
        )
    probs = np.array([
        click_probability(model, strong_mean_photons, phi - true_phase_zero, length_km)
        for phi in grid
    ])
    if noiseless:
        counts = probs * pulses_per_point
    else:
        counts = np.array([
            float(np.random.default_rng(np.random.SeedSequence((seed, i)))
                  .binomial(pulses_per_point, p))
            for i, p in enumerate(probs)
        ])
    return ScanCurve(offsets=grid, counts=counts, pulses_per_point=pulses_per_point,
                     saturated=bool(probs.max() >= SATURATION_PEAK))


def fit_fringe(curve: ScanCurve) -> FringeFit:
    """Fit the click-law fringe and return visibility and fringe zero.

    Initialization projects the log-inverted count fractions onto the
    first harmonic (an orientation-free least-squares cosine fit), then
    a bounded least-squares refinement of (depth, visibility, zero)
    minimizes count-fraction residuals. Deterministic: no random
    starts. The reported residual is the rms count-fraction misfit;
    a flat curve fits with visibility near zero and the residual is
    the only signal that the phase is unconstrained.
    """
    if curve.offsets.size < 8 or curve.span < TWO_PI - 1e-9:
        raise InsufficientScanRangeError(
            f"fringe fit needs >= 8 points spanning >= 2*pi, got {curve.offsets.size} "
            f"points over {curve.span:.3f} rad"
        )
    y = curve.counts / curve.pulses_per_point
    # Log inversion of the click law linearizes the fringe for the
    # first-harmonic projection; clamp away the y=1 pole.
    t = -np.log1p(-np.minimum(y, 1.0 - 1e-12))
    design = np.column_stack([np.ones_like(curve.offsets),
                              np.cos(curve.offsets), np.sin(curve.offsets)])
    coeff, *_ = np.linalg.lstsq(design, t, rcond=None)
    depth0 = max(float(coeff[0]), 1e-12)
    vis0 = min(math.hypot(coeff[1], coeff[2]) / depth0, 1.0)
    zero0 = math.atan2(coeff[2], coeff[1])

    def residuals(x: np.ndarray) -> np.ndarray:
        depth, vis, zero = x
        return 1.0 - np.exp(-depth * (1.0 + vis * np.cos(curve.offsets - zero))) - y

    result = least_squares(
        residuals, [depth0, vis0, zero0],
        bounds=([1e-15, 0.0, zero0 - math.pi], [np.inf, 1.0, zero0 + math.pi]),
        method="trf", ftol=1e-15, xtol=1e-15, gtol=1e-15,
    )
    depth, vis, zero = result.x
    rms = float(np.sqrt(np.mean(residuals(result.x) ** 2)))
    # Mean click probability over a full fringe period.
    amplitude = float(1.0 - math.exp(-depth) * bessel_i0(depth * vis))
    return FringeFit(amplitude=amplitude, visibility_est=float(vis),
                     phase_zero=_wrap_phase(float(zero)), residual=rms)


def working_points(fit: FringeFit) -> tuple[float, float, float, float]:
    """The four modulation phases {zero + k*pi/2}, each normalized to [0, 2*pi)."""
    return tuple(_wrap_phase(fit.phase_zero + k * math.pi / 2.0) for k in range(4))


def scan_overhead(curve: ScanCurve, session_pulses: float) -> float:
    """Scan duration in pulse slots as a fraction of the session length."""
    if session_pulses <= 0:
        raise ValueError(f"session_pulses={session_pulses} must be > 0")
    return curve.offsets.size * curve.pulses_per_point / session_pulses


def write_scan_curve(curve: ScanCurve, stream: IO[str]) -> None:
    """Write a curve as 'offset count pulses_per_point' lines."""
    stream.write("offset\tcount\tpulses_per_point\n")
    for offset, count in zip(curve.offsets, curve.counts):
        stream.write(f"{float(offset)!r}\t{float(count)!r}\t{curve.pulses_per_point}\n")


def read_scan_curve(stream: IO[str]) -> ScanCurve:
    """Parse the delimited format written by write_scan_curve."""
    offsets, counts, pulses = [], [], set()
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("offset"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 3 columns, got {len(parts)}")
        offsets.append(float(parts[0]))
        counts.append(float(parts[1]))
        pulses.add(int(parts[2]))
    if len(pulses) != 1:
        raise ValueError(f"scan curve must carry one pulses_per_point value, got {sorted(pulses)}")
    return ScanCurve(offsets=np.array(offsets), counts=np.array(counts),
                     pulses_per_point=pulses.pop())
