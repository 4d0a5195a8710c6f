"""Analytic model of the fiber link and single-detector interferometric receiver.

The detection model is a lumped interferometric click probability: a
weak coherent pulse of mean photon number m arriving with phase
difference d on a fringe of visibility V clicks with probability

    1 - (1 - y0) * exp(-eta * m * (1 + V*cos(d)) / 2)

where eta is the end-to-end transmittance (fiber attenuation, fixed
excess loss, detector efficiency) and y0 the dark-count probability
per gate. Poisson photon statistics are implicit in the exponential.
Both parties choose phases from {0, pi/2, pi, 3pi/2}; expected gains
average over the resulting uniform phase-difference distribution, and
the QBER is the fraction of matched-basis clicks landing at the
destructive phase.

fit_link inverts a table of measured rates into (attenuation, lumped
excess loss, visibility) with the dark rate held fixed; sweep_key_rate
feeds modelled rates through the security bounds to locate the largest
fiber length with a positive secure rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .estimator import AnalysisError, MeasuredStats, ProtocolParams, analyze_row

__all__ = [
    "LinkModel",
    "LengthSweep",
    "UnidentifiableDataError",
    "transmittance",
    "click_probability",
    "expected_gain",
    "expected_qber",
    "expected_stats",
    "fit_objective",
    "fit_link",
    "sweep_key_rate",
]

_QUARTER_PHASES = (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)

# Deterministic coarse grid seeding the local refinement of fit_link.
_FIT_GRID_ALPHA = np.linspace(0.05, 0.40, 36)
_FIT_GRID_LUMPED_DB = np.linspace(0.0, 40.0, 41)
_FIT_GRID_VISIBILITY = np.linspace(0.80, 0.999, 20)


class UnidentifiableDataError(ValueError):
    """The measured table cannot constrain the link parameters."""


@dataclass(frozen=True)
class LinkModel:
    """Physical channel and detector description.

    alpha_db_per_km   fiber attenuation (dB/km)
    excess_loss_db    fixed insertion loss of receiver optics (dB)
    eta_det           detector efficiency
    y0                dark-count probability per gate
    visibility        interference fringe visibility
    """

    alpha_db_per_km: float = 0.2
    excess_loss_db: float = 0.0
    eta_det: float = 1.0
    y0: float = 5e-7
    visibility: float = 0.99

    def __post_init__(self) -> None:
        if self.alpha_db_per_km < 0:
            raise ValueError(f"alpha_db_per_km={self.alpha_db_per_km} must be >= 0")
        if not 0.0 <= self.eta_det <= 1.0:
            raise ValueError(f"eta_det={self.eta_det} must be in [0, 1]")
        if not 0.0 <= self.y0 <= 1.0:
            raise ValueError(f"y0={self.y0} must be in [0, 1]")
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError(f"visibility={self.visibility} must be in [0, 1]")


@dataclass(frozen=True)
class LengthSweep:
    """Key rate against fiber length plus the refined secure-distance cutoff.

    cutoff_km is the largest length with a positive secure rate,
    located to 0.1 km between a positive-rate grid point and the first
    non-positive one; None when the grid contains no such bracket
    (all-positive or all-non-positive curves).
    """

    lengths: np.ndarray
    rates: np.ndarray
    cutoff_km: float | None


def transmittance(model: LinkModel, length_km: float) -> float:
    """End-to-end transmittance eta_det * 10^-(alpha*L + excess)/10."""
    if length_km < 0:
        raise ValueError(f"length_km={length_km} must be >= 0")
    loss_db = model.alpha_db_per_km * length_km + model.excess_loss_db
    return model.eta_det * 10.0 ** (-loss_db / 10.0)


def click_probability(model: LinkModel, mean_photons: float, phase_diff: float,
                      length_km: float = 0.0) -> float:
    """Click probability for one pulse at the given phase difference."""
    if mean_photons < 0:
        raise ValueError(f"mean_photons={mean_photons} must be >= 0")
    eta = transmittance(model, length_km)
    exponent = eta * mean_photons * (1.0 + model.visibility * math.cos(phase_diff)) / 2.0
    return 1.0 - (1.0 - model.y0) * math.exp(-exponent)


def expected_gain(model: LinkModel, mean_photons: float, length_km: float = 0.0) -> float:
    """Click rate per emitted pulse, averaged over the four phase differences."""
    return sum(
        click_probability(model, mean_photons, d, length_km) for d in _QUARTER_PHASES
    ) / 4.0


def expected_qber(model: LinkModel, mean_photons: float, length_km: float = 0.0) -> float:
    """Error fraction among matched-basis clicks.

    Matched slots split equally between constructive (phase 0) and
    destructive (phase pi) interference; clicks at the destructive
    phase are the errors. Dark counts enter through y0 in the click
    probabilities and push the result toward 1/2. Returns 0 when there
    are no clicks at all.
    """
    p_good = click_probability(model, mean_photons, 0.0, length_km)
    p_bad = click_probability(model, mean_photons, math.pi, length_km)
    total = p_good + p_bad
    if total == 0.0:
        return 0.0
    return p_bad / total


def expected_stats(model: LinkModel, params: ProtocolParams, length_km: float) -> MeasuredStats:
    """Modelled MeasuredStats row for both intensity classes at one length."""
    return MeasuredStats(
        length_km=length_km,
        s_mu=expected_gain(model, params.mu, length_km),
        e_mu=expected_qber(model, params.mu, length_km),
        s_nu=expected_gain(model, params.nu, length_km),
        e_nu=expected_qber(model, params.nu, length_km),
    )


def _fit_residuals(alpha: float, lumped_db: float, visibility: float, y0: float,
                   table: Sequence[MeasuredStats], params: ProtocolParams) -> list[float]:
    # Gains span decades -> log residuals; QBERs do not -> linear residuals.
    model = LinkModel(alpha_db_per_km=alpha, excess_loss_db=lumped_db,
                      eta_det=1.0, y0=y0, visibility=visibility)
    residuals = []
    for row in table:
        residuals.append(math.log(expected_gain(model, params.mu, row.length_km))
                         - math.log(row.s_mu))
        residuals.append(math.log(expected_gain(model, params.nu, row.length_km))
                         - math.log(row.s_nu))
        residuals.append(expected_qber(model, params.mu, row.length_km) - row.e_mu)
    return residuals


def fit_objective(model: LinkModel, table: Sequence[MeasuredStats],
                  params: ProtocolParams) -> float:
    """Sum of squared fit residuals of a model against a measured table."""
    lumped = model.excess_loss_db - 10.0 * math.log10(model.eta_det)
    r = _fit_residuals(model.alpha_db_per_km, lumped, model.visibility, model.y0,
                       table, params)
    return float(sum(v * v for v in r))


def fit_link(table: Sequence[MeasuredStats], params: ProtocolParams,
             y0: float = 5e-7) -> LinkModel:
    """Least-squares link model from a table of measured rates.

    Fits (alpha_db_per_km, lumped excess loss, visibility) with y0 held
    fixed. Detector efficiency and excess loss only enter through their
    product, so they are fitted as one lumped dB value reported in
    excess_loss_db with eta_det = 1. Deterministic: a fixed coarse grid
    picks the starting point, then bounded least squares refines it.

    Raises UnidentifiableDataError unless the table spans at least
    three distinct lengths.
    """
    if len({row.length_km for row in table}) < 3:
        raise UnidentifiableDataError(
            f"link fit needs >= 3 distinct fiber lengths, got {len(table)} row(s) "
            f"spanning {len({row.length_km for row in table})}"
        )
    for row in table:
        if row.s_mu <= 0 or row.s_nu <= 0:
            raise UnidentifiableDataError(
                f"non-positive counting rate at {row.length_km} km cannot be log-fitted"
            )

    best_cost, best_x = math.inf, None
    for alpha in _FIT_GRID_ALPHA:
        for lumped in _FIT_GRID_LUMPED_DB:
            for vis in _FIT_GRID_VISIBILITY:
                r = _fit_residuals(alpha, lumped, vis, y0, table, params)
                cost = sum(v * v for v in r)
                if cost < best_cost:
                    best_cost, best_x = cost, (alpha, lumped, vis)

    result = least_squares(
        lambda x: _fit_residuals(x[0], x[1], x[2], y0, table, params),
        best_x,
        bounds=([0.0, 0.0, 0.0], [5.0, 80.0, 1.0]),
        method="trf",
    )
    alpha, lumped, vis = result.x
    return LinkModel(alpha_db_per_km=float(alpha), excess_loss_db=float(lumped),
                     eta_det=1.0, y0=y0, visibility=float(vis))


def _rate_at(model: LinkModel, params: ProtocolParams, length_km: float) -> float:
    """Modelled key-rate bound at one length; NaN where the bounds abort."""
    try:
        return analyze_row(params, expected_stats(model, params, length_km)).r_lower
    except AnalysisError:
        return float("nan")


def sweep_key_rate(model: LinkModel, params: ProtocolParams,
                   lengths: Sequence[float]) -> LengthSweep:
    """Key-rate bound over a length grid with a bisection-refined cutoff.

    Lengths where the bounds abort (insufficient modelled statistics)
    carry NaN rates and count as non-positive for cutoff bracketing.
    The cutoff is refined to 0.1 km and reports the largest length
    verified positive.
    """
    grid = np.asarray(list(lengths), dtype=float)
    if grid.size == 0:
        raise ValueError("length grid must be nonempty")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("length grid must be strictly increasing")

    rates = np.array([_rate_at(model, params, length) for length in grid])
    positive = np.nan_to_num(rates, nan=-math.inf) > 0

    cutoff = None
    for i in range(grid.size - 1):
        if positive[i] and not positive[i + 1]:
            lo, hi = float(grid[i]), float(grid[i + 1])
            while hi - lo > 0.1:
                mid = 0.5 * (lo + hi)
                r = _rate_at(model, params, mid)
                if not math.isnan(r) and r > 0:
                    lo = mid
                else:
                    hi = mid
            cutoff = lo
            break
    return LengthSweep(lengths=grid, rates=rates, cutoff_km=cutoff)
