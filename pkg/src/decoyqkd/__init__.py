"""Two-intensity decoy-state QKD toolkit.

Security bounds for a signal/decoy intensity pair, an analytic model of
the one-detector interferometric fiber link, a pulse-level Monte Carlo
of the protocol with ground-truth bookkeeping, and fringe calibration
of the receiver's phase working points. See the `decoyqkd` CLI for the
file-based workflows.
"""

from .calibration import (
    FringeFit,
    InsufficientScanRangeError,
    ScanCurve,
    fit_fringe,
    simulate_scan,
    working_points,
)
from .estimator import (
    AnalysisError,
    InsufficientStatisticsError,
    MeasuredStats,
    NoSinglePhotonBoundError,
    ProtocolParams,
    SecurityBounds,
    analyze_row,
    binary_entropy,
    e1_upper_bound,
    key_rate,
    s1_lower_bound,
    s_nu_lower,
)
from .link import (
    LengthSweep,
    LinkModel,
    UnidentifiableDataError,
    click_probability,
    expected_gain,
    expected_qber,
    expected_stats,
    fit_link,
    sweep_key_rate,
    transmittance,
)
from .sim import (
    PulseRecord,
    SimConfig,
    SimTally,
    SoundnessReport,
    merge_tallies,
    pulse_records,
    run_session,
    soundness_report,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisError",
    "FringeFit",
    "InsufficientScanRangeError",
    "InsufficientStatisticsError",
    "LengthSweep",
    "LinkModel",
    "MeasuredStats",
    "NoSinglePhotonBoundError",
    "ProtocolParams",
    "PulseRecord",
    "ScanCurve",
    "SecurityBounds",
    "SimConfig",
    "SimTally",
    "SoundnessReport",
    "UnidentifiableDataError",
    "analyze_row",
    "binary_entropy",
    "click_probability",
    "e1_upper_bound",
    "expected_gain",
    "expected_qber",
    "expected_stats",
    "fit_fringe",
    "fit_link",
    "key_rate",
    "merge_tallies",
    "pulse_records",
    "run_session",
    "s1_lower_bound",
    "s_nu_lower",
    "simulate_scan",
    "soundness_report",
    "sweep_key_rate",
    "transmittance",
    "working_points",
]
