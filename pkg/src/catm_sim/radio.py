"""Radio abstraction: macro path loss, sector antenna, coupling loss,
repetition combining and the logistic BLER waterfall.

Everything here is long-term: there is no per-TTI fast fading state.  The
fading distribution is folded into the BLER curve slopes, and repetition
gain is an analytic function of the repetition count.  All powers are dBm,
all gains/losses dB, distances metres.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

from .errors import ConfigError, InputError
from . import timing

THERMAL_NOISE_DBM_HZ = -174.0
PRB_BANDWIDTH_HZ = 180e3

# Repetition lengths a grant may be configured with (cross-subframe
# combining during HARQ is not restricted to this ladder).
REPETITION_LADDER = (1, 2, 4, 8, 16, 32, 64, 128, 256)


def path_loss(distance_m: float, min_distance_m: float = 35.0) -> float:
    """Macro-cell path loss 128.1 + 37.6*log10(d_km) in dB.

    Distances below ``min_distance_m`` are clamped so the model stays
    finite next to the mast.
    """
    if not math.isfinite(distance_m) or distance_m <= 0.0:
        raise InputError(f"distance must be positive and finite, got {distance_m}")
    d = max(distance_m, min_distance_m)
    return 128.1 + 37.6 * math.log10(d / 1000.0)


@dataclass(frozen=True)
class AntennaPattern:
    """3-sector macro antenna: parabolic rolloff in both planes.

    Attenuations add, so the gain floor is max_gain - (sla_db + am_db).
    """
    max_gain_db: float = 17.0
    vertical_beamwidth_deg: float = 10.0
    sla_db: float = 20.0
    downtilt_deg: float = 15.0
    horizontal_beamwidth_deg: float = 65.0
    am_db: float = 25.0

    def __post_init__(self):
        if self.vertical_beamwidth_deg <= 0 or self.horizontal_beamwidth_deg <= 0:
            raise ConfigError("antenna beamwidths must be positive")
        if self.sla_db < 0 or self.am_db < 0:
            raise ConfigError("antenna attenuation limits must be >= 0")


def antenna_gain(pattern: AntennaPattern, azimuth_off_deg: float,
                 elevation_deg: float) -> float:
    """Gain towards (azimuth offset from boresight, downward elevation angle).

    Vertical attenuation is capped at sla_db, horizontal at am_db.
    """
    if not (math.isfinite(azimuth_off_deg) and math.isfinite(elevation_deg)):
        raise InputError("antenna angles must be finite")
    az = (azimuth_off_deg + 180.0) % 360.0 - 180.0
    att_v = min(12.0 * ((elevation_deg - pattern.downtilt_deg)
                        / pattern.vertical_beamwidth_deg) ** 2, pattern.sla_db)
    att_h = min(12.0 * (az / pattern.horizontal_beamwidth_deg) ** 2, pattern.am_db)
    return pattern.max_gain_db - att_v - att_h


def omni_gain(pattern: AntennaPattern, elevation_deg: float) -> float:
    """Single-sector variant: vertical rolloff only."""
    return antenna_gain(pattern, 0.0, elevation_deg)


@dataclass(frozen=True)
class LinkState:
    """Frozen large-scale state of one UE-to-cell link."""
    distance_m: float
    path_loss_db: float
    shadow_db: float
    body_loss_db: float
    antenna_gain_db: float      # eNB side, towards the UE
    ue_antenna_gain_db: float

    @property
    def coupling_loss_db(self) -> float:
        return (self.path_loss_db + self.shadow_db + self.body_loss_db
                - self.antenna_gain_db - self.ue_antenna_gain_db)


def noise_floor_dbm(n_prbs: int, noise_figure_db: float) -> float:
    """Thermal noise plus receiver noise figure over n_prbs PRBs."""
    if n_prbs < 1:
        raise InputError(f"n_prbs must be >= 1, got {n_prbs}")
    return (THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(n_prbs * PRB_BANDWIDTH_HZ)
            + noise_figure_db)


def combining_gain_db(repetitions: float,
                      penalty_db_per_doubling: float = 0.5) -> float:
    """SINR gain of coherently combining `repetitions` copies.

    Ideal combining would give 10log10(R); each doubling pays a small
    implementation penalty (channel estimation at very low SNR etc.).
    Accepts non-ladder counts because HARQ soft combining accumulates
    attempt * repetition copies.
    """
    if repetitions < 1:
        raise InputError(f"repetitions must be >= 1, got {repetitions}")
    r = float(repetitions)
    return 10.0 * math.log10(r) - penalty_db_per_doubling * math.log2(r)


def effective_sinr(sinr_db: float, repetitions: int,
                   penalty_db_per_doubling: float = 0.5) -> float:
    """Post-combining SINR of a transmission repeated over `repetitions` TTIs.

    The repetition count must be on the configured ladder; monotone in R as
    long as the per-doubling penalty stays below 3.01 dB.
    """
    if repetitions not in REPETITION_LADDER:
        raise ConfigError(
            f"repetition length {repetitions} not on ladder {REPETITION_LADDER}")
    return sinr_db + combining_gain_db(repetitions, penalty_db_per_doubling)


@dataclass(frozen=True)
class BlerCurve:
    threshold_db: float
    slope_db: float


class BlerModel:
    """Per-MCS logistic BLER waterfalls with a TBS-size correction.

    bler = 1 / (1 + exp((eff_sinr - t) / slope)) where
    t = threshold(mcs) + tbs_sensitivity * log2(tbs / ref_tbs).
    Strictly decreasing in SINR, non-decreasing in TBS.
    """

    def __init__(self, curves: list[BlerCurve], ref_tbs_bits: int,
                 tbs_sensitivity_db_per_doubling: float,
                 combining_penalty_db_per_doubling: float):
        if not curves:
            raise ConfigError("BLER model needs at least one MCS curve")
        for i, c in enumerate(curves):
            if c.slope_db <= 0:
                raise ConfigError(f"mcs {i}: slope must be positive")
            if i and c.threshold_db < curves[i - 1].threshold_db:
                raise ConfigError("BLER thresholds must be non-decreasing in MCS")
        if tbs_sensitivity_db_per_doubling < 0:
            raise ConfigError("tbs sensitivity must be >= 0")
        self.curves = list(curves)
        self.ref_tbs_bits = int(ref_tbs_bits)
        self.tbs_sensitivity = float(tbs_sensitivity_db_per_doubling)
        self.combining_penalty = float(combining_penalty_db_per_doubling)

    @classmethod
    def from_file(cls, path=None) -> "BlerModel":
        if path is None:
            raw = resources.files("catm_sim.data").joinpath(
                "bler_curves.json").read_text()
        else:
            with open(path) as fh:
                raw = fh.read()
        spec = json.loads(raw)
        curves = [BlerCurve(e["threshold_db"], e["slope_db"])
                  for e in sorted(spec["curves"], key=lambda e: e["mcs"])]
        return cls(curves, spec["ref_tbs_bits"],
                   spec["tbs_sensitivity_db_per_doubling"],
                   spec["combining_penalty_db_per_doubling"])

    @property
    def n_mcs(self) -> int:
        return len(self.curves)

    def threshold_db(self, mcs: int, tbs_bits: int) -> float:
        """50% BLER point for this (mcs, tbs)."""
        self._check(mcs, tbs_bits)
        c = self.curves[mcs]
        return c.threshold_db + self.tbs_sensitivity * math.log2(
            tbs_bits / self.ref_tbs_bits)

    def bler(self, eff_sinr_db: float, mcs: int, tbs_bits: int) -> float:
        self._check(mcs, tbs_bits)
        c = self.curves[mcs]
        t = self.threshold_db(mcs, tbs_bits)
        x = (eff_sinr_db - t) / c.slope_db
        # stable sigmoid, clamped before exp() can overflow; stays in (0, 1)
        x = max(-700.0, min(700.0, x))
        if x >= 0.0:
            e = math.exp(-x)
            return e / (1.0 + e)
        return 1.0 / (1.0 + math.exp(x))

    def _check(self, mcs: int, tbs_bits: int):
        if not 0 <= mcs < len(self.curves):
            raise InputError(f"mcs {mcs} outside 0..{len(self.curves) - 1}")
        if tbs_bits <= 0:
            raise InputError(f"tbs_bits must be positive, got {tbs_bits}")


def residual_bler(model: BlerModel, sinr_db: float, rl_data: int,
                  attempts: int, mcs: int, tbs_bits: int) -> float:
    """Failure probability after `attempts` HARQ transmissions with soft
    combining across attempts (cumulative attempts * rl_data copies)."""
    if attempts < 1:
        raise InputError(f"attempts must be >= 1, got {attempts}")
    eff = sinr_db + combining_gain_db(attempts * rl_data,
                                      model.combining_penalty)
    return model.bler(eff, mcs, tbs_bits)


def mcl_search(model: BlerModel, rl_mpdcch: int, rl_data: int, tbs_bits: int,
               mcs: int, tx_power_dbm: float, delay_budget_ms: float | None = None,
               n_prbs: int = 1, noise_figure_db: float = 5.0,
               max_attempts: int = 4, target_residual: float = 0.02,
               tol_db: float = 0.01) -> float | None:
    """Maximum coupling loss at which the residual BLER stays <= target.

    The link runs at fixed MCS/TBS over ``n_prbs`` PRBs with HARQ; the
    number of attempts is whatever fits in the delay budget (one UL HARQ
    cycle per attempt), capped at ``max_attempts``.  Returns None when even
    0 dB coupling loss misses the target, e.g. a zero-attempt budget.
    """
    if tbs_bits <= 0:
        raise InputError(f"tbs_bits must be positive, got {tbs_bits}")
    if rl_data not in REPETITION_LADDER or rl_mpdcch not in REPETITION_LADDER:
        raise ConfigError("repetition lengths must be on the ladder")
    attempts = max_attempts
    if delay_budget_ms is not None:
        cycle = timing.ul_cycle_ms(rl_mpdcch, rl_data)
        attempts = min(max_attempts, int(delay_budget_ms // cycle))
    if attempts < 1:
        return None
    noise = noise_floor_dbm(n_prbs, noise_figure_db)

    def residual(cl_db: float) -> float:
        return residual_bler(model, tx_power_dbm - cl_db - noise,
                             rl_data, attempts, mcs, tbs_bits)

    lo, hi = 0.0, 250.0
    if residual(lo) > target_residual:
        return None
    if residual(hi) <= target_residual:
        return hi
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if residual(mid) <= target_residual:
            lo = mid
        else:
            hi = mid
    return lo
