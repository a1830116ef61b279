"""Carrier-phase preprocessing: excess phase, clock calibration, cycle slips, GPR, export.

Each step takes an :class:`ExcessPhaseSeries` at one processing stage and
returns a new series one stage further on::

    raw -> calibrated -> slip_corrected -> smoothed

Exports are NetCDF classic files written with :mod:`scipy.io`, or a JSON
document with the same variable names when ``emit_json`` is requested.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.io import netcdf_file
from scipy.ndimage import median_filter
from scipy.optimize import least_squares

from . import __version__ as PROCESSING_VERSION
from .core import C_LIGHT, LAMBDA_L1, elevation_azimuth
from .geometry import light_time_range
from .ingest import OccultationDataset, SatId

log = logging.getLogger(__name__)


class Stage(enum.IntEnum):
    RAW = 0
    CALIBRATED = 1
    SLIP_CORRECTED = 2
    SMOOTHED = 3


class Flag(enum.IntEnum):
    OK = 0
    GAP = 1
    SLIP_CORRECTED = 2
    INTERPOLATED = 3


class StageError(ValueError):
    """An operation was handed a series at the wrong processing stage."""


class ReferenceError_(ValueError):
    pass


class GprError(RuntimeError):
    pass


@dataclass
class ExcessPhaseSeries:
    sat: Optional[SatId]
    t: np.ndarray
    excess_phase: np.ndarray  # m
    snr: np.ndarray
    elevation: np.ndarray
    flag: np.ndarray  # Flag codes, int
    rx_pos: np.ndarray  # (n, 3)
    rx_vel: np.ndarray
    tx_pos: np.ndarray
    tx_vel: np.ndarray
    stage: Stage = Stage.RAW
    excess_doppler: Optional[np.ndarray] = None  # m/s, only once smoothed
    posterior_sigma: Optional[np.ndarray] = None
    reference_sat: Optional[SatId] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = np.asarray(self.t).size
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("series epochs must be strictly increasing")
        for name in ("excess_phase", "snr", "elevation", "flag"):
            if np.asarray(getattr(self, name)).shape != (n,):
                raise ValueError(f"{name} must have one value per epoch")
        if (self.excess_doppler is not None) != (self.stage >= Stage.SMOOTHED):
            raise ValueError("excess_doppler is present exactly when the series is smoothed")

    def __len__(self):
        return int(np.asarray(self.t).size)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.excess_phase) & (self.flag != Flag.GAP)

    def advanced(self, stage: Stage, **changes) -> "ExcessPhaseSeries":
        if stage != self.stage + 1:
            raise StageError(f"cannot move from {self.stage.name} to {stage.name}")
        return dataclasses.replace(self, stage=stage, meta=dict(self.meta), **changes)


def _require(s: ExcessPhaseSeries, stage: Stage, op: str) -> None:
    if s.stage != stage:
        raise StageError(f"{op} needs a {stage.name.lower()} series, got {s.stage.name.lower()}")


# --- step one: excess phase -------------------------------------------------------

def compute_excess_phase(ds: OccultationDataset, sagnac: bool = True) -> ExcessPhaseSeries:
    """Measured phase path minus light-time geometric range.

    The carrier-phase ambiguity is removed by zeroing the series at its
    highest-elevation epoch.  Epochs without a platform state are flagged
    as gaps with NaN values.
    """
    n = len(ds.obs)
    t = np.array([o.t for o in ds.obs], dtype=float)
    ex = np.full(n, np.nan)
    el = np.full(n, np.nan)
    snr = np.array([o.snr for o in ds.obs], dtype=float)
    flag = np.full(n, int(Flag.OK))
    rxp, rxv, txp, txv = (np.full((n, 3), np.nan) for _ in range(4))
    for k, (ob, st) in enumerate(zip(ds.obs, ds.platform)):
        if st is None:
            flag[k] = Flag.GAP
            continue
        lt = light_time_range(st.pos, ds.ephem, ob.t, rx_vel=st.vel, sagnac=sagnac)
        ex[k] = LAMBDA_L1 * ob.carrier_phase - lt.range
        if lt.clock is not None and math.isfinite(lt.clock):
            ex[k] += C_LIGHT * lt.clock
        rxp[k], rxv[k], txp[k], txv[k] = st.pos, st.vel, lt.pos, lt.vel
        el[k] = elevation_azimuth(st.pos, lt.pos)[0]
    good = flag == Flag.OK
    if np.any(good):
        k0 = int(np.flatnonzero(good)[np.argmax(el[good])])
        ex = ex - ex[k0]
    return ExcessPhaseSeries(ds.sat, t, ex, snr, el, flag, rxp, rxv, txp, txv,
                             meta={"event_id": ds.event_id})


# --- step two: receiver clock ----------------------------------------------------

def choose_reference(candidates: Sequence[ExcessPhaseSeries],
                     min_elevation: float = math.radians(30.0)) -> ExcessPhaseSeries:
    """The candidate arc with the highest mean elevation, if it clears the floor."""
    best, best_el = None, -math.inf
    for s in candidates:
        e = s.elevation[np.isfinite(s.elevation)]
        if e.size and float(np.mean(e)) > best_el:
            best, best_el = s, float(np.mean(e))
    if best is None or best_el < min_elevation:
        raise ReferenceError_(
            f"no reference arc with mean elevation >= {math.degrees(min_elevation):.1f} deg; "
            "relax the reference elevation threshold")
    return best


def calibrate_clock(occ: ExcessPhaseSeries, ref: ExcessPhaseSeries,
                    tolerance: float = 0.05) -> ExcessPhaseSeries:
    """Subtract the reference arc sample by sample (receiver clock common mode)."""
    _require(occ, Stage.RAW, "calibrate_clock")
    out = occ.excess_phase.copy()
    flag = occ.flag.copy()
    idx = np.searchsorted(ref.t, occ.t)
    for k, tk in enumerate(occ.t):
        j = None
        for c in (idx[k] - 1, idx[k]):
            if 0 <= c < ref.t.size and abs(ref.t[c] - tk) <= tolerance + 1e-12:
                if j is None or abs(ref.t[c] - tk) < abs(ref.t[j] - tk):
                    j = c
        if j is None or not math.isfinite(ref.excess_phase[j]) or ref.flag[j] == Flag.GAP:
            out[k] = np.nan
            flag[k] = Flag.GAP
        else:
            out[k] = occ.excess_phase[k] - ref.excess_phase[j]
    return occ.advanced(Stage.CALIBRATED, excess_phase=out, flag=flag,
                        reference_sat=ref.sat)


# --- step three: cycle slips -----------------------------------------------------

@dataclass(frozen=True)
class Slip:
    t: float
    jump_m: float
    corrected_cycles: int

    def __post_init__(self):
        if self.corrected_cycles == 0:
            raise ValueError("a slip entry must correct a non-zero number of cycles")


@dataclass
class SlipReport:
    slips: list[Slip] = field(default_factory=list)
    passes: int = 0
    used_fallback: bool = False

    def __len__(self):
        return len(self.slips)

    def __iter__(self):
        return iter(self.slips)


@dataclass(frozen=True)
class SlipConfig:
    mad_factor: float = 6.0
    min_jump: float = 0.5 * LAMBDA_L1
    median_window: int = 15
    max_passes: int = 5


def fit_exponential_trend(t: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, bool]:
    """Least-squares A + B exp(C (t - t0)); quadratic fallback if the fit fails.

    Returns the trend at ``t`` and whether the fallback was used.
    """
    tau = t - t[0]
    span = max(tau[-1], 1e-9)
    n_tail = max(3, y.size // 5)
    tail = y[-n_tail:] - y[0]
    head = np.abs(y[n_tail] - y[0]) if y.size > n_tail else 0.0
    # log-slope of the tail against the head
    num = float(np.abs(tail[-1]) + 1e-9)
    C0 = math.log(num / (head + 1e-9)) / span if num > head else 1.0 / span
    C0 = min(max(C0, 0.1 / span), 50.0 / span)
    B0 = (y[-1] - y[0]) / math.expm1(C0 * span) if C0 * span < 700 else 0.0
    A0 = y[0] - B0
    scale = max(float(np.ptp(y)), 1e-6)

    def resid(p):
        A, B, Cn = p
        return (A + B * np.exp(Cn / span * tau) - y) / scale

    try:
        with np.errstate(over="ignore", invalid="ignore"):
            sol = least_squares(resid, [A0, B0, C0 * span], method="lm", max_nfev=400)
        trend = sol.x[0] + sol.x[1] * np.exp(sol.x[2] / span * tau)
        if sol.success and np.all(np.isfinite(trend)):
            return trend, False
    except (ValueError, FloatingPointError):
        pass
    log.warning("exponential trend fit failed; falling back to a quadratic")
    coef = np.polyfit(tau / span, y, 2)
    return np.polyval(coef, tau / span), True


def _round_cycles(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def correct_cycle_slips(s: ExcessPhaseSeries, cfg: SlipConfig = SlipConfig(),
                        wavelength: float = LAMBDA_L1) -> tuple[ExcessPhaseSeries, SlipReport]:
    """Detect and repair integer-cycle discontinuities.

    An exponential trend is removed, and residual first differences are
    compared with a running median of themselves; outliers beyond
    ``max(mad_factor * MAD, min_jump)`` are slips.  Each slip is removed by
    the nearest integer number of wavelengths, applied to all later samples.
    """
    _require(s, Stage.CALIBRATED, "correct_cycle_slips")
    report = SlipReport()
    valid = np.flatnonzero(s.valid)
    y = s.excess_phase.copy()
    flag = s.flag.copy()
    if valid.size < 20:
        raise ValueError(f"cycle-slip correction needs >= 20 samples, have {valid.size}")
    tv = s.t[valid]
    for _ in range(cfg.max_passes):
        report.passes += 1
        yv = y[valid]
        trend, fb = fit_exponential_trend(tv, yv)
        report.used_fallback |= fb
        d = np.diff(yv - trend)
        d = d - median_filter(d, size=cfg.median_window, mode="nearest")
        mad = 1.4826 * float(np.median(np.abs(d - np.median(d))))
        thr = max(cfg.mad_factor * mad, cfg.min_jump)
        hits = np.flatnonzero(np.abs(d) > thr)
        found = False
        for h in hits:
            cycles = _round_cycles(d[h] / wavelength)
            if cycles == 0:
                continue
            k = valid[h + 1]
            y[valid[h + 1:]] -= cycles * wavelength
            flag[k] = Flag.SLIP_CORRECTED
            report.slips.append(Slip(float(s.t[k]), float(d[h]), -cycles))
            found = True
        if not found:
            break
    report.slips.sort(key=lambda sl: sl.t)
    return s.advanced(Stage.SLIP_CORRECTED, excess_phase=y, flag=flag), report


# --- step four: Gaussian process smoothing ---------------------------------------

@dataclass(frozen=True)
class GprConfig:
    length_scale: float = 5.0  # s
    signal_sigma: Optional[float] = None  # m; default from the detrended data
    noise_sigma: Optional[float] = None  # m; default 0.003 wavelengths
    chunk: int = 512
    overlap: int = 64

    def __post_init__(self):
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")
        if not self.chunk > 2 * self.overlap:
            raise ValueError("chunk must exceed twice the overlap")
        if self.overlap < 0:
            raise ValueError("overlap must be non-negative")
        for name in ("signal_sigma", "noise_sigma"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def noise(self) -> float:
        return self.noise_sigma if self.noise_sigma is not None else 0.003 * LAMBDA_L1


_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def _se(t1, t2, ell):
    d = t1[:, None] - t2[None, :]
    return np.exp(-0.5 * (d / ell) ** 2), d


def _gp_chunk(tt, yy, tq, ell, s2, n2):
    """Posterior mean, derivative and std of a zero-mean SE GP at ``tq``."""
    K, _ = _se(tt, tt, ell)
    K = s2 * K
    for jit in _JITTERS:
        try:
            L = linalg.cho_factor(K + (n2 + jit * s2) * np.eye(tt.size), lower=True)
            break
        except linalg.LinAlgError:
            continue
    else:
        raise GprError("kernel matrix is not positive definite after jitter escalation")
    alpha = linalg.cho_solve(L, yy)
    Ks, d = _se(tq, tt, ell)
    Ks = s2 * Ks
    mean = Ks @ alpha
    deriv = (-(d / ell ** 2) * Ks) @ alpha
    v = linalg.cho_solve(L, Ks.T)
    var = np.maximum(s2 - np.einsum("ij,ji->i", Ks, v), 0.0)
    return mean, deriv, np.sqrt(var)


def _trend(t, y, valid):
    t0 = t[valid][0]
    span = max(t[valid][-1] - t0, 1.0)
    coef = np.polyfit((t[valid] - t0) / span, y[valid], 2)
    u = (t - t0) / span
    return np.polyval(coef, u), np.polyval(np.polyder(coef), u) / span


def default_signal_sigma(resid: np.ndarray, noise: float) -> float:
    """Sample standard deviation of the detrended data (floored at the noise level/10)."""
    return max(float(np.std(resid)), 0.1 * noise)


def _fade_in(m: int) -> np.ndarray:
    # raised cosine over the middle half of an m-sample overlap; the outer
    # quarters, where a chunk's prediction feels its own edge, get no weight
    q = m // 4
    w = np.zeros(m)
    k = m - 2 * q
    w[q:m - q] = 0.5 - 0.5 * np.cos(np.pi * (np.arange(k) + 1) / (k + 1))
    w[m - q:] = 1.0
    return w


def gp_regress(t: np.ndarray, y: np.ndarray, valid: np.ndarray, cfg: GprConfig,
               chunked: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    """GP smoothing of ``y`` about a global quadratic trend.

    Returns (mean, derivative, posterior std, hyperparameters) at every
    epoch in ``t``; invalid samples are predicted but not used for training.
    """
    trend, dtrend = _trend(t, y, valid)
    resid = np.where(valid, y - trend, 0.0)
    noise = cfg.noise
    sig = cfg.signal_sigma if cfg.signal_sigma is not None else \
        default_signal_sigma(resid[valid], noise)
    ell, s2, n2 = cfg.length_scale, sig ** 2, noise ** 2
    n = t.size
    if not chunked or n <= cfg.chunk:
        bounds = [(0, n)]
    else:
        step = cfg.chunk - cfg.overlap
        bounds = []
        start = 0
        while True:
            end = min(start + cfg.chunk, n)
            bounds.append((start, end))
            if end >= n:
                break
            start += step
    mean = np.zeros(n)
    deriv = np.zeros(n)
    var = np.zeros(n)
    wsum = np.zeros(n)
    for i, (a, b) in enumerate(bounds):
        w = np.ones(b - a)
        if i > 0:
            w[:bounds[i - 1][1] - a] = _fade_in(bounds[i - 1][1] - a)
        if i + 1 < len(bounds):
            w[bounds[i + 1][0] - a:] = _fade_in(b - bounds[i + 1][0])[::-1]
        sl = slice(a, b)
        v = valid[sl]
        if not np.any(v):
            raise GprError(f"no valid samples in chunk [{a}, {b})")
        mu, dmu, sd = _gp_chunk(t[sl][v], resid[sl][v], t[sl], ell, s2, n2)
        mean[sl] += w * mu
        deriv[sl] += w * dmu
        var[sl] += w * sd
        wsum[sl] += w
    mean /= wsum
    deriv /= wsum
    sd = var / wsum
    return mean + trend, deriv + dtrend, sd, {"length_scale": ell, "signal_sigma": sig,
                                             "noise_sigma": noise}


def gpr_smooth(s: ExcessPhaseSeries, cfg: GprConfig = GprConfig()) -> ExcessPhaseSeries:
    """Replace excess phase by the GP posterior mean; Doppler from its derivative.

    Gap epochs inside the valid span are filled and flagged interpolated;
    gaps outside it stay NaN.
    """
    _require(s, Stage.SLIP_CORRECTED, "gpr_smooth")
    valid = s.valid
    if valid.sum() < 3:
        raise GprError("too few valid samples to smooth")
    mean, deriv, sd, hyper = gp_regress(s.t, s.excess_phase, valid, cfg)
    flag = s.flag.copy()
    tv = s.t[valid]
    inside = (s.t >= tv[0]) & (s.t <= tv[-1])
    fill = ~valid & inside
    flag[fill] = Flag.INTERPOLATED
    outside = ~valid & ~inside
    mean[outside] = deriv[outside] = sd[outside] = np.nan
    out = s.advanced(Stage.SMOOTHED, excess_phase=mean, excess_doppler=deriv,
                     posterior_sigma=sd, flag=flag)
    out.meta["gpr"] = hyper
    return out


def preprocess_chain(occ_ds: OccultationDataset, ref_ds: Optional[OccultationDataset] = None,
                     ref_series: Optional[ExcessPhaseSeries] = None,
                     gpr: GprConfig = GprConfig(), slips: SlipConfig = SlipConfig()):
    """Run all four steps; returns (smoothed series, slip report)."""
    occ = compute_excess_phase(occ_ds)
    if ref_series is None:
        if ref_ds is None:
            raise ReferenceError_("a reference arc is needed for clock calibration")
        ref_series = compute_excess_phase(ref_ds)
    cal = calibrate_clock(occ, ref_series)
    fixed, report = correct_cycle_slips(cal, slips)
    return gpr_smooth(fixed, gpr), report


def series_from_sim(sim, sat: Optional[SatId] = None) -> ExcessPhaseSeries:
    """A simulated series expressed as a smoothed preprocessing product."""
    n = len(sim)
    flag = np.where(sim.ok, int(Flag.OK), int(Flag.GAP))
    return ExcessPhaseSeries(sat, sim.t.copy(), sim.excess_phase.copy(), np.full(n, np.nan),
                             sim.elevation.copy(), flag, sim.rx_pos.copy(), sim.rx_vel.copy(),
                             sim.tx_pos.copy(), sim.tx_vel.copy(), Stage.SMOOTHED,
                             excess_doppler=sim.excess_doppler.copy(),
                             posterior_sigma=np.zeros(n), meta={"source": "simulation"})


# --- export ----------------------------------------------------------------------

SCALAR_VARS = ("time", "excess_phase", "excess_doppler", "snr", "elevation", "flag",
               "posterior_sigma")
VECTOR_VARS = ("rx_pos", "rx_vel", "tx_pos", "tx_vel")
REQUIRED_VARS = SCALAR_VARS + VECTOR_VARS
GLOBAL_ATTRS = ("sat_id", "reference_sat", "processing_version", "config_hash")

_ATTR_FIELD = {"time": "t"}


class ProfileFormatError(ValueError):
    pass


def _export_arrays(s: ExcessPhaseSeries) -> dict[str, np.ndarray]:
    out = {}
    for name in REQUIRED_VARS:
        v = getattr(s, _ATTR_FIELD.get(name, name))
        if v is None:
            v = np.full(len(s), np.nan)
        out[name] = np.asarray(v, dtype=np.int32 if name == "flag" else np.float64)
    return out


def export_profile(s: ExcessPhaseSeries, path, config_hash: str = "",
                   emit_json: bool = False) -> str:
    """Write a smoothed series; returns the path actually written."""
    _require(s, Stage.SMOOTHED, "export_profile")
    path = os.fspath(path)
    attrs = {"sat_id": str(s.sat) if s.sat is not None else "",
             "reference_sat": str(s.reference_sat) if s.reference_sat is not None else "",
             "processing_version": PROCESSING_VERSION, "config_hash": config_hash}
    arrays = _export_arrays(s)
    try:
        if emit_json:
            _write_json(path, arrays, attrs)
        else:
            _write_netcdf(path, arrays, attrs)
    except OSError as exc:
        raise OSError(f"cannot write profile to {path}: {exc}") from exc
    return path


def _write_netcdf(path, arrays, attrs):
    with netcdf_file(path, "w", version=1) as f:
        for k, v in attrs.items():
            setattr(f, k, v)
        f.createDimension("time", arrays["time"].size)
        f.createDimension("xyz", 3)
        for name, arr in arrays.items():
            dims = ("time", "xyz") if name in VECTOR_VARS else ("time",)
            var = f.createVariable(name, "i4" if name == "flag" else "f8", dims)
            if arr.size:
                var[:] = arr


def _jsonable(arr: np.ndarray):
    if arr.dtype.kind == "i":
        return arr.tolist()
    return [None if not math.isfinite(x) else x for x in arr.ravel().tolist()]


def _write_json(path, arrays, attrs):
    doc = {"format": "balloonro-excess-phase", "attributes": attrs,
           "dimensions": {"time": int(arrays["time"].size), "xyz": 3},
           "variables": {k: _jsonable(v) for k, v in arrays.items()}}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def _read_raw(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = os.fspath(path)
    with open(path, "rb") as f:
        magic = f.read(3)
    if magic == b"CDF":
        with netcdf_file(path, "r", mmap=False) as f:
            arrays = {k: np.array(v[:]) for k, v in f.variables.items()}
            attrs = {k: (v.decode() if isinstance(v, bytes) else str(v))
                     for k, v in f._attributes.items()}
        return arrays, attrs
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ProfileFormatError(f"{path}: neither NetCDF nor JSON ({exc})") from exc
    if not isinstance(doc, dict) or "variables" not in doc:
        raise ProfileFormatError(f"{path}: missing 'variables' section")
    arrays = {}
    for k, v in doc["variables"].items():
        arrays[k] = np.array([np.nan if x is None else x for x in np.ravel(v).tolist()]
                             if v and not isinstance(v[0], list) else
                             [[np.nan if x is None else x for x in row] for row in v],
                             dtype=np.int32 if k == "flag" else np.float64)
    return arrays, {k: str(v) for k, v in doc.get("attributes", {}).items()}


def read_profile(path) -> ExcessPhaseSeries:
    """Read either export format back into a smoothed series."""
    arrays, attrs = _read_raw(path)
    for name in REQUIRED_VARS:
        if name not in arrays:
            raise ProfileFormatError(f"profile is missing mandatory variable '{name}'")
    n = arrays["time"].size
    for name in VECTOR_VARS:
        arr = arrays[name]
        if n == 0:
            arrays[name] = arr.reshape(0, 3)
        elif arr.ndim == 1:
            arrays[name] = arr.reshape(-1, 3)
    sat = SatId.parse(attrs["sat_id"]) if attrs.get("sat_id") else None
    ref = SatId.parse(attrs["reference_sat"]) if attrs.get("reference_sat") else None
    return ExcessPhaseSeries(
        sat, arrays["time"].astype(np.float64), arrays["excess_phase"], arrays["snr"],
        arrays["elevation"], arrays["flag"].astype(np.int64), arrays["rx_pos"], arrays["rx_vel"],
        arrays["tx_pos"], arrays["tx_vel"], Stage.SMOOTHED,
        excess_doppler=arrays["excess_doppler"], posterior_sigma=arrays["posterior_sigma"],
        reference_sat=ref,
        meta={k: attrs.get(k, "") for k in ("processing_version", "config_hash")})
