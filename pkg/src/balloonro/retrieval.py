"""Bending-angle retrieval from excess Doppler, forward bending, and partial Abel inversion.

The receiver sits inside the atmosphere, so only the part of the bending
accumulated below it is invertible.  The transmitter-side contribution is
removed with a background (topside) model before inversion.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.io import netcdf_file

from .preprocess import ExcessPhaseSeries, Flag, Stage, StageError
from .raytracer import bending_partial, total_bending


class RetrievalError(RuntimeError):
    pass


class Quality(enum.IntEnum):
    OK = 0
    FAILED = 1
    ASCENDING = 2  # ray perigee above the receiver; carries no partial bending
    NONMONOTONE = 3
    NO_GEOMETRY = 4
    NEAR_HORIZONTAL = 5  # within horizon_margin of x_r: alpha is not resolvable


@dataclass
class BendingAngleProfile:
    a: np.ndarray  # m, ascending
    alpha: np.ndarray  # rad
    t: np.ndarray
    quality: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        self.quality = np.asarray(self.quality, dtype=np.int64)
        if not (self.a.shape == self.alpha.shape == self.t.shape == self.quality.shape):
            raise ValueError("profile arrays must share one length")
        if np.any(np.diff(self.a) <= 0):
            raise ValueError("impact parameters must be strictly ascending")
        if not np.all(np.isfinite(self.alpha)):
            raise ValueError("bending angles must be finite")

    def __len__(self):
        return int(self.a.size)

    def usable(self) -> "BendingAngleProfile":
        keep = self.quality == Quality.OK
        return BendingAngleProfile(self.a[keep], self.alpha[keep], self.t[keep],
                                   self.quality[keep], dict(self.meta))


@dataclass
class RefractivityProfile:
    r: np.ndarray  # m, ascending
    N: np.ndarray  # N-units
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.N = np.asarray(self.N, dtype=float)
        if self.r.shape != self.N.shape:
            raise ValueError("r and N must have the same length")
        if np.any(np.diff(self.r) <= 0):
            raise ValueError("radii must be strictly ascending")
        if not np.all(np.isfinite(self.N)):
            raise ValueError("refractivity must be finite")

    def __len__(self):
        return int(self.r.size)

    @classmethod
    def from_model(cls, model, r) -> "RefractivityProfile":
        r = np.asarray(r, dtype=float)
        return cls(r, np.asarray(model.refractivity(r), dtype=float), {"source": "model"})


def impact_height(a, radius_of_curvature: float):
    return np.asarray(a, dtype=float) - radius_of_curvature


# --- Doppler to bending ------------------------------------------------------------

def _receiver_index(n_r, r_r: float) -> float:
    if n_r is None:
        raise RetrievalError("no receiver refractive index source (in-situ value or background model)")
    if isinstance(n_r, (int, float)):
        if not n_r >= 1.0:
            raise RetrievalError(f"receiver refractive index {n_r} < 1")
        return float(n_r)
    return float(n_r.eval(r_r)[0])


@dataclass(frozen=True)
class RaySolution:
    a: float
    alpha: float
    phi_t: float
    phi_r: float
    theta: float
    iterations: int


def solve_ray_angles(tx, vt, rx, vr, doppler: float, n_r: float, n_t: float = 1.0,
                     tol: float = 1e-12, max_iter: int = 25) -> RaySolution:
    """Ray angles at both ends matching a measured range rate.

    ``doppler`` is the rate of change of the optical path (geometric range
    rate plus excess Doppler).  Angles are measured from the local nadir
    towards the other endpoint, in the plane of tx, rx and the geocentre.
    """
    R = np.asarray(rx, float)
    T = np.asarray(tx, float)
    vt = np.asarray(vt, float)
    vr = np.asarray(vr, float)
    r_r = float(np.linalg.norm(R))
    r_t = float(np.linalg.norm(T))
    e1 = R / r_r
    w = T - (T @ e1) * e1
    wn = float(np.linalg.norm(w))
    if wn == 0.0:
        raise RetrievalError("transmitter and receiver are collinear with the geocentre")
    e2 = w / wn
    theta = math.atan2(float(np.linalg.norm(np.cross(R, T))), float(R @ T))
    Th = math.cos(theta) * e1 + math.sin(theta) * e2
    th = math.sin(theta) * e1 - math.cos(theta) * e2
    u = (T - R) / float(np.linalg.norm(T - R))
    phi_r = math.atan2(float(u @ e2), float(-u @ e1))
    phi_t = math.atan2(float(-u @ th), float(u @ Th))
    vT = (float(vt @ Th), float(vt @ th))
    vR = (float(vr @ e1), float(vr @ e2))
    for it in range(1, max_iter + 1):
        st, ct = math.sin(phi_t), math.cos(phi_t)
        sr, cr = math.sin(phi_r), math.cos(phi_r)
        # d_T = -ct Th + st th ; d_R = -cr e1 + sr e2
        vdT = -ct * vT[0] + st * vT[1]
        vdR = -cr * vR[0] + sr * vR[1]
        f1 = -n_t * vdT - n_r * vdR - doppler
        f2 = (n_t * r_t * st - n_r * r_r * sr) / r_r
        j11 = -n_t * (st * vT[0] + ct * vT[1])
        j12 = -n_r * (sr * vR[0] + cr * vR[1])
        j21 = n_t * r_t * ct / r_r
        j22 = -n_r * cr
        det = j11 * j22 - j12 * j21
        if det == 0.0 or not math.isfinite(det):
            raise RetrievalError("singular Doppler/Bouguer Jacobian")
        d1 = (f1 * j22 - f2 * j12) / det
        d2 = (j11 * f2 - j21 * f1) / det
        phi_t -= d1
        phi_r -= d2
        if max(abs(d1), abs(d2)) < tol:
            alpha = phi_t + phi_r + theta - math.pi
            return RaySolution(n_r * r_r * math.sin(phi_r), alpha, phi_t, phi_r, theta, it)
    raise RetrievalError("Doppler-to-bending Newton iteration did not converge")


def doppler_to_bending(s: ExcessPhaseSeries, n_r=None, n_t: float = 1.0,
                       max_fail_fraction: float = 0.3, rx_pos_bias=None, rx_vel_bias=None,
                       doppler_bias: float = 0.0, horizon_margin: float = 10.0
                       ) -> BendingAngleProfile:
    """Per-epoch (a, alpha) from a smoothed excess-phase series.

    ``n_r`` is an in-situ refractive index (float), a background model
    evaluated at the receiver radius, or 1.0 for a spaceborne receiver.
    The bias arguments inject receiver position/velocity or Doppler errors
    for sensitivity studies.  Descending rays with x_r - a below
    ``horizon_margin`` (m) are flagged: at a receiver angle that close to
    90 deg the Bouguer condition no longer constrains the ray direction.
    """
    if s.stage < Stage.SMOOTHED or s.excess_doppler is None:
        raise StageError("doppler_to_bending needs a smoothed series with excess Doppler")
    n = len(s)
    a = np.full(n, np.nan)
    alpha = np.full(n, np.nan)
    q = np.full(n, int(Quality.NO_GEOMETRY))
    nr_used = np.full(n, np.nan)
    attempted = 0
    failed = 0
    for k in range(n):
        R = s.rx_pos[k] + (0.0 if rx_pos_bias is None else np.asarray(rx_pos_bias))
        vR = s.rx_vel[k] + (0.0 if rx_vel_bias is None else np.asarray(rx_vel_bias))
        T, vT = s.tx_pos[k], s.tx_vel[k]
        dop = s.excess_doppler[k]
        if s.flag[k] == Flag.GAP or not (np.all(np.isfinite(R)) and np.all(np.isfinite(T))
                                        and math.isfinite(dop)):
            continue
        attempted += 1
        u = (T - R) / np.linalg.norm(T - R)
        measured = float(u @ (vT - vR)) + dop + doppler_bias
        try:
            nr = _receiver_index(n_r, float(np.linalg.norm(R)))
            sol = solve_ray_angles(T, vT, R, vR, measured, nr, n_t)
        except RetrievalError as exc:
            if "source" in str(exc) or "< 1" in str(exc):
                raise
            failed += 1
            q[k] = Quality.FAILED
            continue
        a[k], alpha[k], nr_used[k] = sol.a, sol.alpha, nr
        if sol.phi_r >= 0.5 * math.pi:
            q[k] = Quality.ASCENDING
        elif nr * float(np.linalg.norm(R)) - sol.a < horizon_margin:
            q[k] = Quality.NEAR_HORIZONTAL
        else:
            q[k] = Quality.OK
    if attempted == 0:
        raise RetrievalError("no epoch has usable geometry")
    if failed > max_fail_fraction * attempted:
        raise RetrievalError(f"{failed} of {attempted} epochs failed to solve "
                             f"(limit {max_fail_fraction:.0%})")
    # a setting occultation scans downwards: flag samples that climb back up
    order = np.argsort(s.t)
    run_min = math.inf
    for k in order:
        if q[k] != Quality.OK:
            continue
        if a[k] >= run_min:
            q[k] = Quality.NONMONOTONE
        else:
            run_min = a[k]
    keep = np.isfinite(a)
    idx = np.flatnonzero(keep)
    idx = idx[np.argsort(a[idx], kind="stable")]
    _, first = np.unique(a[idx], return_index=True)
    idx = idx[np.sort(first)]
    ok_r = np.linalg.norm(s.rx_pos[idx[q[idx] == Quality.OK]], axis=1) if idx.size else []
    meta = {
        "sat_id": str(s.sat) if s.sat is not None else "",
        "receiver_radius": float(np.median(ok_r)) if len(ok_r) else math.nan,
        "n_r": float(np.nanmedian(nr_used)) if np.any(np.isfinite(nr_used)) else math.nan,
        "failed": failed,
    }
    return BendingAngleProfile(a[idx], alpha[idx], s.t[idx], q[idx], meta)


# --- forward model ---------------------------------------------------------------

def forward_bending(model, receiver_radius: float, a_grid, x_t: float | None = None,
                    check: bool = False) -> BendingAngleProfile:
    """Bending for rays with impact parameters below the receiver.

    alpha(a) = 2 B(a, a, x_r) + B(a, x_r, x_top).  ``model`` may be an
    atmosphere model or a :class:`RefractivityProfile`.
    """
    if isinstance(model, RefractivityProfile):
        from .atmosphere import Layered
        model = Layered(model.r, model.N)
    a_grid = np.asarray(a_grid, dtype=float)
    if np.any(np.diff(a_grid) <= 0):
        raise ValueError("a grid must be strictly ascending")
    model.check_monotone(model.surface_radius, max(receiver_radius, model.surface_radius + 1.0))
    x_r = float(model.refractional_radius(receiver_radius))
    if a_grid.size and a_grid[-1] >= x_r:
        raise ValueError("impact parameters must lie below the receiver refractional radius")
    if check:
        alpha = np.array([2.0 * bending_partial(model, a, a, x_r, check=True)
                          + bending_partial(model, a, x_r, x_t or math.inf, check=True)
                          for a in a_grid])
    else:
        alpha = np.array([total_bending(model, a, x_r, x_t) for a in a_grid])
    return BendingAngleProfile(a_grid, alpha, np.full(a_grid.size, np.nan),
                               np.zeros(a_grid.size, dtype=np.int64),
                               {"receiver_radius": receiver_radius,
                                "n_r": x_r / receiver_radius})


# --- Abel inversion --------------------------------------------------------------

def abel_invert_partial(profile: BendingAngleProfile, receiver_radius: float, n_r: float,
                        topside=None, topside_id: str = "") -> RefractivityProfile:
    """Refractivity below the receiver from a bending profile.

    The transmitter-side bending of ``topside`` above x_r = n_r r_r is
    removed, then  ln n(a1) = ln n_r + (1/pi) int_{a1}^{x_r} alpha_p(a) / sqrt(a^2 - a1^2) da
    with alpha_p linear in a between samples and zero at x_r; each linear
    piece is integrated in closed form.  Radius follows from r = a1 / n(a1).
    """
    prof = profile.usable() if np.any(profile.quality != Quality.OK) else profile
    a = prof.a
    if a.size == 0:
        raise RetrievalError("empty bending profile")
    if np.any(np.diff(a) <= 0):
        raise RetrievalError("impact parameters are not strictly ascending after cleaning")
    x_r = n_r * receiver_radius
    if a[-1] >= x_r:
        raise RetrievalError(f"impact parameter {a[-1]:.1f} m is not below x_r = {x_r:.1f} m")
    if topside is None:
        if n_r > 1.0:
            raise RetrievalError("receiver is inside the atmosphere: a topside model is required")
        top = np.zeros(a.size)
    else:
        top = np.array([bending_partial(topside, ai, x_r, math.inf) for ai in a])
    ap = np.append(prof.alpha - top, 0.0)
    aa = np.append(a, x_r)
    c1 = np.diff(ap) / np.diff(aa)
    c0 = ap[:-1] - c1 * aa[:-1]
    integral = np.empty(a.size)
    for i, a1 in enumerate(a):
        lo, hi = aa[i:-1], aa[i + 1:]
        F_hi = c0[i:] * np.arccosh(hi / a1) + c1[i:] * np.sqrt((hi - a1) * (hi + a1))
        F_lo = c0[i:] * np.arccosh(lo / a1) + c1[i:] * np.sqrt((lo - a1) * (lo + a1))
        integral[i] = float(np.sum(F_hi - F_lo))
    n = n_r * np.exp(integral / math.pi)
    r = a / n
    meta = {"receiver_radius": receiver_radius, "n_r": n_r,
            "topside": topside_id or (type(topside).__name__ if topside is not None else "none")}
    return RefractivityProfile(r, (n - 1.0) * 1e6, meta)


@dataclass(frozen=True)
class BandStats:
    lo: float
    hi: float
    count: int
    mean_pct: float
    rms_pct: float


def compare_refractivity(retrieved: RefractivityProfile, reference: RefractivityProfile,
                         bands: Sequence[tuple[float, float]], r_surface: float = 0.0
                         ) -> list[BandStats]:
    """Per-band mean and RMS of the relative difference (%), heights above ``r_surface``."""
    lo, hi = max(retrieved.r[0], reference.r[0]), min(retrieved.r[-1], reference.r[-1])
    if not hi >= lo:
        raise ValueError("retrieved and reference profiles do not overlap in height")
    inside = (retrieved.r >= lo) & (retrieved.r <= hi)
    r = retrieved.r[inside]
    ref = np.interp(r, reference.r, reference.N)
    pct = 100.0 * (retrieved.N[inside] - ref) / ref
    h = r - r_surface
    out = []
    for b_lo, b_hi in bands:
        m = (h >= b_lo) & (h < b_hi)
        if m.any():
            out.append(BandStats(b_lo, b_hi, int(m.sum()), float(np.mean(pct[m])),
                                 float(np.sqrt(np.mean(pct[m] ** 2)))))
        else:
            out.append(BandStats(b_lo, b_hi, 0, math.nan, math.nan))
    return out


# --- file formats ----------------------------------------------------------------

BENDING_COLUMNS = ("a_m", "alpha_rad", "quality")
REFRACTIVITY_COLUMNS = ("r_m", "n_units")


def _columns(obj) -> dict[str, np.ndarray]:
    if isinstance(obj, BendingAngleProfile):
        return {"a_m": obj.a, "alpha_rad": obj.alpha, "quality": obj.quality, "time": obj.t}
    return {"r_m": obj.r, "n_units": obj.N}


def write_profile_csv(obj, stream) -> None:
    cols = BENDING_COLUMNS if isinstance(obj, BendingAngleProfile) else REFRACTIVITY_COLUMNS
    data = _columns(obj)
    stream.write(",".join(cols) + "\n")
    lists = [np.asarray(data[c]).tolist() for c in cols]
    for row in zip(*lists):
        stream.write(",".join(repr(v) for v in row) + "\n")


def read_profile_csv(stream):
    text = stream.read() if hasattr(stream, "read") else str(stream)
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if not rows:
        raise ValueError("empty profile file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if header[:2] == ["a_m", "alpha_rad"]:
        if "quality" not in header:
            raise ValueError("bending profile is missing column quality")
        arr = np.array([[float(v) for v in r[:3]] for r in body]).reshape(-1, 3)
        return BendingAngleProfile(arr[:, 0], arr[:, 1], np.full(len(body), np.nan),
                                   arr[:, 2].astype(np.int64))
    if header[:2] == ["r_m", "n_units"]:
        arr = np.array([[float(v) for v in r[:2]] for r in body]).reshape(-1, 2)
        return RefractivityProfile(arr[:, 0], arr[:, 1])
    raise ValueError(f"unrecognised profile header {','.join(header)}")


def write_profile_file(obj, path, attrs: Optional[dict] = None, emit_json: bool = False) -> str:
    """NetCDF classic (or JSON with identical names) for a bending or refractivity profile."""
    path = os.fspath(path)
    data = _columns(obj)
    attrs = {k: str(v) for k, v in sorted({**obj.meta, **(attrs or {})}.items())}
    kind = "bending" if isinstance(obj, BendingAngleProfile) else "refractivity"
    attrs["profile_kind"] = kind
    if emit_json:
        doc = {"format": f"balloonro-{kind}", "attributes": attrs,
               "variables": {k: [None if isinstance(x, float) and not math.isfinite(x) else x
                                 for x in np.asarray(v).tolist()] for k, v in data.items()}}
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
            f.write("\n")
        return path
    with netcdf_file(path, "w", version=1) as f:
        for k, v in attrs.items():
            setattr(f, k, v)
        f.createDimension("sample", len(obj))
        for k, v in data.items():
            var = f.createVariable(k, "i4" if k == "quality" else "f8", ("sample",))
            if len(obj):
                var[:] = v
    return path


def read_profile_file(path):
    path = os.fspath(path)
    with open(path, "rb") as fh:
        magic = fh.read(3)
    if magic == b"CDF":
        with netcdf_file(path, "r", mmap=False) as f:
            data = {k: np.array(v[:]) for k, v in f.variables.items()}
            attrs = {k: (v.decode() if isinstance(v, bytes) else str(v))
                     for k, v in f._attributes.items()}
    else:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        attrs = doc.get("attributes", {})
        data = {k: np.array([np.nan if x is None else x for x in v], dtype=float)
                for k, v in doc["variables"].items()}
    kind = attrs.pop("profile_kind", "")
    if kind == "bending":
        for name in ("a_m", "alpha_rad", "quality"):
            if name not in data:
                raise ValueError(f"bending profile is missing variable '{name}'")
        return BendingAngleProfile(data["a_m"], data["alpha_rad"],
                                   data.get("time", np.full(data["a_m"].size, np.nan)),
                                   data["quality"].astype(np.int64), attrs)
    for name in ("r_m", "n_units"):
        if name not in data:
            raise ValueError(f"refractivity profile is missing variable '{name}'")
    return RefractivityProfile(data["r_m"], data["n_units"], attrs)
