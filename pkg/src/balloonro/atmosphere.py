"""Spherically symmetric refractivity models.

Two variants are provided: :class:`Exponential` (analytic) and
:class:`Layered` (log-linear between levels with a fitted exponential
topside).  Both expose the same small protocol used by the ray tracer and
the retrieval:

* ``eval(r)`` -> ``(n, dn_dr)``
* ``refractivity(r)`` -> N-units
* ``surface_radius`` / ``top_radius``
* ``breakpoints`` (radii where ``dn/dr`` is discontinuous)
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

K1_DRY = 77.6  # K/hPa
K2_WET = 3.73e5  # K^2/hPa

# refractivity below which the medium is treated as vacuum
N_VACUUM = 1e-9


class SuperRefractionError(ValueError):
    """x(r) = n(r) r is not strictly increasing on the requested span."""


@dataclass(frozen=True)
class MetLevel:
    p: float  # hPa
    T: float  # K
    e: float  # hPa
    z: float  # m

    def __post_init__(self):
        if not (self.p > 0 and self.T > 0 and 0 <= self.e < self.p):
            raise ValueError(f"invalid met level {self}")


def refractivity_smith_weintraub(level: MetLevel, k1: float = K1_DRY,
                                 k2: float = K2_WET) -> float:
    return k1 * level.p / level.T + k2 * level.e / level.T ** 2


class _Model:
    surface_radius: float

    def refractivity(self, r):
        raise NotImplementedError

    def dlnN_dr(self, r):
        raise NotImplementedError

    @property
    def top_radius(self) -> float:
        raise NotImplementedError

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return ()

    def eval(self, r):
        """Refractive index and its radial derivative at radius ``r``."""
        N = self.refractivity(r)
        n = 1.0 + 1e-6 * N
        return n, 1e-6 * N * self.dlnN_dr(r)

    def refractional_radius(self, r):
        n, _ = self.eval(r)
        return n * np.asarray(r, dtype=float)

    def scale_height(self, r: float) -> float:
        """Local refractivity scale height, clipped to [500 m, 20 km]."""
        g = -float(self.dlnN_dr(r))
        if not g > 0:
            return 7000.0
        return min(max(1.0 / g, 500.0), 20000.0)

    def radius_from_x(self, x, iterations: int = 12):
        """Invert x = n(r) r by Newton iteration (vectorised)."""
        x = np.asarray(x, dtype=float)
        r = x.copy()
        for _ in range(iterations):
            n, dn = self.eval(r)
            step = (n * r - x) / (n + r * dn)
            r = r - step
            if np.all(np.abs(step) < 1e-7):
                break
        return r

    def check_monotone(self, r_lo: float, r_hi: float, samples: int = 2000) -> None:
        """Raise :class:`SuperRefractionError` if dx/dr <= 0 anywhere in [r_lo, r_hi]."""
        rr = np.linspace(r_lo, r_hi, samples)
        extra = [b for b in self.breakpoints if r_lo <= b <= r_hi]
        if extra:
            rr = np.sort(np.concatenate([rr, extra, np.nextafter(extra, 0)]))
        n, dn = self.eval(rr)
        dxdr = n + rr * dn
        bad = np.nonzero(dxdr <= 0)[0]
        if bad.size:
            raise SuperRefractionError(
                f"super-refraction between r={rr[bad[0]]:.1f} m and r={rr[bad[-1]]:.1f} m")

    def is_monotone(self, r_lo: float, r_hi: float) -> bool:
        try:
            self.check_monotone(r_lo, r_hi)
        except SuperRefractionError:
            return False
        return True


@dataclass(frozen=True)
class Exponential(_Model):
    """N(r) = N0 exp(-(r - r0)/H)."""

    N0: float
    H: float
    r0: float

    def __post_init__(self):
        if self.N0 < 0 or self.H <= 0 or self.r0 <= 0:
            raise ValueError("Exponential model needs N0 >= 0, H > 0, r0 > 0")

    @property
    def surface_radius(self) -> float:
        return self.r0

    @property
    def top_radius(self) -> float:
        if self.N0 <= N_VACUUM:
            return self.r0
        return self.r0 + self.H * math.log(self.N0 / N_VACUUM)

    def refractivity(self, r):
        return self.N0 * np.exp(-(np.asarray(r, dtype=float) - self.r0) / self.H)

    def dlnN_dr(self, r):
        return np.full(np.shape(r), -1.0 / self.H) if np.ndim(r) else -1.0 / self.H

    def eval(self, r):
        N = self.refractivity(r)
        return 1.0 + 1e-6 * N, -1e-6 * N / self.H


@dataclass(frozen=True, eq=False)
class Layered(_Model):
    """Refractivity on ascending radii, ln N linear between levels.

    Below the lowest level the first segment's log-slope is continued; above
    the top level N decays with the scale height of the top two levels.
    """

    r: np.ndarray
    N: np.ndarray
    _lnN: np.ndarray = field(init=False, repr=False)
    _slope: np.ndarray = field(init=False, repr=False)
    H_top: float = field(init=False)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        N = np.asarray(self.N, dtype=float)
        if r.ndim != 1 or r.shape != N.shape or r.size < 4:
            raise ValueError("Layered model needs >= 4 levels with matching r and N")
        if np.any(np.diff(r) <= 0):
            raise ValueError("Layered radii must be strictly ascending")
        if np.any(N < 0) or not np.all(np.isfinite(N)):
            raise ValueError("refractivity must be finite and non-negative")
        lnN = np.log(np.maximum(N, 1e-30))
        slope = np.diff(lnN) / np.diff(r)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "_lnN", lnN)
        object.__setattr__(self, "_slope", slope)
        top_slope = slope[-1]
        H_top = -1.0 / top_slope if top_slope < 0 else 7000.0
        object.__setattr__(self, "H_top", float(H_top))

    @property
    def surface_radius(self) -> float:
        return float(self.r[0])

    @property
    def top_radius(self) -> float:
        Nt = float(self.N[-1])
        if Nt <= N_VACUUM:
            return float(self.r[-1])
        return float(self.r[-1]) + self.H_top * math.log(Nt / N_VACUUM)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(self.r.tolist())

    def _segment(self, r):
        return np.clip(np.searchsorted(self.r, r, side="right") - 1, 0, self.r.size - 2)

    def dlnN_dr(self, r):
        r = np.asarray(r, dtype=float)
        k = self._segment(r)
        out = self._slope[k]
        out = np.where(r > self.r[-1], -1.0 / self.H_top, out)
        return out if out.ndim else float(out)

    def refractivity(self, r):
        r = np.asarray(r, dtype=float)
        k = self._segment(r)
        lnN = self._lnN[k] + self._slope[k] * (r - self.r[k])
        top = self._lnN[-1] - (r - self.r[-1]) / self.H_top
        lnN = np.where(r > self.r[-1], top, lnN)
        out = np.where(lnN < -60.0, 0.0, np.exp(lnN))
        return out if out.ndim else float(out)


def layered_from_met(levels: Sequence[MetLevel], r0: float) -> Layered:
    if len(levels) < 4:
        raise ValueError("need at least 4 met levels")
    z = np.array([lv.z for lv in levels], dtype=float)
    if np.any(np.diff(z) <= 0):
        raise ValueError("met level heights must be strictly ascending")
    N = np.array([refractivity_smith_weintraub(lv) for lv in levels])
    return Layered(r0 + z, N)


def layered_from_refractivity(z, N, r0: float) -> Layered:
    return Layered(r0 + np.asarray(z, dtype=float), np.asarray(N, dtype=float))


def _csv_rows(stream) -> Iterable[list[str]]:
    text = stream.read() if hasattr(stream, "read") else str(stream)
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    return csv.reader(io.StringIO("\n".join(lines)))


def read_met_csv(stream) -> list[MetLevel]:
    """Layered profile CSV with columns ``z_m,p_hpa,t_k,e_hpa``."""
    rows = list(_csv_rows(stream))
    if not rows:
        raise ValueError("empty met profile")
    header = [h.strip() for h in rows[0]]
    need = ["z_m", "p_hpa", "t_k", "e_hpa"]
    missing = [c for c in need if c not in header]
    if missing:
        raise ValueError(f"met profile missing column {missing[0]}")
    idx = [header.index(c) for c in need]
    out = []
    for row in rows[1:]:
        z, p, t, e = (float(row[i]) for i in idx)
        out.append(MetLevel(p=p, T=t, e=e, z=z))
    return out


def read_refractivity_csv(stream) -> tuple[np.ndarray, np.ndarray]:
    """Refractivity CSV with columns ``z_m,n_units``; returns (z, N)."""
    rows = list(_csv_rows(stream))
    if not rows:
        raise ValueError("empty refractivity profile")
    header = [h.strip() for h in rows[0]]
    for col in ("z_m", "n_units"):
        if col not in header:
            raise ValueError(f"refractivity profile missing column {col}")
    iz, iN = header.index("z_m"), header.index("n_units")
    data = np.array([[float(r[iz]), float(r[iN])] for r in rows[1:]])
    return data[:, 0], data[:, 1]


def write_refractivity_csv(stream, z, N) -> None:
    stream.write("z_m,n_units\n")
    for zi, Ni in zip(np.asarray(z, float).tolist(), np.asarray(N, float).tolist()):
        stream.write(f"{zi!r},{Ni!r}\n")
