"""Geometrical-optics ray tracing in a spherically symmetric atmosphere.

Bending and optical path are evaluated as impact-parameter integrals in the
refractional radius x = n(r) r.  The inverse-square-root singularity at the
ray perigee is removed by substituting x = a cosh(u); the u-axis is cut
into Gauss-Legendre panels whose widths grow geometrically away from the
perigee in units of the local scale height (plus any model breakpoints).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .atmosphere import SuperRefractionError
from .core import GeometryError, TimeLike, as_seconds, elevation_azimuth
from .geometry import light_time_range

_GL_NODES = 12
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_NODES)


class RayError(RuntimeError):
    """No geometric-optics ray connects the two points."""


@dataclass(frozen=True)
class RayResult:
    a: float
    alpha: float
    tangent_radius: float
    excess_path: float
    converged: bool
    iterations: int
    descending: bool = True
    phi_low: float = math.nan
    phi_high: float = math.nan


def _u_of(d, a):
    """u with a cosh(u) = a + d, accurate for small d."""
    eps = np.asarray(d, dtype=float) / a
    return np.log1p(eps + np.sqrt(eps * (2.0 + eps)))


def _panels(model, a: float, x_lo: float, x_hi: float, refine: int) -> np.ndarray:
    r_a = float(model.radius_from_x(max(a, x_lo)))
    H = model.scale_height(max(r_a, model.surface_radius))
    d_lo, d_hi = x_lo - a, x_hi - a
    steps = H / 64.0 * 2.0 ** np.arange(0, 64)
    # grow from the perigee and, for segments starting well above it, from the lower end
    q = np.concatenate([steps, d_lo + steps]) if d_lo > 0 else steps
    q = q[(q > d_lo) & (q < d_hi)]
    bps = [b for b in model.breakpoints]
    if bps:
        xb = np.asarray(model.refractional_radius(np.asarray(bps))) - a
        q = np.concatenate([q, xb[(xb > d_lo) & (xb < d_hi)]])
    d = np.unique(np.concatenate([[d_lo], q, [d_hi]]))
    u = _u_of(d, a)
    for _ in range(refine):
        u = np.sort(np.concatenate([u, 0.5 * (u[1:] + u[:-1])]))
    return u


def _segment(model, a: float, x_lo: float, x_hi: float, refine: int = 0,
             need_path: bool = True) -> tuple[float, float]:
    """Bending and optical-path excess over one one-sided segment [max(a,x_lo), x_hi].

    Returns ``(bending, path_integral)`` where ``path_integral`` is
    int x (n/x' - 1) du, the non-vacuum part of int n ds.
    """
    x_lo = max(a, x_lo)
    if x_hi <= x_lo:
        return 0.0, 0.0
    u = _panels(model, a, x_lo, x_hi, refine)
    half = 0.5 * np.diff(u)
    mid = 0.5 * (u[1:] + u[:-1])
    un = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    wn = (half[:, None] * _GL_W[None, :]).ravel()
    x = a + 2.0 * a * np.sinh(0.5 * un) ** 2
    r = model.radius_from_x(x)
    n, dn = model.eval(r)
    xp = n + r * dn
    if np.any(xp <= 0):
        bad = r[xp <= 0]
        raise SuperRefractionError(
            f"super-refraction between r={bad.min():.1f} m and r={bad.max():.1f} m")
    bend = float(np.sum(wn * (-a * (dn / n) / xp)))
    path = float(np.sum(wn * (-x * r * dn / xp))) if need_path else 0.0
    return bend, path


def _x_top(model) -> float:
    return float(model.refractional_radius(model.top_radius))


def bending_partial(model, a: float, x_lo: float, x_hi: float, check: bool = False) -> float:
    """One-sided bending  -a * int d(ln n)/dx / sqrt(x^2 - a^2) dx  over [max(a, x_lo), x_hi].

    With ``check=True`` the panel set is halved once and the result is
    required to agree to 1e-6 relative (absolute floor 1e-14 rad).
    """
    x_hi = min(x_hi, _x_top(model))
    b, _ = _segment(model, a, x_lo, x_hi, need_path=False)
    if check:
        b2, _ = _segment(model, a, x_lo, x_hi, refine=1, need_path=False)
        if abs(b2 - b) > max(1e-6 * abs(b2), 1e-14):
            raise ArithmeticError(f"bending quadrature not converged: {b} vs {b2}")
        return b2
    return b


def total_bending(model, a: float, x_r: float, x_t: float | None = None,
                  descending: bool = True) -> float:
    """Bending of a ray with impact parameter ``a`` between a receiver at
    refractional radius ``x_r`` and a transmitter at ``x_t`` (vacuum if None)."""
    x_top = _x_top(model) if x_t is None else min(x_t, _x_top(model))
    upper = bending_partial(model, a, x_r, x_top)
    if descending:
        return 2.0 * bending_partial(model, a, a, x_r) + upper
    return upper


def solve_connection(model, tx_pos, rx_pos, tol: float = 1e-10, max_iter: int = 100) -> RayResult:
    """Find the GO ray joining two points in a spherically symmetric medium.

    The unknown is the angle at the lower endpoint between the nadir and the
    ray direction towards the other endpoint; it fixes the impact parameter
    and whether the perigee lies between the endpoints.  The residual is the
    closure of  phi_low + phi_high + theta - pi = alpha(a).
    """
    p1 = np.asarray(rx_pos, dtype=float)
    p2 = np.asarray(tx_pos, dtype=float)
    r1, r2 = float(np.linalg.norm(p1)), float(np.linalg.norm(p2))
    chord = float(np.linalg.norm(p2 - p1))
    if chord == 0.0:
        raise GeometryError("transmitter and receiver coincide")
    x1 = float(model.refractional_radius(r1))
    x2 = float(model.refractional_radius(r2))
    if x1 <= x2:
        x_low, x_high, r_low = x1, x2, r1
    else:
        x_low, x_high, r_low = x2, x1, r2
    theta = math.atan2(float(np.linalg.norm(np.cross(p1, p2))), float(p1 @ p2))
    r_surf = model.surface_radius
    if r_low < r_surf:
        raise RayError("endpoint below the model surface")
    x_surf = float(model.refractional_radius(r_surf))
    x_top = _x_top(model)
    model.check_monotone(r_surf, min(max(r1, r2), model.top_radius))

    def parts(phi):
        a = x_low * math.sin(phi)
        desc = phi < 0.5 * math.pi
        phi_high = math.asin(min(1.0, a / x_high))
        upper = bending_partial(model, a, x_low, min(x_high, x_top)) if x_low < x_top else 0.0
        alpha = upper + (2.0 * bending_partial(model, a, a, x_low) if desc else 0.0)
        return a, desc, phi_high, alpha

    def f(phi):
        _, _, phi_high, alpha = parts(phi)
        return phi + phi_high + theta - math.pi - alpha

    # straight chord angle at the low endpoint
    p_low, p_high = (p1, p2) if x1 <= x2 else (p2, p1)
    d = (p_high - p_low) / chord
    phi0 = math.acos(max(-1.0, min(1.0, float(-p_low @ d) / float(np.linalg.norm(p_low)))))
    phi_min = math.asin(min(1.0, x_surf / x_low))
    phi_max = math.pi - 1e-12
    start = min(max(phi0, phi_min), phi_max)
    f0 = f(start)
    evals = 1
    # f increases with phi; walk away from the chord angle until the sign flips
    step = max(4.0 * abs(f0), 1e-7)
    if abs(f0) <= 0.01 * tol:
        lo = hi = start
    elif f0 < 0:
        lo, hi = start, start
        while True:
            if hi >= phi_max:
                raise RayError("no bracket for the connecting ray")
            lo, hi = hi, min(hi + step, phi_max)
            f_hi = f(hi)
            evals += 1
            if f_hi >= 0:
                break
            step *= 4.0
    else:
        lo, hi = start, start
        while True:
            if lo <= phi_min:
                raise RayError("ray would need a perigee below the surface (shadow zone)")
            hi, lo = lo, max(lo - step, phi_min)
            f_lo = f(lo)
            evals += 1
            if f_lo <= 0:
                break
            step *= 4.0
    if lo == hi:
        phi = lo
    else:
        phi, res = brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=max_iter,
                          full_output=True, disp=False)
        evals += res.function_calls
        if not res.converged:
            raise RayError("connecting-ray solve did not converge")
    resid = f(phi)
    converged = abs(resid) < tol
    if not converged:
        raise RayError(f"closure residual {resid:.3e} rad exceeds {tol:.1e}")

    a, desc, phi_high, alpha = parts(phi)
    x_hi_eff = min(x_high, x_top)
    _, e_up = _segment(model, a, x_low, x_hi_eff)
    if desc:
        _, e_low = _segment(model, a, a, x_low)
        path = math.sqrt(max(x_low ** 2 - a ** 2, 0.0)) + math.sqrt(x_high ** 2 - a ** 2) + 2.0 * e_low + e_up
        r_tan = float(model.radius_from_x(a))
    else:
        path = math.sqrt(x_high ** 2 - a ** 2) - math.sqrt(x_low ** 2 - a ** 2) + e_up
        r_tan = r_low
    return RayResult(a=a, alpha=alpha, tangent_radius=r_tan, excess_path=path - chord,
                     converged=converged, iterations=evals, descending=desc,
                     phi_low=phi, phi_high=phi_high)


# --- occultation simulation ---------------------------------------------------

@dataclass
class SimSeries:
    """Per-epoch simulated observables and truth."""

    t: np.ndarray
    excess_phase: np.ndarray  # m
    excess_doppler: np.ndarray  # m/s
    true_alpha: np.ndarray
    true_a: np.ndarray
    elevation: np.ndarray
    ok: np.ndarray  # bool, False where the ray solve failed
    range: np.ndarray
    rx_pos: np.ndarray
    rx_vel: np.ndarray
    tx_pos: np.ndarray
    tx_vel: np.ndarray
    descending: np.ndarray
    tangent_radius: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size


def hover(pos, vel=(0.0, 0.0, 0.0)) -> Callable[[float], tuple[np.ndarray, np.ndarray]]:
    """Receiver trajectory fixed in the Earth-fixed frame."""
    p, v = np.asarray(pos, float), np.asarray(vel, float)
    return lambda t: (p + v * 0.0, v)


def trajectory_from_states(states) -> Callable[[float], tuple[np.ndarray, np.ndarray]]:
    """Linear interpolation of a platform state list (PlatformState-like)."""
    t = np.array([s.t for s in states])
    pos = np.array([s.pos for s in states], float)
    vel = np.array([s.vel for s in states], float)

    def at(tt):
        if not t[0] <= tt <= t[-1]:
            raise ValueError(f"t={tt} outside receiver trajectory")
        return (np.array([np.interp(tt, t, pos[:, k]) for k in range(3)]),
                np.array([np.interp(tt, t, vel[:, k]) for k in range(3)]))

    return at


def finite_difference(t: np.ndarray, y: np.ndarray, ok: np.ndarray) -> np.ndarray:
    """Centred differences on each contiguous valid span, one-sided at span ends."""
    out = np.full_like(y, np.nan, dtype=float)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return out
    breaks = np.flatnonzero(np.diff(idx) > 1)
    for span in np.split(idx, breaks + 1):
        if span.size >= 2:
            out[span] = np.gradient(y[span], t[span])
        else:
            out[span] = 0.0
    return out


def simulate_occultation(model, tx, rx, times: Sequence[float] | None = None,
                         t_start: TimeLike | None = None, t_end: TimeLike | None = None,
                         dt: float = 1.0, sagnac: bool = True) -> SimSeries:
    """Simulate excess phase/Doppler along a transmitter/receiver geometry.

    ``tx`` is any orbit source understood by :func:`geometry.sat_state`;
    ``rx`` is a callable ``t -> (pos, vel)`` (see :func:`hover`).  Failed ray
    solves are flagged per epoch and the series continues.
    """
    if times is None:
        t0, t1 = as_seconds(t_start), as_seconds(t_end)
        if t1 - t0 < 2 * dt:
            raise ValueError("simulation span must cover at least two steps")
        times = t0 + dt * np.arange(int(round((t1 - t0) / dt)) + 1)
    times = np.asarray(times, dtype=float)
    n = times.size
    ex = np.full(n, np.nan)
    al = np.full(n, np.nan)
    aa = np.full(n, np.nan)
    rt = np.full(n, np.nan)
    el = np.empty(n)
    rng = np.empty(n)
    ok = np.zeros(n, bool)
    desc = np.zeros(n, bool)
    rxp, rxv, txp, txv = (np.empty((n, 3)) for _ in range(4))
    for k, t in enumerate(times):
        p, v = rx(t)
        lt = light_time_range(p, tx, t, rx_vel=v, sagnac=sagnac)
        rxp[k], rxv[k], txp[k], txv[k] = p, v, lt.pos, lt.vel
        rng[k] = lt.range
        el[k] = elevation_azimuth(p, lt.pos)[0]
        try:
            ray = solve_connection(model, lt.pos, p)
        except (RayError, SuperRefractionError):
            continue
        ex[k], al[k], aa[k], rt[k] = ray.excess_path, ray.alpha, ray.a, ray.tangent_radius
        desc[k] = ray.descending
        ok[k] = True
    dop = finite_difference(times, ex, ok)
    return SimSeries(times, ex, dop, al, aa, el, ok, rng, rxp, rxv, txp, txv, desc, rt)
