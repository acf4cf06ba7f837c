"""Closed-form channel model for a diffusive SISO link.

A point release diffuses from the surface of a spherical transmitter toward
a spherical receiver whose effective capture region is a reception cone of
half-angle beta.  The model family is

    F'(t) = b1 * R/(d+R) * erfc(d/yn) * Omega(t, yn, beta) / U(t, yn)

with the corrected diffusion scale yn = (4D)^b2 * t^b3.  Setting beta = pi,
b1 = 1, b2 = b3 = 1/2 (and matching the prefactors of Omega and U)
collapses the family onto the ideal full-absorption fraction
F(t) = R/(d+R) * erfc(d / sqrt(4Dt)).

All erfc evaluations use the rational approximation from `special`, whose
closed-form derivative yields an analytical impulse response.  The two
bracket functions Omega and U share every structural term, so their ratio
is computed with a guard that maps the deep-tail 0/0 limit to its true
value of 1.

Stability notes: U crosses zero inside the sub-second window for fast
geometries under either prefactor convention.  As printed
(`consistent_prefactor=False`) Omega carries 1/sqrt(2 pi D t) while U
carries 1/sqrt(D t), so the two never cancel and the ratio is singular
at the crossing even at beta = pi.  With consistent prefactors the
beta = pi brackets are identical and the guarded ratio is exactly 1
everywhere; for beta < pi the two zero crossings split slightly and a
narrow pole survives between them, which fitting layers must screen
for.  Experiment pipelines therefore run with consistent prefactors
and score fits on the full sampling grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scipy.special import exp1 as _scipy_exp1

from .errors import DomainError, NumericalInstabilityError
from .special import erfc_approx, erfc_approx_derivative

__all__ = [
    "ChannelGeometry",
    "CorrectionParams",
    "IDEAL_PARAMS",
    "CumulativeHitCurve",
    "f_ideal",
    "x_of_beta",
    "omega",
    "u_denominator",
    "f_corrected",
    "f_corrected_batch",
    "impulse_response",
    "param_partials",
]

_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


@dataclass(frozen=True)
class ChannelGeometry:
    """Channel constants: distances and radii in um, D in um^2/s."""

    d: float  # Tx surface to Rx surface gap
    R: float  # receiver radius
    r: float  # transmitter radius
    D: float  # diffusion coefficient
    n_tx: int = 3000  # molecules per release

    def __post_init__(self):
        if not (self.d > 0 and self.R > 0 and self.r > 0 and self.D > 0):
            raise DomainError("geometry requires d, R, r, D all > 0")
        if self.n_tx < 1:
            raise DomainError("n_tx must be >= 1")

    def replace(self, **kw) -> "ChannelGeometry":
        merged = dict(d=self.d, R=self.R, r=self.r, D=self.D, n_tx=self.n_tx)
        merged.update(kw)
        return ChannelGeometry(**merged)


@dataclass(frozen=True)
class CorrectionParams:
    """Reception-cone half-angle and the three fitted correction factors."""

    beta: float
    b1: float
    b2: float
    b3: float

    def __post_init__(self):
        if not (0.0 < self.beta <= np.pi + 1e-12):
            raise DomainError("beta must lie in (0, pi]")
        if not (self.b1 > 0 and self.b2 > 0 and self.b3 > 0):
            raise DomainError("b1, b2, b3 must be > 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.beta, self.b1, self.b2, self.b3])


#: Uncorrected reference point: full sphere, unit scale, ideal sqrt(4Dt).
IDEAL_PARAMS = CorrectionParams(beta=np.pi, b1=1.0, b2=0.5, b3=0.5)


@dataclass(frozen=True)
class CumulativeHitCurve:
    """Cumulative absorbed fraction sampled on a strictly increasing grid."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.ndim != 1 or v.shape != t.shape:
            raise DomainError("times and values must be 1-d arrays of equal length")
        if t.size == 0:
            raise DomainError("curve must be non-empty")
        if not (np.all(np.diff(t) > 0) and t[0] > 0):
            raise DomainError("times must be positive and strictly increasing")
        if np.any(v < -1e-12) or np.any(v > 1.0 + 1e-12):
            raise DomainError("values must lie in [0, 1]")
        if np.any(np.diff(v) < -1e-12):
            raise DomainError("values must be non-decreasing")

    def __len__(self) -> int:
        return int(self.times.size)


def _check_times(t):
    arr = np.asarray(t, dtype=float)
    scalar = arr.ndim == 0
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise DomainError("time must be finite and > 0")
    return arr, scalar


def f_ideal(geom: ChannelGeometry, t):
    """Full-absorption hitting fraction R/(d+R) * erfc(d/sqrt(4Dt))."""
    arr, scalar = _check_times(t)
    y = np.sqrt(4.0 * geom.D * arr)
    out = geom.R / (geom.d + geom.R) * erfc_approx(geom.d / y)
    return float(out) if scalar else out


def x_of_beta(geom: ChannelGeometry, beta):
    """Distance from the release point to the reception-cone boundary."""
    b = np.asarray(beta, dtype=float)
    if np.any(b < 0) or np.any(b > np.pi + 1e-12):
        raise DomainError("beta must lie in [0, pi]")
    s = geom.R + geom.d
    x2 = s * s - 2.0 * s * geom.R * np.cos(b) + geom.R * geom.R
    out = np.sqrt(x2)
    return float(out) if b.ndim == 0 else out


def _ei_neg_sq(c):
    """Ei(-c^2) with over/underflow tolerated; c may be huge or inf."""
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        out = -_scipy_exp1(np.minimum(c * c, 1e300))
    return np.where(np.isfinite(out), out, 0.0)


def _bracket_terms(xx, y, q):
    """erfc/Ei pair of the absorption brackets: the term at radius xx.

    The Ei factor underflows for xx/y beyond ~27; the erfc approximation
    keeps a representable power-law tail far past that, so the difference
    of two brackets stays meaningful instead of collapsing to 0 - 0.
    """
    c = xx / y
    return erfc_approx(c) / xx + q * _ei_neg_sq(c)


def omega(geom: ChannelGeometry, t, y, beta):
    """Cone-restricted bracket of the absorption integral (prefactor 1/sqrt(2 pi D t))."""
    arr, scalar = _check_times(t)
    yv = np.asarray(y, dtype=float)
    if np.any(yv <= 0):
        raise DomainError("y must be > 0")
    if not (0.0 < beta <= np.pi + 1e-12):
        raise DomainError("beta must lie in (0, pi]")
    q = 1.0 / np.sqrt(2.0 * np.pi * geom.D * arr)
    xb = x_of_beta(geom, beta)
    out = _bracket_terms(geom.d, yv, q) - _bracket_terms(xb, yv, q)
    return float(out) if scalar else out


def u_denominator(geom: ChannelGeometry, t, y, consistent_prefactor: bool = False):
    """Full-sphere normalization bracket, evaluated at x = d + 2R.

    As printed the prefactor is 1/sqrt(D t); `consistent_prefactor=True`
    matches omega's 1/sqrt(2 pi D t) instead, making the beta = pi
    numerator bit-identical to U so the guarded ratio collapses to 1.
    U on its own is not sign-definite: it crosses zero inside the
    sub-second window for fast geometries under both conventions.
    """
    arr, scalar = _check_times(t)
    yv = np.asarray(y, dtype=float)
    if np.any(yv <= 0):
        raise DomainError("y must be > 0")
    if consistent_prefactor:
        q = 1.0 / np.sqrt(2.0 * np.pi * geom.D * arr)
    else:
        q = 1.0 / np.sqrt(geom.D * arr)
    xp = geom.d + 2.0 * geom.R
    out = _bracket_terms(geom.d, yv, q) - _bracket_terms(xp, yv, q)
    return float(out) if scalar else out


def _corrected_core(d, R, D, t, beta, b1, b2, b3, consistent_prefactor):
    """Shared broadcast evaluation.

    Any of d, D, beta, b1, b2, b3 may be arrays of shape (..., 1) against a
    time axis of shape (T,); geometry batching is what the ML estimator
    uses to sweep candidate parameter values in one pass.
    """
    yn = (4.0 * D) ** b2 * t**b3
    q_om = 1.0 / np.sqrt(2.0 * np.pi * D * t)
    q_u = q_om if consistent_prefactor else 1.0 / np.sqrt(D * t)
    s = R + d
    xb = np.sqrt(s * s - 2.0 * s * R * np.cos(beta) + R * R)
    xp = d + 2.0 * R
    with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
        om = _bracket_terms(d, yn, q_om) - _bracket_terms(xb, yn, q_om)
        uu = _bracket_terms(d, yn, q_u) - _bracket_terms(xp, yn, q_u)
        ratio = np.where(uu != 0.0, om / uu, 1.0)
        ratio = np.where(np.isfinite(ratio), ratio, 1.0)
        prefac = b1 * (R / (d + R)) * erfc_approx(d / yn)
    return prefac * ratio


def f_corrected(geom: ChannelGeometry, p: CorrectionParams, t, *, consistent_prefactor: bool = False):
    """Corrected cumulative fraction F'(t) of Eq-(5) form."""
    arr, scalar = _check_times(t)
    out = _corrected_core(
        geom.d, geom.R, geom.D, np.atleast_1d(arr), p.beta, p.b1, p.b2, p.b3, consistent_prefactor
    )
    return float(out[0]) if scalar else out


def f_corrected_batch(geom: ChannelGeometry, params, t, *, consistent_prefactor: bool = False):
    """Vectorized F' over parameter rows: params (P, 4) x times (T,) -> (P, T).

    Used by the swarm fitter, where the whole population is evaluated in
    one broadcast sweep.
    """
    P = np.asarray(params, dtype=float)
    if P.ndim != 2 or P.shape[1] != 4:
        raise DomainError("params must have shape (P, 4)")
    arr, _ = _check_times(t)
    tt = np.atleast_1d(arr)[None, :]
    beta = P[:, 0:1]
    if np.any(beta <= 0) or np.any(beta > np.pi + 1e-12):
        raise DomainError("beta column must lie in (0, pi]")
    return _corrected_core(
        geom.d, geom.R, geom.D, tt, beta, P[:, 1:2], P[:, 2:3], P[:, 3:4], consistent_prefactor
    )


def impulse_response(geom: ChannelGeometry, p: CorrectionParams, t, *, consistent_prefactor: bool = False):
    """Analytical dF'/dt assembled by the product rule.

    Uses the closed-form derivative of the rational erfc and the identity
    d/dt Ei(-c^2) = -2 (yn'/yn) exp(-c^2) for c = const / yn, plus the
    explicit 1/sqrt(t) dependence of the prefactors.
    """
    arr, scalar = _check_times(t)
    tt = np.atleast_1d(arr)
    d, R, D = geom.d, geom.R, geom.D
    beta, b1, b2, b3 = p.beta, p.b1, p.b2, p.b3

    yn = (4.0 * D) ** b2 * tt**b3
    ynp = b3 * yn / tt  # d yn / dt
    q_om = 1.0 / np.sqrt(2.0 * np.pi * D * tt)
    q_u = q_om if consistent_prefactor else 1.0 / np.sqrt(D * tt)
    xb = x_of_beta(geom, beta)
    xp = d + 2.0 * R

    with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):

        def bracket(xx, q):
            return _bracket_terms(xx, yn, q)

        def bracket_dt(xx, q, qp):
            # time derivative of erfc(c)/xx + q*Ei(-c^2) at fixed xx
            c = xx / yn
            cdot = -xx * ynp / yn**2
            e = np.exp(-np.minimum(c * c, 1e300))
            term_erfc = erfc_approx_derivative(c) * cdot / xx
            term_ei = qp * _ei_neg_sq(c) + q * (-2.0 * ynp / yn) * e
            return term_erfc + term_ei

        qp_om = -q_om / (2.0 * tt)
        qp_u = -q_u / (2.0 * tt)

        om = bracket(d, q_om) - bracket(xb, q_om)
        uu = bracket(d, q_u) - bracket(xp, q_u)
        dom = bracket_dt(d, q_om, qp_om) - bracket_dt(xb, q_om, qp_om)
        duu = bracket_dt(d, q_u, qp_u) - bracket_dt(xp, q_u, qp_u)

        ratio = np.where(uu != 0.0, om / uu, 1.0)
        ratio = np.where(np.isfinite(ratio), ratio, 1.0)
        dratio = np.where(uu != 0.0, (dom - ratio * duu) / uu, 0.0)
        dratio = np.where(np.isfinite(dratio), dratio, 0.0)

        cd = d / yn
        cddot = -d * ynp / yn**2
        C = R / (d + R)
        out = b1 * C * (
            erfc_approx_derivative(cd) * cddot * ratio + erfc_approx(cd) * dratio
        )
    return float(out[0]) if scalar else out


def param_partials(geom: ChannelGeometry, p: CorrectionParams, t, which: str, *, consistent_prefactor: bool = False):
    """First and second partials of the impulse response w.r.t. d or D.

    Central differences with relative steps 1e-5 (first) and 1e-3 (second),
    cross-checked against a doubled step; a gross disagreement between the
    two stencils raises `NumericalInstabilityError`.
    """
    if which not in ("d", "D"):
        raise DomainError("which must be 'd' or 'D'")
    arr, scalar = _check_times(t)
    tt = np.atleast_1d(arr)
    theta = getattr(geom, which)

    def f_at(v):
        return impulse_response(
            geom.replace(**{which: v}), p, tt, consistent_prefactor=consistent_prefactor
        )

    h1 = 1e-5 * theta
    h2 = 1e-3 * theta
    first = (f_at(theta + h1) - f_at(theta - h1)) / (2.0 * h1)
    first_2h = (f_at(theta + 2 * h1) - f_at(theta - 2 * h1)) / (4.0 * h1)
    f0 = f_at(theta)
    second = (f_at(theta + h2) - 2.0 * f0 + f_at(theta - h2)) / (h2 * h2)
    second_2h = (f_at(theta + 2 * h2) - 2.0 * f0 + f_at(theta - 2 * h2)) / (4.0 * h2 * h2)

    scale1 = np.max(np.abs(first)) + 1e-30
    scale2 = np.max(np.abs(second)) + 1e-30
    if np.max(np.abs(first - first_2h)) > 0.05 * scale1 + 1e-12:
        raise NumericalInstabilityError("first-derivative stencil did not converge")
    if np.max(np.abs(second - second_2h)) > 0.2 * scale2 + 1e-12:
        raise NumericalInstabilityError("second-derivative stencil did not converge")

    if scalar:
        return float(first[0]), float(second[0])
    return first, second
