"""Poisson maximum-likelihood estimation of channel parameters.

Per-slot absorbed counts are modeled as independent Poisson variables with
means lambda_m = n_tx * [F'(t_m) - F'(t_{m-1})].  Newton-Raphson climbs the
log-likelihood in d, D, or both; the Fisher information of the same slot
grid gives the Cramer-Rao benchmark the Monte Carlo error is compared to.

All lambda derivatives come from central differences of the slot means
(relative steps 1e-5 for first, 1e-3 for second derivatives), which keeps
the estimator independent of the increasingly unwieldy closed-form
parameter derivatives.

Monte Carlo helpers evaluate whole batches of trials at once: every Newton
iteration sweeps all still-active trials through one vectorized model
evaluation, which is what makes 1000-trial error curves cheap.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .channel import ChannelGeometry, CorrectionParams, _corrected_core
from .errors import ConfigurationError, DegenerateGridError, DomainError, IllPosedGridError
from .simulate import ObservationSet

__all__ = [
    "EstimationResult",
    "FisherInfo",
    "LAMBDA_FLOOR",
    "slot_means",
    "log_likelihood",
    "score_and_hessian",
    "estimate_d",
    "estimate_D",
    "estimate_joint",
    "fisher_crlb",
    "sample_observations",
    "estimate_batch",
]

LAMBDA_FLOOR = 1e-12

_REL_STEP_1 = 1e-5  # first-derivative central step, relative to theta
_REL_STEP_2 = 1e-3  # second-derivative central step, relative to theta

_TOL = 1e-6
_MAX_ITER = 100
_FALLBACK_FRAC = 0.1  # damped ascent step as a fraction of the range width
_BACKTRACK_MAX = 40  # step halvings before declaring the iterate stationary
_SCAN_1D = 65  # scalar-case rescue-scan resolution
_SCAN_2D = 21  # per-axis resolution of the joint-case rescue scan


@dataclass(frozen=True)
class EstimationResult:
    theta_hat: dict  # {"d": value} and/or {"D": value}
    iterations: int
    trace: np.ndarray  # iterates including the starting point
    converged: bool
    loglik: float


@dataclass(frozen=True)
class FisherInfo:
    matrix: np.ndarray  # 1x1 or 2x2, symmetric positive definite
    crlb: np.ndarray  # diagonal of the matrix inverse


def _lambda_batch(d, R, D, n_tx, p: CorrectionParams, times, consistent_prefactor):
    """Slot means for (possibly vectorized) d and/or D: shape (..., M)."""
    t = np.asarray(times, dtype=float)
    F = _corrected_core(d, R, D, t[None, :], p.beta, p.b1, p.b2, p.b3, consistent_prefactor)
    F = np.atleast_2d(F)
    lam = n_tx * np.diff(np.concatenate([np.zeros((F.shape[0], 1)), F], axis=1), axis=1)
    return np.maximum(lam, LAMBDA_FLOOR)


def _check_grid(times):
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ConfigurationError("sample grid must be a non-empty 1-d array")
    if t[0] <= 0 or np.any(np.diff(t) <= 0):
        raise ConfigurationError("sample times must be positive and strictly increasing")
    return t


def slot_means(geom: ChannelGeometry, p: CorrectionParams, times, *, consistent_prefactor: bool = False):
    """Expected newly absorbed counts per slot; floored at LAMBDA_FLOOR.

    Raises DegenerateGridError when every slot sits at the floor, i.e. the
    grid carries no usable signal.
    """
    t = _check_grid(times)
    lam = _lambda_batch(
        np.atleast_1d(float(geom.d))[:, None],
        geom.R,
        geom.D,
        geom.n_tx,
        p,
        t,
        consistent_prefactor,
    )[0]
    if np.all(lam <= LAMBDA_FLOOR):
        raise DegenerateGridError("all slot means at the numerical floor")
    return lam


def log_likelihood(obs: ObservationSet, geom: ChannelGeometry, p: CorrectionParams, *, consistent_prefactor: bool = False) -> float:
    lam = slot_means(geom, p, obs.times, consistent_prefactor=consistent_prefactor)
    s = obs.counts
    if np.any((lam <= LAMBDA_FLOOR) & (s > 0)):
        warnings.warn("observed counts in a slot whose model mean is at the floor", stacklevel=2)
    return float(np.sum(s * np.log(lam) - gammaln(s + 1.0) - lam))


def _lambda_and_partials(geom, p, times, which, consistent_prefactor):
    """lambda, first and second partials (and cross term for joint)."""
    t = np.asarray(times, dtype=float)
    d0, D0 = float(geom.d), float(geom.D)

    def lam_at(dv, Dv):
        return _lambda_batch(
            np.atleast_1d(dv)[:, None], geom.R, Dv, geom.n_tx, p, t, consistent_prefactor
        )[0]

    lam = lam_at(d0, D0)
    out = {"lam": lam}
    if which in ("d", "joint"):
        h1, h2 = _REL_STEP_1 * d0, _REL_STEP_2 * d0
        out["ld"] = (lam_at(d0 + h1, D0) - lam_at(d0 - h1, D0)) / (2 * h1)
        out["ldd"] = (lam_at(d0 + h2, D0) - 2 * lam + lam_at(d0 - h2, D0)) / (h2 * h2)
    if which in ("D", "joint"):
        h1, h2 = _REL_STEP_1 * D0, _REL_STEP_2 * D0
        out["lD"] = (lam_at(d0, D0 + h1) - lam_at(d0, D0 - h1)) / (2 * h1)
        out["lDD"] = (lam_at(d0, D0 + h2) - 2 * lam + lam_at(d0, D0 - h2)) / (h2 * h2)
    if which == "joint":
        hd, hD = _REL_STEP_2 * d0, _REL_STEP_2 * D0
        out["ldD"] = (
            lam_at(d0 + hd, D0 + hD)
            - lam_at(d0 + hd, D0 - hD)
            - lam_at(d0 - hd, D0 + hD)
            + lam_at(d0 - hd, D0 - hD)
        ) / (4 * hd * hD)
    return out


def score_and_hessian(obs: ObservationSet, geom: ChannelGeometry, p: CorrectionParams, which: str, *, consistent_prefactor: bool = False):
    """Gradient and Hessian of the Poisson log-likelihood at geom's (d, D).

    Scalar cases return floats; the joint case returns a 2-vector and a
    symmetric 2x2 matrix ordered (d, D).
    """
    if which not in ("d", "D", "joint"):
        raise DomainError("which must be 'd', 'D', or 'joint'")
    parts = _lambda_and_partials(geom, p, obs.times, which, consistent_prefactor)
    lam = parts["lam"]
    s = np.asarray(obs.counts, dtype=float)
    resid = s / lam - 1.0
    w = s / (lam * lam)

    def h_block(la, lb, lab):
        return float(np.sum(-w * la * lb + resid * lab))

    if which == "d":
        g = float(np.sum(resid * parts["ld"]))
        H = h_block(parts["ld"], parts["ld"], parts["ldd"])
        return g, H
    if which == "D":
        g = float(np.sum(resid * parts["lD"]))
        H = h_block(parts["lD"], parts["lD"], parts["lDD"])
        return g, H
    g = np.array([np.sum(resid * parts["ld"]), np.sum(resid * parts["lD"])])
    H = np.array(
        [
            [h_block(parts["ld"], parts["ld"], parts["ldd"]), h_block(parts["ld"], parts["lD"], parts["ldD"])],
            [h_block(parts["ld"], parts["lD"], parts["ldD"]), h_block(parts["lD"], parts["lD"], parts["lDD"])],
        ]
    )
    return g, H


def _scan_points(which, d_lo, d_hi, D_lo, D_hi, geom):
    """Coarse likelihood-scan points covering the admissible box."""
    if which == "d":
        gd = np.linspace(d_lo, d_hi, _SCAN_1D)
        return gd, np.full_like(gd, float(geom.D))
    if which == "D":
        gD = np.linspace(D_lo, D_hi, _SCAN_1D)
        return np.full_like(gD, float(geom.d)), gD
    dd, DD = np.meshgrid(np.linspace(d_lo, d_hi, _SCAN_2D), np.linspace(D_lo, D_hi, _SCAN_2D))
    return dd.ravel(), DD.ravel()


def estimate_batch(
    counts: np.ndarray,
    geom: ChannelGeometry,
    p: CorrectionParams,
    times,
    which: str,
    d_range=None,
    D_range=None,
    *,
    consistent_prefactor: bool = False,
):
    """Vectorized Newton-Raphson over a (trials, M) count matrix.

    Returns (theta_hat, iterations, converged) with theta_hat of shape
    (trials,) for scalar cases or (trials, 2) for the joint case.  Newton
    steps use the analytic Poisson score/curvature built from differenced
    slot means; iterates are clamped to their ranges, and any trial whose
    curvature loses negative-definiteness takes a damped ascent step of
    0.1x the range width instead.  Every step is backtracked until it no
    longer lowers the likelihood, so iterates ascend monotonically and a
    trial that cannot improve stops where it stands.

    Ascent is local, so each trial is cross-checked against a coarse
    likelihood scan of the admissible box: a clamped corner whose score
    points outside the box is a stationary point the iteration cannot
    leave even when better interior points exist.  Any trial the scan
    strictly beats restarts its ascent from the best scan point.
    """
    if which not in ("d", "D", "joint"):
        raise DomainError("which must be 'd', 'D', or 'joint'")
    t = _check_grid(times)
    S = np.atleast_2d(np.asarray(counts, dtype=float))
    n_trials = S.shape[0]
    if S.shape[1] != t.size:
        raise ConfigurationError("counts and sample grid sizes differ")

    est_d = which in ("d", "joint")
    est_D = which in ("D", "joint")
    if est_d and d_range is None:
        raise ConfigurationError("d_range required")
    if est_D and D_range is None:
        raise ConfigurationError("D_range required")

    d_lo, d_hi = (float(d_range[0]), float(d_range[1])) if est_d else (geom.d, geom.d)
    D_lo, D_hi = (float(D_range[0]), float(D_range[1])) if est_D else (geom.D, geom.D)
    if not (d_lo < d_hi or not est_d) or not (D_lo < D_hi or not est_D):
        raise ConfigurationError("parameter ranges must be non-degenerate")

    def lam_of(dvec, Dvec):
        return _lambda_batch(dvec[:, None], geom.R, Dvec[:, None], geom.n_tx, p, t, consistent_prefactor)

    def ascend(Sa, d_start, D_start):
        """Backtracked Newton ascent for one block of trials.

        Monotone in likelihood, so the final iterate is also the best one
        seen; returns it together with its log-likelihood (additive count
        constant dropped).
        """
        dv = np.asarray(d_start, dtype=float).copy()
        Dv = np.asarray(D_start, dtype=float).copy()
        n = Sa.shape[0]
        active = np.ones(n, dtype=bool)
        iters = np.zeros(n, dtype=int)
        converged = np.zeros(n, dtype=bool)
        ll_out = np.full(n, -np.inf)

        for _ in range(_MAX_ITER):
            if not active.any():
                break
            da, Da, Sact = dv[active], Dv[active], Sa[active]
            lam = lam_of(da, Da)
            resid = Sact / lam - 1.0
            w = Sact / (lam * lam)

            if est_d:
                h1 = _REL_STEP_1 * da
                ld = (lam_of(da + h1, Da) - lam_of(da - h1, Da)) / (2 * h1[:, None])
                h2 = _REL_STEP_2 * da
                ldd = (lam_of(da + h2, Da) - 2 * lam + lam_of(da - h2, Da)) / (h2 * h2)[:, None]
            if est_D:
                h1 = _REL_STEP_1 * Da
                lD = (lam_of(da, Da + h1) - lam_of(da, Da - h1)) / (2 * h1[:, None])
                h2 = _REL_STEP_2 * Da
                lDD = (lam_of(da, Da + h2) - 2 * lam + lam_of(da, Da - h2)) / (h2 * h2)[:, None]

            if which == "joint":
                hd = _REL_STEP_2 * da
                hD = _REL_STEP_2 * Da
                ldD = (
                    lam_of(da + hd, Da + hD)
                    - lam_of(da + hd, Da - hD)
                    - lam_of(da - hd, Da + hD)
                    + lam_of(da - hd, Da - hD)
                ) / (4 * hd * hD)[:, None]

                g1 = np.sum(resid * ld, axis=1)
                g2 = np.sum(resid * lD, axis=1)
                H11 = np.sum(-w * ld * ld + resid * ldd, axis=1)
                H22 = np.sum(-w * lD * lD + resid * lDD, axis=1)
                H12 = np.sum(-w * ld * lD + resid * ldD, axis=1)
                det = H11 * H22 - H12 * H12
                fro2 = H11 * H11 + 2 * H12 * H12 + H22 * H22
                neg_def = (H11 < 0) & (det > 1e-12 * fro2)
                safe_det = np.where(np.abs(det) > 1e-300, det, 1.0)
                sd = np.where(neg_def, -(H22 * g1 - H12 * g2) / safe_det, _FALLBACK_FRAC * (d_hi - d_lo) * np.sign(g1))
                sD = np.where(neg_def, -(H11 * g2 - H12 * g1) / safe_det, _FALLBACK_FRAC * (D_hi - D_lo) * np.sign(g2))
            elif which == "d":
                g = np.sum(resid * ld, axis=1)
                H = np.sum(-w * ld * ld + resid * ldd, axis=1)
                sd = np.where(H < 0, -g / np.where(H < 0, H, -1.0), _FALLBACK_FRAC * (d_hi - d_lo) * np.sign(g))
                sD = np.zeros_like(sd)
            else:
                g = np.sum(resid * lD, axis=1)
                H = np.sum(-w * lD * lD + resid * lDD, axis=1)
                sD = np.where(H < 0, -g / np.where(H < 0, H, -1.0), _FALLBACK_FRAC * (D_hi - D_lo) * np.sign(g))
                sd = np.zeros_like(sD)

            # accept each trial's step only once it no longer lowers the
            # likelihood, halving per trial as needed; trials whose clamped
            # candidate cannot move are stationary and stop here
            ll_cur = np.sum(Sact * np.log(lam) - lam, axis=1)
            new_d, new_D = da.copy(), Da.copy()
            ll_new = ll_cur.copy()
            alpha = np.ones(da.size)
            need = np.ones(da.size, dtype=bool)
            for _ in range(_BACKTRACK_MAX):
                if not need.any():
                    break
                td = np.clip(da[need] + alpha[need] * sd[need], d_lo, d_hi)
                tD = np.clip(Da[need] + alpha[need] * sD[need], D_lo, D_hi)
                moved = (td != da[need]) | (tD != Da[need])
                lam_t = lam_of(td, tD)
                ll_t = np.sum(Sact[need] * np.log(lam_t) - lam_t, axis=1)
                ok = moved & (ll_t > ll_cur[need])
                rows = np.flatnonzero(need)
                new_d[rows[ok]] = td[ok]
                new_D[rows[ok]] = tD[ok]
                ll_new[rows[ok]] = ll_t[ok]
                need[rows[ok]] = False
                need[rows[~moved]] = False
                alpha[need] *= 0.5
            rel = np.maximum(
                np.abs(new_d - da) / np.maximum(np.abs(da), 1e-30),
                np.abs(new_D - Da) / np.maximum(np.abs(Da), 1e-30),
            )

            iters[active] += 1
            done = rel < _TOL
            idx = np.flatnonzero(active)
            dv[idx] = new_d
            Dv[idx] = new_D
            ll_out[idx] = ll_new
            converged[idx[done]] = True
            active[idx[done]] = False
        return dv, Dv, iters, converged, ll_out

    d0 = np.full(n_trials, 0.5 * (d_lo + d_hi) if est_d else geom.d)
    D0 = np.full(n_trials, 0.5 * (D_lo + D_hi) if est_D else geom.D)
    dv, Dv, iters, converged, ll_end = ascend(S, d0, D0)

    # rescue scan: redo any trial a coarse box scan strictly beats
    gd, gD = _scan_points(which, d_lo, d_hi, D_lo, D_hi, geom)
    lam_g = lam_of(gd, gD)
    ll_g = S @ np.log(lam_g).T - np.sum(lam_g, axis=1)
    kbest = np.argmax(ll_g, axis=1)
    scan_ll = ll_g[np.arange(n_trials), kbest]
    redo = scan_ll > ll_end + 1e-9 * np.abs(ll_end)
    if redo.any():
        idx = np.flatnonzero(redo)
        d2, D2, it2, conv2, _ = ascend(S[idx], gd[kbest[idx]], gD[kbest[idx]])
        dv[idx] = d2
        Dv[idx] = D2
        iters[idx] += it2
        converged[idx] = conv2

    if which == "d":
        theta = dv
    elif which == "D":
        theta = Dv
    else:
        theta = np.column_stack([dv, Dv])
    return theta, iters, converged


def _single_estimate(obs, geom, p, which, d_range, D_range, consistent_prefactor):
    # scalar Newton path with trace capture; mirrors estimate_batch,
    # including the rescue scan over the admissible box
    t = _check_grid(obs.times)

    est_d = which in ("d", "joint")
    est_D = which in ("D", "joint")
    d_lo, d_hi = (float(d_range[0]), float(d_range[1])) if est_d else (geom.d, geom.d)
    D_lo, D_hi = (float(D_range[0]), float(D_range[1])) if est_D else (geom.D, geom.D)

    def _ll_at(d_val, D_val):
        # solver probes legitimately pass through floored regions; the
        # floored-slot warning is for direct model evaluation only
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return log_likelihood(
                obs, geom.replace(d=d_val, D=D_val), p, consistent_prefactor=consistent_prefactor
            )

    trace = []

    def record(d_val, D_val):
        if which == "d":
            trace.append(d_val)
        elif which == "D":
            trace.append(D_val)
        else:
            trace.append((d_val, D_val))

    def ascend(dv, Dv, ll):
        converged = False
        it = 0
        while it < _MAX_ITER and not converged:
            g, H = score_and_hessian(
                ObservationSet(times=t, counts=obs.counts, n_tx=obs.n_tx),
                geom.replace(d=dv, D=Dv),
                p,
                which,
                consistent_prefactor=consistent_prefactor,
            )
            if which == "joint":
                ev = np.linalg.eigvalsh(H)
                if ev.max() < 0 and abs(np.linalg.det(H)) > 1e-12 * np.linalg.norm(H) ** 2:
                    step = -np.linalg.solve(H, g)
                else:
                    step = _FALLBACK_FRAC * np.array([d_hi - d_lo, D_hi - D_lo]) * np.sign(g)
            else:
                lo, hi = (d_lo, d_hi) if which == "d" else (D_lo, D_hi)
                if H < 0:
                    step = np.array([-g / H])
                else:
                    step = np.array([_FALLBACK_FRAC * (hi - lo) * np.sign(g)])

            # backtrack until the (clamped) step stops decreasing the
            # likelihood; the raw Newton step can run downhill far from the
            # optimum even with a negative-definite local Hessian
            cur_d, cur_D = dv, Dv
            alpha = 1.0
            for _ in range(_BACKTRACK_MAX):
                cand_d = float(np.clip(cur_d + alpha * (step[0] if which != "D" else 0.0), d_lo, d_hi))
                cand_D = float(np.clip(cur_D + alpha * (step[-1] if which != "d" else 0.0), D_lo, D_hi))
                if cand_d == cur_d and cand_D == cur_D:
                    break
                cand_ll = _ll_at(cand_d, cand_D)
                if cand_ll > ll:
                    dv, Dv, ll = cand_d, cand_D, cand_ll
                    break
                alpha *= 0.5
            rel = max(
                abs(dv - cur_d) / max(abs(cur_d), 1e-30),
                abs(Dv - cur_D) / max(abs(cur_D), 1e-30),
            )
            it += 1
            record(dv, Dv)
            converged = rel < _TOL
        return dv, Dv, ll, it, converged

    dv = 0.5 * (d_lo + d_hi) if est_d else geom.d
    Dv = 0.5 * (D_lo + D_hi) if est_D else geom.D
    record(dv, Dv)
    dv, Dv, ll, it, converged = ascend(dv, Dv, _ll_at(dv, Dv))

    # rescue scan, as in estimate_batch: a clamped corner can pose as a
    # maximum, so restart wherever a coarse scan of the box strictly wins
    S_row = np.asarray(obs.counts, dtype=float)
    gd, gD = _scan_points(which, d_lo, d_hi, D_lo, D_hi, geom)
    lam_g = _lambda_batch(gd[:, None], geom.R, gD[:, None], geom.n_tx, p, t, consistent_prefactor)
    ll_g = np.sum(S_row[None, :] * np.log(lam_g) - lam_g, axis=1) - float(np.sum(gammaln(S_row + 1.0)))
    k = int(np.argmax(ll_g))
    if ll_g[k] > ll + 1e-9 * abs(ll):
        record(float(gd[k]), float(gD[k]))
        dv, Dv, ll, it2, converged = ascend(float(gd[k]), float(gD[k]), float(ll_g[k]))
        it += it2

    if which == "d":
        theta = {"d": dv}
    elif which == "D":
        theta = {"D": Dv}
    else:
        theta = {"d": dv, "D": Dv}
    return EstimationResult(
        theta_hat=theta,
        iterations=it,
        trace=np.asarray(trace, dtype=float),
        converged=converged,
        loglik=ll,
    )


def estimate_d(obs: ObservationSet, geom: ChannelGeometry, p: CorrectionParams, d_range, *, consistent_prefactor: bool = False) -> EstimationResult:
    """ML estimate of d with D known (taken from geom.D); geom.d is ignored."""
    return _single_estimate(obs, geom, p, "d", d_range, None, consistent_prefactor)


def estimate_D(obs: ObservationSet, geom: ChannelGeometry, p: CorrectionParams, D_range, *, consistent_prefactor: bool = False) -> EstimationResult:
    """ML estimate of D with d known (taken from geom.d)."""
    return _single_estimate(obs, geom, p, "D", None, D_range, consistent_prefactor)


def estimate_joint(obs: ObservationSet, geom: ChannelGeometry, p: CorrectionParams, d_range, D_range, *, consistent_prefactor: bool = False) -> EstimationResult:
    """Joint ML estimate of (d, D) via the 2x2 Newton system."""
    return _single_estimate(obs, geom, p, "joint", d_range, D_range, consistent_prefactor)


def fisher_crlb(geom: ChannelGeometry, p: CorrectionParams, times, which: str, *, consistent_prefactor: bool = False) -> FisherInfo:
    """Fisher information I_uw = sum_m lambda_u lambda_w / lambda at geom's truth.

    The Poisson expectation is taken analytically; no sampling involved.
    """
    if which not in ("d", "D", "joint"):
        raise DomainError("which must be 'd', 'D', or 'joint'")
    parts = _lambda_and_partials(geom, p, _check_grid(times), which, consistent_prefactor)
    lam = parts["lam"]
    cols = []
    if which in ("d", "joint"):
        cols.append(parts["ld"])
    if which in ("D", "joint"):
        cols.append(parts["lD"])
    k = len(cols)
    I = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            I[i, j] = np.sum(cols[i] * cols[j] / lam)
    det = np.linalg.det(I)
    if not np.isfinite(det) or abs(det) < 1e-300:
        raise IllPosedGridError("Fisher information singular on this grid")
    crlb = np.diag(np.linalg.inv(I)).copy()
    if np.any(crlb <= 0):
        raise IllPosedGridError("non-positive CRLB diagonal")
    return FisherInfo(matrix=I, crlb=crlb)


def sample_observations(
    geom: ChannelGeometry,
    p: CorrectionParams,
    times,
    n_trials: int,
    seed: int,
    *,
    consistent_prefactor: bool = False,
) -> np.ndarray:
    """Poisson count matrix (n_trials, M) drawn at the model slot means.

    Trial i uses a generator seeded from (seed, i), so a given trial's draw
    does not depend on the total trial count or on execution order.
    """
    lam = slot_means(geom, p, times, consistent_prefactor=consistent_prefactor)
    out = np.empty((int(n_trials), lam.size))
    for i in range(int(n_trials)):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        out[i] = rng.poisson(lam)
    return out
