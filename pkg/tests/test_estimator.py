"""Poisson ML estimation and Fisher/CRLB machinery.

The likelihood oracle is scipy.stats.poisson; derivative oracles are
central differences of the log-likelihood itself.
"""

import numpy as np
import pytest
from scipy import stats

from mcchannel import (
    ChannelGeometry,
    ConfigurationError,
    CorrectionParams,
    DegenerateGridError,
    DomainError,
    ObservationSet,
    estimate_D,
    estimate_d,
    estimate_joint,
    fisher_crlb,
    log_likelihood,
    slot_means,
)
from mcchannel.estimate import sample_observations, score_and_hessian

GEOM = ChannelGeometry(d=6.0, R=5.0, r=5.0, D=100.0, n_tx=3000)
P = CorrectionParams(beta=np.pi, b1=1.0, b2=0.5, b3=0.5)
GRID = np.linspace(0.02, 1.0, 15)
D_RANGE = (1.0, 12.0)
DIFF_RANGE = (20.0, 300.0)
CP = dict(consistent_prefactor=True)


def noiseless_obs(geom=GEOM, times=GRID, exact=False):
    # exact=True keeps the fractional means (criterion for all-case
    # recovery); exact=False rounds to integers like a real count record
    lam = slot_means(geom, P, times, **CP)
    counts = lam if exact else np.rint(lam)
    return ObservationSet(times=times, counts=counts, n_tx=geom.n_tx)


def test_slot_means_partition_identity():
    from mcchannel import f_corrected

    lam = slot_means(GEOM, P, GRID, **CP)
    total = GEOM.n_tx * f_corrected(GEOM, P, GRID[-1], **CP)
    assert lam.sum() == pytest.approx(total, rel=1e-12)
    assert np.all(lam > 0)


def test_slot_means_degenerate_grid_raises():
    # nanosecond-scale sampling: nothing has arrived yet anywhere
    with pytest.raises(DegenerateGridError):
        slot_means(GEOM, P, np.array([1e-9, 2e-9, 3e-9]), **CP)


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        slot_means(GEOM, P, np.array([0.0, 0.1]), **CP)
    with pytest.raises(ConfigurationError):
        slot_means(GEOM, P, np.array([0.2, 0.1]), **CP)


def test_log_likelihood_matches_scipy_poisson():
    obs = noiseless_obs()
    lam = slot_means(GEOM, P, GRID, **CP)
    expect = stats.poisson.logpmf(obs.counts, lam).sum()
    assert log_likelihood(obs, GEOM, P, **CP) == pytest.approx(expect, rel=1e-12)


def test_score_matches_likelihood_differences():
    obs = noiseless_obs()
    for which in ("d", "D"):
        theta = getattr(GEOM, which)
        h = 1e-4 * theta
        lp = log_likelihood(obs, GEOM.replace(**{which: theta + h}), P, **CP)
        lm = log_likelihood(obs, GEOM.replace(**{which: theta - h}), P, **CP)
        fd_score = (lp - lm) / (2 * h)
        score, hess = score_and_hessian(obs, GEOM, P, which, **CP)
        assert score == pytest.approx(fd_score, rel=1e-3, abs=1e-6)
        l0 = log_likelihood(obs, GEOM, P, **CP)
        fd_hess = (lp - 2 * l0 + lm) / (h * h)
        assert hess == pytest.approx(fd_hess, rel=2e-2)


def test_joint_score_components_match_scalar_cases():
    obs = noiseless_obs()
    sd, _ = score_and_hessian(obs, GEOM, P, "d", **CP)
    sD, _ = score_and_hessian(obs, GEOM, P, "D", **CP)
    sj, Hj = score_and_hessian(obs, GEOM, P, "joint", **CP)
    assert sj.shape == (2,) and Hj.shape == (2, 2)
    assert sj[0] == pytest.approx(sd, rel=1e-12)
    assert sj[1] == pytest.approx(sD, rel=1e-12)
    assert Hj[0, 1] == Hj[1, 0]


def test_score_rejects_unknown_parameter():
    with pytest.raises(DomainError):
        score_and_hessian(noiseless_obs(), GEOM, P, "R", **CP)


def test_noiseless_d_recovery():
    res = estimate_d(noiseless_obs(), GEOM, P, D_RANGE, **CP)
    assert res.converged
    assert res.theta_hat["d"] == pytest.approx(6.0, rel=5e-3)
    assert res.iterations <= 100
    # the trace starts at the range midpoint per the update contract
    assert res.trace[0] == pytest.approx(np.mean(D_RANGE))


def test_noiseless_D_recovery():
    res = estimate_D(noiseless_obs(), GEOM, P, DIFF_RANGE, **CP)
    assert res.converged
    assert res.theta_hat["D"] == pytest.approx(100.0, rel=5e-3)


def test_noiseless_joint_recovery():
    # exact means: the score is zero at the truth, so the joint Newton
    # system should land essentially on it; integer rounding would leak
    # ~1% into the weakly identified d-D direction
    res = estimate_joint(noiseless_obs(exact=True), GEOM, P, D_RANGE, DIFF_RANGE, **CP)
    assert res.converged
    assert res.theta_hat["d"] == pytest.approx(6.0, rel=1e-4)
    assert res.theta_hat["D"] == pytest.approx(100.0, rel=1e-4)


def test_score_near_zero_at_estimate():
    obs = noiseless_obs()
    res = estimate_d(obs, GEOM, P, D_RANGE, **CP)
    at_start = abs(score_and_hessian(obs, GEOM.replace(d=np.mean(D_RANGE)), P, "d", **CP)[0])
    at_hat = abs(score_and_hessian(obs, GEOM.replace(d=res.theta_hat["d"]), P, "d", **CP)[0])
    assert at_hat < 1e-4 * at_start


def test_single_trial_poisson_estimate_is_reasonable():
    counts = sample_observations(GEOM, P, GRID, 1, seed=42, **CP)[0]
    obs = ObservationSet(times=GRID, counts=counts, n_tx=GEOM.n_tx)
    res = estimate_d(obs, GEOM, P, D_RANGE, **CP)
    assert res.converged
    assert abs(res.theta_hat["d"] - 6.0) < 1.0


def test_fisher_matrix_properties():
    info_d = fisher_crlb(GEOM, P, GRID, "d", **CP)
    info_D = fisher_crlb(GEOM, P, GRID, "D", **CP)
    info_j = fisher_crlb(GEOM, P, GRID, "joint", **CP)
    assert info_d.matrix.shape == (1, 1) and info_d.matrix[0, 0] > 0
    assert info_d.crlb[0] == pytest.approx(1.0 / info_d.matrix[0, 0], rel=1e-12)
    M = info_j.matrix
    assert M[0, 1] == M[1, 0]
    eigs = np.linalg.eigvalsh(M)
    assert np.all(eigs > 0)
    # estimating a nuisance alongside can only lose information
    assert info_j.crlb[0] >= info_d.crlb[0]
    assert info_j.crlb[1] >= info_D.crlb[0]


def test_crlb_shrinks_with_more_samples():
    crlbs = []
    for M in (5, 10, 15, 20, 30):
        times = np.linspace(0.02, 1.0, M)
        crlbs.append(fisher_crlb(GEOM, P, times, "d", **CP).crlb[0])
    assert np.all(np.diff(crlbs) < 0)


def test_fisher_rejects_unknown_case():
    with pytest.raises(DomainError):
        fisher_crlb(GEOM, P, GRID, "both", **CP)


def test_sample_observations_trial_count_invariance():
    few = sample_observations(GEOM, P, GRID, 3, seed=9, **CP)
    many = sample_observations(GEOM, P, GRID, 5, seed=9, **CP)
    assert np.array_equal(few, many[:3])
    assert few.shape == (3, GRID.size)


def test_sample_observations_poisson_mean():
    lam = slot_means(GEOM, P, GRID, **CP)
    draws = sample_observations(GEOM, P, GRID, 2000, seed=17, **CP)
    se = np.sqrt(lam / 2000)
    assert np.all(np.abs(draws.mean(axis=0) - lam) < 5 * se + 1e-9)


def test_observation_set_validation():
    with pytest.raises(ConfigurationError):
        ObservationSet(times=GRID, counts=-np.ones_like(GRID), n_tx=3000)
    with pytest.raises(ConfigurationError):
        ObservationSet(times=GRID, counts=np.full_like(GRID, 1000.0), n_tx=3000)
