"""Brownian-walk simulator: determinism, physics sanity, observation slotting."""

import numpy as np
import pytest

from mcchannel import (
    ChannelGeometry,
    ConfigurationError,
    CorrectionParams,
    CumulativeHitCurve,
    SimulationConfig,
    erfc_exact,
    observe_increments,
    simulate,
    slot_means,
)
from mcchannel.config import DEFAULT_CONFIG

GEOM = ChannelGeometry(d=2.0, R=5.0, r=5.0, D=100.0, n_tx=1500)


def quick_cfg(**kw):
    base = dict(geom=GEOM, dt=5e-4, t_end=0.05, seed=7)
    base.update(kw)
    return SimulationConfig(**base)


def test_same_seed_bit_identical():
    a = simulate(quick_cfg())
    b = simulate(quick_cfg())
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.times, b.times)


def test_different_seeds_differ():
    a = simulate(quick_cfg(seed=1))
    b = simulate(quick_cfg(seed=2))
    assert not np.array_equal(a.values, b.values)


def test_worker_count_does_not_change_results():
    # blocks own their own (seed, block) streams, so the dispatch mode
    # cannot matter
    a = simulate(quick_cfg(workers=1))
    b = simulate(quick_cfg(workers=2))
    assert np.array_equal(a.values, b.values)


def test_curve_shape_and_bounds():
    c = simulate(quick_cfg())
    assert len(c) == 100
    assert c.times[0] == pytest.approx(5e-4)
    assert c.times[-1] == pytest.approx(0.05)
    assert np.all(np.diff(c.values) >= 0)
    assert c.values[-1] <= 1.0


def test_frozen_diffusion_never_absorbs():
    g = ChannelGeometry(d=2.0, R=5.0, r=5.0, D=1e-9, n_tx=500)
    c = simulate(SimulationConfig(geom=g, dt=5e-4, t_end=0.05, seed=3))
    assert np.all(c.values == 0.0)


@pytest.mark.slow
def test_far_cell_terminal_fraction_matches_hitting_probability():
    # the free-space point-source law is the physical oracle once the
    # transmitter sphere is shrunk to a speck (a finite reflecting source
    # raises absorption well above it); averaged over 20 seeds
    g = ChannelGeometry(d=10.0, R=5.0, r=0.05, D=100.0, n_tx=3000)
    vals = []
    for seed in range(20):
        c = simulate(SimulationConfig(geom=g, dt=50e-6, t_end=1.0, seed=seed))
        vals.append(c.values[-1])
    expect = g.R / (g.d + g.R) * erfc_exact(g.d / np.sqrt(4 * g.D * 1.0))
    assert abs(float(np.mean(vals)) - expect) < 0.01


def test_doubling_molecules_halves_standard_error():
    small = ChannelGeometry(d=2.0, R=5.0, r=5.0, D=100.0, n_tx=256)
    big = ChannelGeometry(d=2.0, R=5.0, r=5.0, D=100.0, n_tx=1024)
    ends_small, ends_big = [], []
    for seed in range(50):
        ends_small.append(simulate(SimulationConfig(geom=small, dt=5e-4, t_end=0.05, seed=seed)).values[-1])
        ends_big.append(simulate(SimulationConfig(geom=big, dt=5e-4, t_end=0.05, seed=seed)).values[-1])
    ratio = np.std(ends_small) / np.std(ends_big)
    # 4x molecules -> 2x smaller standard error, within Monte Carlo slack
    assert 1.5 < ratio < 2.7


@pytest.mark.slow
def test_step_refinement_stays_within_noise():
    # halving dt moves the terminal fraction by less than twice the
    # pooled Monte Carlo standard error (boundary detection bias check)
    g = ChannelGeometry(d=2.0, R=5.0, r=5.0, D=100.0, n_tx=3000)
    coarse = simulate(SimulationConfig(geom=g, dt=50e-6, t_end=1.0, seed=11)).values[-1]
    fine = simulate(SimulationConfig(geom=g, dt=25e-6, t_end=1.0, seed=11)).values[-1]
    se = np.sqrt(2.0 * coarse * (1.0 - coarse) / g.n_tx)
    assert abs(fine - coarse) < 2.0 * se


@pytest.mark.slow
def test_slot_counts_track_calibrated_model():
    # end-to-end pin: a production-step walk, sliced into the estimator's
    # slot grid, stays within shot-noise scale of the slot means computed
    # with the calibrated correction constants
    e = DEFAULT_CONFIG.estimation
    g = ChannelGeometry(d=4.0, R=5.0, r=5.0, D=100.0, n_tx=3000)
    c = simulate(SimulationConfig(geom=g, dt=50e-6, t_end=1.0, seed=11))
    obs = observe_increments(c, g.n_tx, t1=e.t1, M=15, t_end=e.t_end)
    p = CorrectionParams(beta=e.beta, b1=e.b1, b2=e.b2, b3=e.b3)
    lam = slot_means(g, p, obs.times, consistent_prefactor=True)
    score = np.sqrt(np.mean((obs.counts - lam) ** 2)) / np.sqrt(np.mean(lam))
    assert score < 3.5
    assert abs(float(obs.counts.sum()) - float(lam.sum())) < 200.0


def test_release_and_reflection_modes_run():
    for release in ("axis_point", "uniform_surface"):
        for reflection in ("reject_step", "radial_mirror"):
            c = simulate(quick_cfg(release_mode=release, reflection_mode=reflection, seed=5))
            assert np.all(np.diff(c.values) >= 0)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        quick_cfg(dt=-1.0)
    with pytest.raises(ConfigurationError):
        quick_cfg(t_end=0.01)  # fewer than 100 steps
    with pytest.raises(ConfigurationError):
        quick_cfg(release_mode="teleport")
    with pytest.raises(ConfigurationError):
        quick_cfg(reflection_mode="bounce")
    with pytest.raises(ConfigurationError):
        quick_cfg(workers=0)


def test_observe_increments_partition_identity():
    c = simulate(quick_cfg())
    obs = observe_increments(c, GEOM.n_tx, t1=0.025, M=2, t_end=0.05)
    total = round(float(c.values[-1]) * GEOM.n_tx)
    assert obs.counts.sum() == pytest.approx(total)


def test_observe_increments_zero_curve():
    t = 5e-4 * np.arange(1, 101)
    c = CumulativeHitCurve(times=t, values=np.zeros(100))
    obs = observe_increments(c, 1000, t1=0.02, M=5, t_end=0.05)
    assert np.all(obs.counts == 0)


def test_observe_increments_counts_nonnegative_and_bounded():
    c = simulate(quick_cfg())
    obs = observe_increments(c, GEOM.n_tx, t1=0.01, M=10, t_end=0.05)
    assert np.all(obs.counts >= 0)
    assert obs.counts.sum() <= GEOM.n_tx


def test_observe_increments_validation():
    c = simulate(quick_cfg())
    with pytest.raises(ConfigurationError):
        observe_increments(c, GEOM.n_tx, t1=0.02, M=1, t_end=0.05)
    with pytest.raises(ConfigurationError):
        observe_increments(c, GEOM.n_tx, t1=0.06, M=5, t_end=0.05)
    with pytest.raises(ConfigurationError):
        # 200 samples over 30 ms is finer than the 0.5 ms simulation step
        observe_increments(c, GEOM.n_tx, t1=0.02, M=200, t_end=0.05)
