"""Brownian-motion Monte Carlo simulator for the SISO absorption channel.

Molecules are released at the transmitter surface and perform independent
Gaussian random walks; a molecule whose step lands inside the receiver
sphere is absorbed at that step's end time and removed.  Detection happens
at step boundaries only — the resulting discretization bias is part of
what the fitted correction parameters absorb.

Determinism contract: molecules are partitioned into fixed-size blocks and
each block owns a generator derived from ``SeedSequence((seed, block))``,
so results are bit-identical regardless of how many workers process the
blocks.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import ChannelGeometry, CumulativeHitCurve
from .errors import ConfigurationError, SimulationFaultError

__all__ = [
    "SimulationConfig",
    "ObservationSet",
    "simulate",
    "observe_increments",
    "write_curve_csv",
    "read_curve_csv",
    "write_observations_csv",
]

_BLOCK = 1024  # molecules per RNG block; fixed so worker count cannot matter


@dataclass(frozen=True)
class SimulationConfig:
    geom: ChannelGeometry
    dt: float = 50e-6  # step size [s]
    t_end: float = 1.0  # horizon [s]
    seed: int = 0
    release_mode: str = "axis_point"  # or "uniform_surface"
    reflection_mode: str = "reject_step"  # or "radial_mirror"
    workers: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("dt must be > 0")
        if self.t_end < 100 * self.dt:
            raise ConfigurationError("t_end must be at least 100 steps long")
        if self.release_mode not in ("axis_point", "uniform_surface"):
            raise ConfigurationError(f"unknown release_mode {self.release_mode!r}")
        if self.reflection_mode not in ("reject_step", "radial_mirror"):
            raise ConfigurationError(f"unknown reflection_mode {self.reflection_mode!r}")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")


@dataclass(frozen=True)
class ObservationSet:
    """Per-slot absorbed counts on the estimator's sampling grid."""

    times: np.ndarray
    counts: np.ndarray
    n_tx: int
    seed: int | None = None  # provenance only; the mapping itself is deterministic

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        c = np.asarray(self.counts, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "counts", c)
        if t.ndim != 1 or c.shape != t.shape or t.size == 0:
            raise ConfigurationError("times and counts must be matching 1-d arrays")
        if not np.all(np.diff(t) > 0) or t[0] <= 0:
            raise ConfigurationError("times must be positive and strictly increasing")
        if np.any(c < 0):
            raise ConfigurationError("counts must be nonnegative")
        if c.sum() > self.n_tx + 1e-9:
            raise ConfigurationError("total counts cannot exceed n_tx")


def _run_block(args):
    (n, block_idx, seed, geom_tuple, dt, steps, release_mode, reflection_mode) = args
    d, R, r, D = geom_tuple
    rng = np.random.default_rng(np.random.SeedSequence((seed, block_idx)))

    rx_center = np.array([r + d + R, 0.0, 0.0])
    if release_mode == "axis_point":
        pos = np.zeros((n, 3))
        pos[:, 0] = r
    else:
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pos = r * v

    sigma = np.sqrt(2.0 * D * dt)
    absorbed_per_step = np.zeros(steps, dtype=np.int64)
    r2_tx = r * r
    R2_rx = R * R

    for k in range(steps):
        step = rng.normal(0.0, sigma, size=pos.shape)
        cand = pos + step
        inside_tx = np.einsum("ij,ij->i", cand, cand) < r2_tx
        if inside_tx.any():
            idx = np.flatnonzero(inside_tx)
            if reflection_mode == "reject_step":
                retry = pos[idx] + rng.normal(0.0, sigma, size=(idx.size, 3))
                ok = np.einsum("ij,ij->i", retry, retry) >= r2_tx
                cand[idx[ok]] = retry[ok]
                cand[idx[~ok]] = pos[idx[~ok]]  # reject in place
            else:  # radial_mirror
                rho = np.linalg.norm(cand[idx], axis=1)
                rho = np.maximum(rho, 1e-12)
                cand[idx] *= ((2.0 * r - rho) / rho)[:, None]
        rel = cand - rx_center
        hit = np.einsum("ij,ij->i", rel, rel) < R2_rx
        nhit = int(hit.sum())
        if nhit:
            absorbed_per_step[k] = nhit
            cand = cand[~hit]
        pos = cand
        if pos.size == 0:
            break
    if not np.all(np.isfinite(pos)):
        raise SimulationFaultError("non-finite particle positions")
    return absorbed_per_step


def simulate(config: SimulationConfig) -> CumulativeHitCurve:
    """Run the walk and return the cumulative absorbed fraction per step."""
    geom = config.geom
    steps = int(round(config.t_end / config.dt))
    n = geom.n_tx
    blocks = []
    start = 0
    idx = 0
    while start < n:
        size = min(_BLOCK, n - start)
        blocks.append(
            (
                size,
                idx,
                config.seed,
                (geom.d, geom.R, geom.r, geom.D),
                config.dt,
                steps,
                config.release_mode,
                config.reflection_mode,
            )
        )
        start += size
        idx += 1

    if config.workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as ex:
            parts = list(ex.map(_run_block, blocks))
    else:
        parts = [_run_block(b) for b in blocks]

    per_step = np.sum(parts, axis=0)
    cum = np.cumsum(per_step) / float(n)
    times = config.dt * np.arange(1, steps + 1)
    return CumulativeHitCurve(times=times, values=cum)


def observe_increments(
    curve: CumulativeHitCurve,
    n_tx: int,
    t1: float,
    M: int,
    t_end: float,
    seed: int | None = None,
) -> ObservationSet:
    """Slot counts s_m = molecules newly absorbed in (t_{m-1}, t_m].

    Sample times are t1 + (m-1)(t_end - t1)/(M-1); each is snapped to the
    last simulated step boundary at or before it.
    """
    if M < 2:
        raise ConfigurationError("M must be >= 2")
    if not 0 < t1 < t_end:
        raise ConfigurationError("need 0 < t1 < t_end")
    spacing = (t_end - t1) / (M - 1)
    sim_dt = float(curve.times[1] - curve.times[0]) if len(curve) > 1 else np.inf
    if spacing < sim_dt - 1e-12:
        raise ConfigurationError("sample grid finer than the simulation step")
    t_m = t1 + spacing * np.arange(M)
    pos = np.searchsorted(curve.times, t_m + 1e-12, side="right") - 1
    if np.any(pos < 0):
        raise ConfigurationError("t1 precedes the first simulated step")
    frac = curve.values[pos]
    cum_counts = np.rint(frac * n_tx)
    counts = np.diff(np.concatenate(([0.0], cum_counts)))
    return ObservationSet(times=t_m, counts=counts, n_tx=n_tx, seed=seed)


def write_curve_csv(path, curve: CumulativeHitCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_seconds", "cumulative_fraction"])
        for t, v in zip(curve.times, curve.values):
            w.writerow([repr(float(t)), repr(float(v))])


def read_curve_csv(path) -> CumulativeHitCurve:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != ["t_seconds", "cumulative_fraction"]:
            raise ConfigurationError(f"unexpected curve header {header!r}")
        rows = [(float(a), float(b)) for a, b in rd]
    arr = np.asarray(rows, dtype=float)
    return CumulativeHitCurve(times=arr[:, 0], values=arr[:, 1])


def write_observations_csv(path, obs: ObservationSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_seconds", "count"])
        for t, c in zip(obs.times, obs.counts):
            w.writerow([repr(float(t)), int(c)])
