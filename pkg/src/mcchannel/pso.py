"""Global-best particle swarm fit of the corrected channel model.

The swarm minimizes the squared gap between the model curve and a target
cumulative curve on the target's own time grid.  Velocity update is the
classic inertia + cognitive + social rule; positions are clamped to the
search box, velocities to half the box width per dimension.

The whole population is evaluated in one vectorized sweep per iteration
(`f_corrected_batch`), so a single seeded generator fixes the entire
trajectory; no worker pool is involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelGeometry, CorrectionParams, CumulativeHitCurve, f_corrected, f_corrected_batch
from .errors import ConfigurationError, FitFailureError

__all__ = ["PsoConfig", "FitResult", "loss", "fit", "write_fit_json", "write_loss_trace_csv"]

DEFAULT_BOUNDS = (
    (0.05, float(np.pi)),  # beta: excludes the singular beta -> 0 corner
    (0.1, 10.0),  # b1
    (0.1, 1.5),  # b2
    (0.1, 1.5),  # b3
)


@dataclass(frozen=True)
class PsoConfig:
    cognitive: float = 0.5
    social: float = 0.3
    inertia: float = 0.9
    iterations: int = 200
    swarm_size: int = 300
    bounds: tuple = DEFAULT_BOUNDS
    seed: int = 0

    def __post_init__(self):
        if min(self.cognitive, self.social, self.inertia) < 0:
            raise ConfigurationError("PSO weights must be >= 0")
        if self.iterations < 1 or self.swarm_size < 2:
            raise ConfigurationError("need iterations >= 1 and swarm_size >= 2")
        b = np.asarray(self.bounds, dtype=float)
        if b.shape != (4, 2) or np.any(b[:, 1] <= b[:, 0]):
            raise ConfigurationError("bounds must be four non-degenerate intervals")


@dataclass(frozen=True)
class FitResult:
    params: CorrectionParams
    rmse: float
    loss_trace: np.ndarray  # best loss after each iteration
    evaluations: int
    seed: int

    @property
    def best_loss(self) -> float:
        return float(self.loss_trace[-1])


def loss(
    geom: ChannelGeometry,
    p: CorrectionParams,
    target: CumulativeHitCurve,
    *,
    consistent_prefactor: bool = False,
) -> float:
    """Sum of squared residuals of the model against the target curve."""
    if len(target) == 0:
        raise ConfigurationError("target curve is empty")
    try:
        model = f_corrected(geom, p, target.times, consistent_prefactor=consistent_prefactor)
    except Exception as exc:
        raise type(exc)(f"{exc} (at params {p})") from exc
    return float(np.sum((model - target.values) ** 2))


def fit(
    geom: ChannelGeometry,
    target: CumulativeHitCurve,
    config: PsoConfig,
    *,
    consistent_prefactor: bool = False,
) -> FitResult:
    """Run the swarm and return the best-ever parameter vector."""
    lo = np.asarray(config.bounds, dtype=float)[:, 0]
    hi = np.asarray(config.bounds, dtype=float)[:, 1]
    vmax = 0.5 * (hi - lo)
    n = config.swarm_size
    rng = np.random.default_rng(config.seed)

    tv = target.values[None, :]

    def eval_batch(P):
        with np.errstate(all="ignore"):
            m = f_corrected_batch(geom, P, target.times, consistent_prefactor=consistent_prefactor)
            v = np.sum((m - tv) ** 2, axis=1)
        return np.where(np.isfinite(v), v, np.inf)

    X = lo + (hi - lo) * rng.random((n, 4))
    V = np.zeros_like(X)
    pbest = X.copy()
    pbest_loss = eval_batch(X)
    j = int(np.argmin(pbest_loss))
    gbest = pbest[j].copy()
    gbest_loss = float(pbest_loss[j])

    trace = np.empty(config.iterations)
    for it in range(config.iterations):
        r1, r2 = rng.random((2, n, 4))
        V = config.inertia * V + config.cognitive * r1 * (pbest - X) + config.social * r2 * (gbest - X)
        V = np.clip(V, -vmax, vmax)
        X = np.clip(X + V, lo, hi)
        cur = eval_batch(X)
        improved = cur < pbest_loss
        pbest[improved] = X[improved]
        pbest_loss[improved] = cur[improved]
        j = int(np.argmin(pbest_loss))
        if float(pbest_loss[j]) < gbest_loss:
            gbest_loss = float(pbest_loss[j])
            gbest = pbest[j].copy()
        trace[it] = gbest_loss

    if not np.isfinite(gbest_loss):
        raise FitFailureError("no swarm member ever reached a finite loss")

    params = CorrectionParams(beta=float(gbest[0]), b1=float(gbest[1]), b2=float(gbest[2]), b3=float(gbest[3]))
    rmse = float(np.sqrt(gbest_loss / len(target)))
    return FitResult(
        params=params,
        rmse=rmse,
        loss_trace=trace,
        evaluations=(config.iterations + 1) * n,
        seed=config.seed,
    )


def write_fit_json(path, result: FitResult) -> None:
    payload = {
        "beta": result.params.beta,
        "b1": result.params.b1,
        "b2": result.params.b2,
        "b3": result.params.b3,
        "rmse": result.rmse,
        "iterations": int(result.loss_trace.size),
        "seed": result.seed,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_loss_trace_csv(path, result: FitResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("iteration,best_loss\n")
        for i, v in enumerate(result.loss_trace):
            fh.write(f"{i},{v!r}\n")
