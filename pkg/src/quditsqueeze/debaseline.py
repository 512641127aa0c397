"""Dynamical-decoupling comparison protocol: per-step R_x pulses under QZE,
optimized by classic rand/1/bin differential evolution.

Each step applies R_x(beta_k) then the free QZE propagator, starting from
the R_x-aligned TACT-optimal squeezed state.  The rotation angles live on
the grid beta = n pi/48 with n in {0..16} (so beta <= pi/3); DE works on
continuous vectors in [0, 16]^N and rounds to the grid at evaluation time,
which keeps every emitted schedule exactly feasible.  The cost is the mean
fixed-axis squeezing parameter over the encoding stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import squeezing_batch
from .spin import SpinOps

ANGLE_GRID = np.pi / 48
N_LEVELS = 17  # n = 0..16, beta in [0, pi/3]
DEGENERATE_COST = 10.0


@dataclass
class DeConfig:
    population: int = 32
    mutation: float = 0.5        # F
    crossover: float = 0.9       # CR
    generations: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be >= 4 for rand/1/bin")
        if not 0 < self.mutation <= 2:
            raise ValueError("mutation factor must lie in (0, 2]")
        if not 0 <= self.crossover <= 1:
            raise ValueError("crossover rate must lie in [0, 1]")


@dataclass
class RxSchedule:
    """Integer grid indices n_k; angles are n_k * pi/48."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        if idx.ndim != 1 or (idx < 0).any() or (idx >= N_LEVELS).any():
            raise ValueError(f"indices must lie on the 0..{N_LEVELS - 1} grid")
        self.indices = idx

    @property
    def angles(self) -> np.ndarray:
        return self.indices * ANGLE_GRID

    def to_json(self) -> dict:
        return {"indices": self.indices.tolist(),
                "angles_rad": self.angles.tolist()}


class RxRolloutContext:
    """Precomputed unitaries for fast repeated rollouts at fixed chi*dt."""

    def __init__(self, ops: SpinOps, chi: float, dt: float):
        self.ops = ops
        self.chi = chi
        self.dt = dt
        self.qze = np.exp(-1j * chi * dt * ops.fz_diag**2)
        self.rx = np.stack([ops.rotation("x", n * ANGLE_GRID) for n in range(N_LEVELS)])

    def rollout(self, initial: np.ndarray, indices: np.ndarray) -> np.ndarray:
        """xi_y^2 after each step (inf where the readout axis degenerates)."""
        states = np.empty((indices.size, self.ops.d), dtype=complex)
        psi = initial
        for k, n in enumerate(indices):
            psi = self.qze * (self.rx[n] @ psi)
            states[k] = psi
        _, xi2_y, _ = squeezing_batch(self.ops, states)
        return xi2_y


def rx_rollout(initial: np.ndarray, schedule: RxSchedule, ops: SpinOps,
               chi: float, dt: float) -> np.ndarray:
    return RxRolloutContext(ops, chi, dt).rollout(initial, schedule.indices)


def de_cost(xi2_y_per_step: np.ndarray) -> float:
    """Mean fixed-axis squeezing over the stage; degenerate steps count 10."""
    vals = np.where(np.isfinite(xi2_y_per_step), xi2_y_per_step, DEGENERATE_COST)
    return float(vals.mean())


def de_optimize(cost_fn, n_dims: int, config: DeConfig):
    """rand/1/bin DE over [0, 16]^n_dims, rounding to integers at evaluation.

    cost_fn receives an integer index vector.  The all-zero vector is seeded
    into the initial population, so the best cost never exceeds the free
    evolution baseline.  Returns (best RxSchedule, per-generation best cost).
    """
    rng = np.random.default_rng(config.seed)
    hi = N_LEVELS - 1
    pop = rng.uniform(0.0, hi, size=(config.population, n_dims))
    pop[0] = 0.0

    def evaluate(vec: np.ndarray) -> float:
        return cost_fn(np.clip(np.rint(vec), 0, hi).astype(int))

    costs = np.array([evaluate(ind) for ind in pop])
    history = [float(costs.min())]

    for _ in range(config.generations):
        for i in range(config.population):
            choices = [j for j in range(config.population) if j != i]
            a, b, c = rng.choice(choices, size=3, replace=False)
            mutant = pop[a] + config.mutation * (pop[b] - pop[c])
            mutant = np.clip(mutant, 0.0, hi)
            cross = rng.random(n_dims) < config.crossover
            cross[rng.integers(n_dims)] = True
            trial = np.where(cross, mutant, pop[i])
            trial_cost = evaluate(trial)
            if trial_cost <= costs[i]:
                pop[i] = trial
                costs[i] = trial_cost
        history.append(float(costs.min()))

    best = pop[int(np.argmin(costs))]
    schedule = RxSchedule(np.clip(np.rint(best), 0, hi).astype(int))
    return schedule, np.array(history)


def optimize_rx_schedule(initial: np.ndarray, ops: SpinOps, chi: float, dt: float,
                         n_steps: int, config: DeConfig | None = None):
    """DE-optimize the R_x schedule minimizing mean xi_y^2 from `initial`."""
    config = config or DeConfig()
    ctx = RxRolloutContext(ops, chi, dt)

    def cost(indices: np.ndarray) -> float:
        return de_cost(ctx.rollout(initial, indices))

    return de_optimize(cost, n_steps, config)
