"""Episodic control environment: discrete pulses interleaved with QZE.

Each step applies the chosen rotation followed by free quadratic-Zeeman
evolution, then evaluates squeezing on the post-step state.  The reward is
curriculum-shaped around the first-hitting time of the TACT threshold:

    k <  k*   log xi2(k-1) - log xi2(k) - cost       (preparation)
    k == k*   zeta exp(-kappa k*) - cost             (one-time bonus)
    k >  k*   -alpha log xi2_y(k) - cost             (stabilization)

The dynamics are deterministic; all stochasticity lives in the policy.
`VectorSqueezeEnv` advances a batch of episodes in lockstep and is the
rollout engine for training; `SqueezeEnv` is the single-episode view with
identical numerics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import Observation, squeezing_batch
from .protocol import tact_xi2_ref
from .spin import SpinOps, build_spin_ops, css_x

# action 0 is the identity; rotations pair each axis with the six angles
ACTION_ANGLES = (np.pi / 2, -np.pi / 2, np.pi / 3, -np.pi / 3, np.pi / 4, -np.pi / 4)
ACTION_TABLE: tuple[tuple[str, float] | None, ...] = (
    (None,)
    + tuple(("x", a) for a in ACTION_ANGLES)
    + tuple(("y", a) for a in ACTION_ANGLES)
)
N_ACTIONS = len(ACTION_TABLE)  # 13

DEGENERATE_REWARD = -10.0


def action_label(action: int) -> str:
    if action == 0:
        return "I"
    axis, angle = ACTION_TABLE[action]
    frac = {np.pi / 2: "pi/2", np.pi / 3: "pi/3", np.pi / 4: "pi/4"}[abs(angle)]
    return f"R{axis}({'+' if angle > 0 else '-'}{frac})"


def is_ry_half_pi(action: int) -> bool:
    if action == 0:
        return False
    axis, angle = ACTION_TABLE[action]
    return axis == "y" and abs(abs(angle) - np.pi / 2) < 1e-12


@dataclass
class RewardConfig:
    zeta: float = 5.0
    kappa: float = 0.05
    alpha: float = 0.05
    action_cost: float = 0.001
    xi2_ref: float = 0.5  # linear; overwritten by EnvConfig resolution

    def __post_init__(self):
        if min(self.zeta, self.kappa, self.alpha, self.action_cost) < 0:
            raise ValueError("reward coefficients must be non-negative")
        if not 0 < self.xi2_ref < 1:
            raise ValueError("xi2_ref must lie in (0, 1)")


@dataclass
class EnvConfig:
    f: float = 10.5
    n_steps: int = 70
    chi_T: float = 0.314
    zeta: float = 5.0
    kappa: float = 0.05
    alpha: float = 0.05
    action_cost: float = 0.001
    xi2_ref_db: float | str = "auto"  # dB, or "auto" -> TACT benchmark

    @property
    def chi_dt(self) -> float:
        return self.chi_T / self.n_steps

    def resolve_reward(self, ops: SpinOps) -> RewardConfig:
        if self.xi2_ref_db == "auto":
            ref = tact_xi2_ref(ops)
        else:
            ref = 10 ** (float(self.xi2_ref_db) / 10.0)
        return RewardConfig(zeta=self.zeta, kappa=self.kappa, alpha=self.alpha,
                            action_cost=self.action_cost, xi2_ref=ref)


class VectorSqueezeEnv:
    """n_envs episodes advanced in lockstep (fixed horizon, shared clock)."""

    def __init__(self, config: EnvConfig, n_envs: int = 1, ops: SpinOps | None = None):
        self.config = config
        self.n_envs = n_envs
        self.ops = ops if ops is not None else build_spin_ops(config.f)
        if ops is not None and ops.f != config.f:
            raise ValueError("SpinOps spin does not match the environment config")
        self.reward_cfg = config.resolve_reward(self.ops)
        self.qze = np.exp(-1j * config.chi_dt * self.ops.fz_diag**2)
        self.unitaries_t = [None] + [
            self.ops.rotation(axis, angle).T.copy()
            for axis, angle in ACTION_TABLE[1:]
        ]
        self.f = self.ops.f
        self._init_state = css_x(self.ops)
        self.k = 0
        self.states = None

    # -- episode bookkeeping -------------------------------------------------
    def reset(self) -> np.ndarray:
        """Start all episodes from CSS_x; returns observations (n_envs, 5)."""
        self.k = 0
        self.states = np.broadcast_to(self._init_state, (self.n_envs, self.ops.d)).copy()
        self.hit = np.zeros(self.n_envs, dtype=bool)
        self.k_star = np.full(self.n_envs, -1, dtype=int)
        self.prev_xi2 = np.ones(self.n_envs)
        return self._observe()

    def _observe(self) -> np.ndarray:
        vals = np.einsum("oij,bi,bj->bo", self.ops.moment_stack[:5],
                         self.states.conj(), self.states).real
        obs = np.empty((self.n_envs, 5))
        obs[:, 0:3] = vals[:, 0:3] / self.f
        obs[:, 3:5] = vals[:, 3:5] / self.f**2
        return obs

    def step(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool, dict]:
        """Apply one action per env; returns (obs, rewards, done, info)."""
        if self.states is None:
            raise RuntimeError("call reset() before step()")
        if self.k >= self.config.n_steps:
            raise RuntimeError("episode is over; call reset()")
        actions = np.asarray(actions, dtype=int)
        if actions.shape != (self.n_envs,):
            raise ValueError(f"expected {self.n_envs} actions, got {actions.shape}")

        for a in range(1, N_ACTIONS):
            sel = actions == a
            if sel.any():
                self.states[sel] = self.states[sel] @ self.unitaries_t[a]
        self.states *= self.qze
        self.k += 1

        xi2, xi2_y, _ = squeezing_batch(self.ops, self.states)
        cfg = self.reward_cfg
        cost = np.where(actions != 0, cfg.action_cost, 0.0)

        # a step is degenerate only if the metric its reward branch needs is
        # undefined: xi2 before the hit, xi_y^2 after it
        bad_xi2 = ~np.isfinite(xi2)
        bad_xi2_y = ~np.isfinite(xi2_y)
        degenerate = np.where(self.hit, bad_xi2_y, bad_xi2)

        rewards = np.empty(self.n_envs)
        crossing = ~self.hit & ~bad_xi2 & (xi2 <= cfg.xi2_ref)
        prep = ~self.hit & ~crossing & ~bad_xi2
        stab = self.hit & ~bad_xi2_y

        rewards[crossing] = cfg.zeta * np.exp(-cfg.kappa * self.k) - cost[crossing]
        with np.errstate(divide="ignore", invalid="ignore"):
            rewards[prep] = (np.log(self.prev_xi2[prep]) - np.log(xi2[prep])
                             - cost[prep])
            rewards[stab] = -cfg.alpha * np.log(xi2_y[stab]) - cost[stab]
        rewards[degenerate] = DEGENERATE_REWARD

        self.k_star[crossing] = self.k
        self.hit |= crossing
        self.prev_xi2 = np.where(bad_xi2, self.prev_xi2, xi2)

        done = self.k >= self.config.n_steps
        info = {
            "xi2": xi2, "xi2_y": xi2_y, "degenerate": degenerate,
            "hit": self.hit.copy(), "k_star": self.k_star.copy(),
        }
        return self._observe(), rewards, done, info


class SqueezeEnv:
    """Single-episode environment (a thin view over the batched kernels)."""

    def __init__(self, config: EnvConfig, ops: SpinOps | None = None):
        self._vec = VectorSqueezeEnv(config, n_envs=1, ops=ops)
        self.config = config
        self.ops = self._vec.ops
        self.reward_cfg = self._vec.reward_cfg

    @property
    def k(self) -> int:
        return self._vec.k

    @property
    def state(self) -> np.ndarray:
        return self._vec.states[0]

    @property
    def hit(self) -> bool:
        return bool(self._vec.hit[0])

    @property
    def k_star(self) -> int | None:
        ks = int(self._vec.k_star[0])
        return None if ks < 0 else ks

    def reset(self) -> Observation:
        obs = self._vec.reset()[0]
        return Observation(*obs)

    def step(self, action: int) -> tuple[Observation, float, bool, dict]:
        obs, rewards, done, info = self._vec.step(np.array([int(action)]))
        scalar_info = {key: val[0] for key, val in info.items()}
        return Observation(*obs[0]), float(rewards[0]), done, scalar_info


def cumulative_return(rewards, gamma_rl: float) -> float:
    """Discounted sum over one episode's rewards."""
    rewards = np.asarray(rewards, dtype=float)
    if not np.all(np.isfinite(rewards)):
        raise ValueError("rewards must be finite")
    return float(rewards @ gamma_rl ** np.arange(rewards.size))
