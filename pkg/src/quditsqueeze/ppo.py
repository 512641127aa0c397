"""Actor-critic PPO trainer, implemented from scratch on numpy.

Two tanh MLPs (5 -> 128 -> 128 -> 13 logits / -> 1 value) are trained with
the clipped surrogate objective, GAE advantages, discounted-return value
targets, and an entropy bonus:

    L_total = -L_actor + c1 * L_critic - c2 * S(pi)

Gradients are hand-derived (and checked against central finite differences
in the test suite); parameters step with Adam at separate actor/critic
learning rates.  With one rollout worker and a fixed seed, training is
bit-reproducible: the only randomness is the numpy Generator handed in.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .env import ACTION_TABLE, N_ACTIONS, VectorSqueezeEnv, EnvConfig


@dataclass
class PpoConfig:
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    gamma_rl: float = 0.9999
    gae_lambda: float = 0.96
    clip_eps: float = 0.2
    value_weight: float = 0.5     # c1
    entropy_weight: float = 0.01  # c2
    minibatch: int = 512
    epochs: int = 8
    max_env_steps: int = 8_000_000
    buffer_size: int = 17_920
    hidden: tuple[int, int] = (128, 128)
    normalize_advantages: bool = True

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        for name in ("actor_lr", "critic_lr", "gamma_rl", "gae_lambda",
                     "value_weight", "entropy_weight"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def orthogonal_init(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal(shape)
    q, r = np.linalg.qr(a if shape[0] >= shape[1] else a.T)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return np.ascontiguousarray(gain * q[: shape[0], : shape[1]])


class MlpNet:
    """Plain tanh MLP; forward caches activations for the manual backward."""

    def __init__(self, sizes: list[int], rng: np.random.Generator,
                 final_gain: float = 1.0, activation: str = "tanh"):
        if activation != "tanh":
            raise ValueError("only tanh hidden activations are supported")
        self.sizes = list(sizes)
        self.activation = activation
        self.weights = []
        self.biases = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = final_gain if i == len(sizes) - 2 else np.sqrt(2.0)
            self.weights.append(orthogonal_init((n_in, n_out), gain, rng))
            self.biases.append(np.zeros(n_out))

    def forward(self, x: np.ndarray, keep_cache: bool = False):
        h = x
        cache = [x]
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
            cache.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite network activations")
        if keep_cache:
            return out, cache
        return out

    def backward(self, cache: list[np.ndarray], grad_out: np.ndarray):
        """Gradients of sum(loss) given d loss / d out; returns (dWs, dbs)."""
        dWs = [None] * len(self.weights)
        dbs = [None] * len(self.biases)
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            dWs[i] = cache[i].T @ g
            dbs[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (1.0 - cache[i] ** 2)
        return dWs, dbs

    @property
    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


class PolicyValueNets:
    def __init__(self, cfg: PpoConfig, rng: np.random.Generator, obs_dim: int = 5):
        h1, h2 = cfg.hidden
        self.actor = MlpNet([obs_dim, h1, h2, N_ACTIONS], rng, final_gain=0.01)
        self.critic = MlpNet([obs_dim, h1, h2, 1], rng, final_gain=1.0)

    def policy(self, obs: np.ndarray) -> np.ndarray:
        """Action probabilities (softmax over logits), rows summing to 1."""
        logits = self.actor.forward(np.atleast_2d(obs))
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def value(self, obs: np.ndarray) -> np.ndarray:
        return self.critic.forward(np.atleast_2d(obs))[:, 0]


def policy_forward(nets: PolicyValueNets, obs: np.ndarray) -> np.ndarray:
    return nets.policy(obs)


def value_forward(nets: PolicyValueNets, obs: np.ndarray) -> np.ndarray:
    return nets.value(obs)


def compute_gae(rewards: np.ndarray, values: np.ndarray,
                gamma_rl: float, lam: float) -> np.ndarray:
    """Advantages for one fixed-horizon episode (terminal bootstrap 0).

    rewards: (T,); values: (T,) state values V(o_0..o_{T-1}).  The sum
    truncates at the horizon: deltas use V(o_{k+1}) = 0 at k = T-1.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must have equal length")
    T = rewards.size
    next_values = np.append(values[1:], 0.0)
    deltas = rewards + gamma_rl * next_values - values
    adv = np.empty(T)
    acc = 0.0
    for k in range(T - 1, -1, -1):
        acc = deltas[k] + gamma_rl * lam * acc
        adv[k] = acc
    return adv


def discounted_returns(rewards: np.ndarray, gamma_rl: float) -> np.ndarray:
    """G_k = sum_l gamma^l r_{k+l} within the episode."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    acc = 0.0
    for k in range(rewards.size - 1, -1, -1):
        acc = rewards[k] + gamma_rl * acc
        out[k] = acc
    return out


@dataclass
class TrajectoryBuffer:
    """Rollout storage grouped as whole episodes of fixed length."""

    obs: np.ndarray        # (B, T, obs_dim)
    actions: np.ndarray    # (B, T) int
    logp_old: np.ndarray   # (B, T)
    rewards: np.ndarray    # (B, T)
    values: np.ndarray     # (B, T)
    dones: np.ndarray      # (B, T) bool; True only at the horizon

    @property
    def n_rows(self) -> int:
        return self.obs.shape[0] * self.obs.shape[1]

    def flat(self):
        B, T, D = self.obs.shape
        return (self.obs.reshape(B * T, D), self.actions.reshape(-1),
                self.logp_old.reshape(-1))


def _total_loss_terms(nets: PolicyValueNets, obs, actions, logp_old,
                      advantages, returns, cfg: PpoConfig, keep_cache=False):
    """Forward pass of L_total; optionally keeps caches for backward."""
    logits, a_cache = nets.actor.forward(obs, keep_cache=True)
    logits_c = logits - logits.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(logits_c).sum(axis=1, keepdims=True))
    logp = logits_c - logZ
    p = np.exp(logp)
    M = obs.shape[0]

    logp_a = logp[np.arange(M), actions]
    ratio = np.exp(logp_a - logp_old)
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    surr_unclipped = ratio * advantages
    surr_clipped = clipped * advantages
    actor_obj = np.minimum(surr_unclipped, surr_clipped)
    L_actor = actor_obj.mean()

    entropy_rows = -(p * logp).sum(axis=1)
    S = entropy_rows.mean()

    vals, c_cache = nets.critic.forward(obs, keep_cache=True)
    v = vals[:, 0]
    err = v - returns
    L_critic = np.mean(err**2)

    L_total = -L_actor + cfg.value_weight * L_critic - cfg.entropy_weight * S
    terms = {"actor": L_actor, "critic": L_critic, "entropy": S, "total": L_total}
    if not keep_cache:
        return terms
    aux = (p, logp, ratio, surr_unclipped, surr_clipped, err, a_cache, c_cache,
           entropy_rows)
    return terms, aux


def total_loss(nets: PolicyValueNets, obs, actions, logp_old,
               advantages, returns, cfg: PpoConfig) -> float:
    return float(_total_loss_terms(nets, obs, actions, logp_old,
                                   advantages, returns, cfg)["total"])


def total_loss_gradients(nets: PolicyValueNets, obs, actions, logp_old,
                         advantages, returns, cfg: PpoConfig):
    """Hand-derived gradients of L_total wrt all actor and critic params."""
    terms, aux = _total_loss_terms(nets, obs, actions, logp_old,
                                   advantages, returns, cfg, keep_cache=True)
    p, logp, ratio, surr_u, surr_c, err, a_cache, c_cache, entropy_rows = aux
    M = obs.shape[0]

    # actor objective: d min(surr_u, surr_c) / d logp_a = ratio*adv where the
    # unclipped branch attains the min (ties included); 0 where clipping wins
    take_unclipped = surr_u <= surr_c
    coef = np.where(take_unclipped, ratio * advantages, 0.0)
    one_hot = np.zeros_like(p)
    one_hot[np.arange(M), actions] = 1.0
    dlogits_actor = coef[:, None] * (one_hot - p)

    # entropy: dS_row / dlogits_j = -p_j (logp_j + S_row)
    dlogits_entropy = -p * (logp + entropy_rows[:, None])

    # L_total = -mean(actor_obj) + c1 mean(err^2) - c2 mean(S_row)
    dlogits = (-dlogits_actor - cfg.entropy_weight * dlogits_entropy) / M
    dW_a, db_a = nets.actor.backward(a_cache, dlogits)

    dv = (cfg.value_weight * 2.0 * err / M)[:, None]
    dW_c, db_c = nets.critic.backward(c_cache, dv)
    return terms, (dW_a + db_a), (dW_c + db_c)


@dataclass
class LossReport:
    actor: float
    critic: float
    entropy: float
    total: float
    clip_fraction: float


def ppo_update(nets: PolicyValueNets, opt_actor: Adam, opt_critic: Adam,
               buffer: TrajectoryBuffer, cfg: PpoConfig,
               rng: np.random.Generator) -> LossReport:
    """Epochs of shuffled-minibatch clipped-surrogate updates over the buffer."""
    B, T, _ = buffer.obs.shape
    advantages = np.empty((B, T))
    returns = np.empty((B, T))
    for b in range(B):
        advantages[b] = compute_gae(buffer.rewards[b], buffer.values[b],
                                    cfg.gamma_rl, cfg.gae_lambda)
        returns[b] = discounted_returns(buffer.rewards[b], cfg.gamma_rl)

    obs, actions, logp_old = buffer.flat()
    advantages = advantages.reshape(-1)
    returns = returns.reshape(-1)
    n = obs.shape[0]

    last = None
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch):
            idx = perm[lo:lo + cfg.minibatch]
            adv = advantages[idx]
            if cfg.normalize_advantages:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            terms, grads_a, grads_c = total_loss_gradients(
                nets, obs[idx], actions[idx], logp_old[idx], adv, returns[idx], cfg)
            if not np.isfinite(terms["total"]):
                raise FloatingPointError("non-finite PPO loss; aborting update")
            opt_actor.step(nets.actor.params, grads_a)
            opt_critic.step(nets.critic.params, grads_c)
            last = terms
    # clip fraction on the final parameters over the whole buffer
    terms, aux = _total_loss_terms(nets, obs, actions, logp_old,
                                   advantages, returns, cfg, keep_cache=True)
    ratio = aux[2]
    clip_frac = float(np.mean((ratio < 1 - cfg.clip_eps) | (ratio > 1 + cfg.clip_eps)))
    return LossReport(actor=float(last["actor"]), critic=float(last["critic"]),
                      entropy=float(last["entropy"]), total=float(last["total"]),
                      clip_fraction=clip_frac)


# ---------------------------------------------------------------------------
# rollouts, training, evaluation
# ---------------------------------------------------------------------------

def collect_rollout(nets: PolicyValueNets, env: VectorSqueezeEnv,
                    rng: np.random.Generator) -> tuple[TrajectoryBuffer, dict]:
    """One synchronized batch of episodes sampled from the current policy."""
    B = env.n_envs
    T = env.config.n_steps
    obs_dim = 5
    buf = TrajectoryBuffer(
        obs=np.empty((B, T, obs_dim)), actions=np.empty((B, T), dtype=int),
        logp_old=np.empty((B, T)), rewards=np.empty((B, T)),
        values=np.empty((B, T)), dones=np.zeros((B, T), dtype=bool),
    )
    obs = env.reset()
    min_xi2 = np.full(B, np.inf)
    for t in range(T):
        probs = nets.policy(obs)
        u = rng.random((B, 1))
        cdf = probs.cumsum(axis=1)
        cdf[:, -1] = 1.0  # guard the roundoff tail
        actions = (cdf > u).argmax(axis=1)
        logp = np.log(probs[np.arange(B), actions])
        values = nets.value(obs)
        buf.obs[:, t] = obs
        buf.actions[:, t] = actions
        buf.logp_old[:, t] = logp
        buf.values[:, t] = values
        obs, rewards, done, info = env.step(actions)
        buf.rewards[:, t] = rewards
        finite = np.isfinite(info["xi2"])
        min_xi2[finite] = np.minimum(min_xi2[finite], info["xi2"][finite])
    buf.dones[:, -1] = True
    stats = {
        "mean_return": float(buf.rewards.sum(axis=1).mean()),
        "best_xi2": float(min_xi2.min()),
        "hit_fraction": float(info["hit"].mean()),
        "mean_k_star": float(np.mean(info["k_star"][info["hit"]])) if info["hit"].any() else None,
    }
    return buf, stats


@dataclass
class EpisodeRecord:
    actions: list[int]
    rewards: list[float]
    xi2: list[float]
    xi2_y: list[float]
    k_star: int | None
    states: np.ndarray = field(repr=False)

    @property
    def min_xi2(self) -> float:
        return float(np.nanmin(np.where(np.isfinite(self.xi2), self.xi2, np.nan)))

    def post_hit_xi2_y(self) -> np.ndarray:
        if self.k_star is None:
            return np.array([])
        vals = np.asarray(self.xi2_y[self.k_star:])
        return vals[np.isfinite(vals)]

    def stabilization_suffix_start(self) -> int | None:
        """First step of the trailing alternating R_y(+-pi/2) run, if any.

        The suffix must start at or after the hit; the steps between the hit
        and the suffix are the trailing adjustment counted into T_p.
        """
        if self.k_star is None:
            return None
        from .env import ACTION_TABLE

        def is_half_pi_y(a):
            spec = ACTION_TABLE[a]
            return (spec is not None and spec[0] == "y"
                    and abs(abs(spec[1]) - np.pi / 2) < 1e-12)

        n = len(self.actions)
        idx = n - 1
        while idx >= 0 and is_half_pi_y(self.actions[idx]) \
                and (idx == n - 1 or self.actions[idx] != self.actions[idx + 1]):
            idx -= 1
        start = idx + 1
        if start >= n or start < self.k_star:
            start = self.k_star
        return start

    def stabilized_window_xi2_y(self) -> np.ndarray:
        """Finite xi_y^2 values over the stabilized window (post adjustment)."""
        start = self.stabilization_suffix_start()
        if start is None:
            return np.array([])
        vals = np.asarray(self.xi2_y[start:])
        return vals[np.isfinite(vals)]


def evaluate_greedy(nets: PolicyValueNets, config: EnvConfig,
                    ops=None) -> EpisodeRecord:
    """One deterministic episode following argmax actions."""
    env = VectorSqueezeEnv(config, n_envs=1, ops=ops)
    obs = env.reset()
    actions, rewards, xi2s, xi2ys = [], [], [], []
    states = np.empty((config.n_steps, env.ops.d), dtype=complex)
    for t in range(config.n_steps):
        a = int(np.argmax(nets.policy(obs)[0]))
        obs, r, done, info = env.step(np.array([a]))
        actions.append(a)
        rewards.append(float(r[0]))
        xi2s.append(float(info["xi2"][0]))
        xi2ys.append(float(info["xi2_y"][0]))
        states[t] = env.states[0]
    ks = int(env.k_star[0])
    return EpisodeRecord(actions=actions, rewards=rewards, xi2=xi2s, xi2_y=xi2ys,
                         k_star=None if ks < 0 else ks, states=states)


def train(env_config: EnvConfig, ppo_config: PpoConfig, seed: int,
          log_path=None, stop_when=None, progress=None):
    """Full training loop; returns (nets, log rows).

    `stop_when(record)` may end training early once a greedy episode
    satisfies the caller's criterion; `progress(row)` observes each
    iteration's log row.  Fixed seed + single worker => bit-reproducible.
    """
    rng = np.random.default_rng(seed)
    nets = PolicyValueNets(ppo_config, rng)
    opt_a = Adam(nets.actor.params, ppo_config.actor_lr)
    opt_c = Adam(nets.critic.params, ppo_config.critic_lr)

    n_envs = max(1, ppo_config.buffer_size // env_config.n_steps)
    env = VectorSqueezeEnv(env_config, n_envs=n_envs)
    steps_per_iter = n_envs * env_config.n_steps

    log_rows = []
    env_steps = 0
    iteration = 0
    log_file = open(log_path, "w") if log_path else None
    try:
        while env_steps < ppo_config.max_env_steps:
            iteration += 1
            buf, stats = collect_rollout(nets, env, rng)
            env_steps += steps_per_iter
            report = ppo_update(nets, opt_a, opt_c, buf, ppo_config, rng)

            record = evaluate_greedy(nets, env_config, ops=env.ops)
            window = record.stabilized_window_xi2_y()
            row = {
                "iteration": iteration,
                "env_steps": env_steps,
                "mean_return": round(stats["mean_return"], 6),
                "best_xi2_db": round(10 * np.log10(stats["best_xi2"]), 4)
                if stats["best_xi2"] > 0 else None,
                "greedy_min_xi2_db": round(10 * np.log10(record.min_xi2), 4)
                if record.min_xi2 > 0 else None,
                "greedy_stabilized_xi2y_db": round(float(10 * np.log10(window.mean())), 4)
                if window.size else None,
                "hit_fraction": round(stats["hit_fraction"], 4),
                "loss_total": round(report.total, 6),
                "entropy": round(report.entropy, 6),
                "clip_fraction": round(report.clip_fraction, 4),
            }
            log_rows.append(row)
            if log_file:
                log_file.write(json.dumps(row) + "\n")
                log_file.flush()
            if progress:
                progress(row)
            if stop_when and stop_when(record):
                break
    finally:
        if log_file:
            log_file.close()
    return nets, log_rows


# ---------------------------------------------------------------------------
# checkpoints: portable structured text (JSON)
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def _net_payload(net: MlpNet) -> dict:
    return {
        "sizes": net.sizes,
        "activation": net.activation,
        "weights": [w.reshape(-1).tolist() for w in net.weights],  # row-major
        "biases": [b.tolist() for b in net.biases],
    }


def _net_restore(payload: dict) -> MlpNet:
    net = MlpNet(payload["sizes"], np.random.default_rng(0),
                 activation=payload["activation"])
    for i, (wflat, b) in enumerate(zip(payload["weights"], payload["biases"])):
        shape = (payload["sizes"][i], payload["sizes"][i + 1])
        net.weights[i] = np.array(wflat, dtype=float).reshape(shape)
        net.biases[i] = np.array(b, dtype=float)
    return net


def config_digest(env_config: EnvConfig, ppo_config: PpoConfig) -> str:
    blob = json.dumps({"env": vars(env_config), "ppo": vars(ppo_config)},
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_checkpoint(path, nets: PolicyValueNets, env_config: EnvConfig,
                    ppo_config: PpoConfig, seed: int) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "config_hash": config_digest(env_config, ppo_config),
        "env_config": {k: v for k, v in vars(env_config).items()},
        "action_table": [list(a) if a else None for a in ACTION_TABLE],
        "actor": _net_payload(nets.actor),
        "critic": _net_payload(nets.critic),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> tuple[PolicyValueNets, EnvConfig, dict]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload['version']}")
    stored = [tuple(a) if a else None for a in payload["action_table"]]
    if stored != list(ACTION_TABLE):
        raise ValueError("checkpoint action table does not match this build")
    cfg = EnvConfig(**payload["env_config"])
    nets = PolicyValueNets.__new__(PolicyValueNets)
    nets.actor = _net_restore(payload["actor"])
    nets.critic = _net_restore(payload["critic"])
    return nets, cfg, payload
