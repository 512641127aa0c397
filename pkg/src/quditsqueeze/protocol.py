"""Deterministic pulse-schedule execution, twisting benchmarks, and the
scripted reference protocol.

Every control step applies the pulse first and the free quadratic-Zeeman
propagator second; trajectories record the post-step state.  Benchmarks
scan dimensionless time chi*t on a fixed grid and refine the best sample
with golden-section search, so repeated runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import from_db, squeezing_batch, to_db
from .spin import RotationPulse, SpinOps, css_x

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def golden_min(fn, a: float, b: float, tol: float = 1e-10) -> tuple[float, float]:
    """Golden-section minimum of a unimodal scalar function on [a, b]."""
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = fn(x1), fn(x2)
    while (b - a) > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = fn(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = fn(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


@dataclass
class Schedule:
    """Pulse per step (None = no pulse), with chi (rad/s) and dt (s)."""

    steps: list[RotationPulse | None]
    chi: float
    dt: float

    def __post_init__(self):
        if self.chi * self.dt <= 0:
            raise ValueError("chi*dt must be positive")

    @property
    def chi_dt(self) -> float:
        return self.chi * self.dt


@dataclass
class Trajectory:
    states: np.ndarray      # (N, d) post-step states
    times: np.ndarray       # chi*t after each step, strictly increasing
    xi2: np.ndarray         # Wineland parameter per step (inf where undefined)
    xi2_y: np.ndarray       # fixed-axis parameter per step (inf where degenerate)
    mean_spin: np.ndarray   # (N, 3)
    degenerate: np.ndarray  # bool flags, per-step metric degeneracies

    @property
    def xi2_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10 * np.log10(self.xi2)

    @property
    def xi2_y_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10 * np.log10(self.xi2_y)


def run_schedule(initial: np.ndarray, schedule: Schedule, ops: SpinOps) -> Trajectory:
    """Evolve pulse-then-QZE per step, recording states and squeezing."""
    qze = np.exp(-1j * schedule.chi_dt * ops.fz_diag**2)
    n = len(schedule.steps)
    states = np.empty((n, ops.d), dtype=complex)
    psi = initial
    for k, pulse in enumerate(schedule.steps):
        if pulse is not None:
            psi = ops.rotation(pulse.axis, pulse.angle) @ psi
        psi = qze * psi
        states[k] = psi
    xi2, xi2_y, n_spin = squeezing_batch(ops, states)
    return Trajectory(
        states=states,
        times=schedule.chi_dt * np.arange(1, n + 1),
        xi2=xi2,
        xi2_y=xi2_y,
        mean_spin=n_spin,
        degenerate=~np.isfinite(xi2) | ~np.isfinite(xi2_y),
    )


@dataclass
class BenchmarkResult:
    t_min: float      # seconds
    xi2_min: float    # linear
    state: np.ndarray = field(repr=False)

    @property
    def xi2_db(self) -> float:
        return to_db(self.xi2_min)


def _scan_and_refine(evolve, ops: SpinOps, chi: float, resolution: int) -> BenchmarkResult:
    """Minimize xi^2(chi*t) over (0, 0.5]: grid scan then golden refinement."""
    grid = np.linspace(0.5 / resolution, 0.5, resolution)
    states = evolve(grid)
    xi2, _, _ = squeezing_batch(ops, states)
    i = int(np.argmin(xi2))

    def objective(ct):
        x2, _, _ = squeezing_batch(ops, evolve(np.array([ct]))[0])
        return float(x2)

    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, resolution - 1)]
    ct_min, xi2_min = golden_min(objective, lo, hi)
    return BenchmarkResult(t_min=ct_min / chi, xi2_min=xi2_min,
                           state=evolve(np.array([ct_min]))[0])


def oat_benchmark(ops: SpinOps, chi: float = 1.0, resolution: int = 2000) -> BenchmarkResult:
    """Best squeezing of free QZE (one-axis twisting) evolution from CSS_x."""
    if resolution < 1000:
        raise ValueError("resolution must be >= 1000 grid samples")
    psi0 = css_x(ops)
    msq = ops.fz_diag**2

    def evolve(cts: np.ndarray) -> np.ndarray:
        return np.exp(-1j * np.outer(cts, msq)) * psi0

    return _scan_and_refine(evolve, ops, chi, resolution)


def tact_hamiltonian(ops: SpinOps, polarization: str = "x", scale: float = 0.5) -> np.ndarray:
    """Two-axis counter-twisting generator adapted to the CSS polarization.

    The symmetrized product of the two spin components transverse to the
    polarization axis; `scale` = 0.5 (symmetrized convention) or 1.0 (plain
    anticommutator) only rescales time, which the benchmark tests assert.
    """
    if polarization == "x":
        h = ops.fy @ ops.fz + ops.fz @ ops.fy
    elif polarization == "z":
        h = ops.fx @ ops.fy + ops.fy @ ops.fx
    else:
        raise ValueError("polarization must be 'x' or 'z'")
    return scale * h


def tact_benchmark(ops: SpinOps, chi: float = 1.0, resolution: int = 2000,
                   polarization: str = "x", scale: float = 0.5) -> BenchmarkResult:
    """Best squeezing under ideal TACT; the xi^2_ref threshold source."""
    if resolution < 1000:
        raise ValueError("resolution must be >= 1000 grid samples")
    H = tact_hamiltonian(ops, polarization, scale)
    w, v = np.linalg.eigh(H)
    psi0 = css_x(ops) if polarization == "x" else _css_z(ops)
    proj = v.conj().T @ psi0

    def evolve(cts: np.ndarray) -> np.ndarray:
        return np.exp(-1j * np.outer(cts, w)) * proj @ v.T

    # full anticommutator evolves twice as fast; keep the same chi*t window
    return _scan_and_refine(evolve, ops, chi, resolution)


def _css_z(ops: SpinOps) -> np.ndarray:
    psi = np.zeros(ops.d, dtype=complex)
    psi[-1] = 1.0
    return psi


_XI2_REF_CACHE: dict[float, float] = {}


def tact_xi2_ref(ops: SpinOps) -> float:
    """Cached TACT-optimal xi^2 for this spin (the reward threshold)."""
    if ops.f not in _XI2_REF_CACHE:
        _XI2_REF_CACHE[ops.f] = tact_benchmark(ops).xi2_min
    return _XI2_REF_CACHE[ops.f]


def toggling_cycle(state: np.ndarray, ops: SpinOps, chi: float, dt: float) -> np.ndarray:
    """One elementary cycle: QZE(dt) R_y(-pi/2) QZE(dt) R_y(pi/2) |state>.

    The R_y pair converts the middle QZE interval into f_x^2 twisting, so
    one cycle implements e^{+i chi dt f_y^2} up to a global phase and
    O((chi dt)^2) corrections.
    """
    qze = np.exp(-1j * chi * dt * ops.fz_diag**2)
    psi = ops.rotation("y", np.pi / 2) @ state
    psi = qze * psi
    psi = ops.rotation("y", -np.pi / 2) @ psi
    return qze * psi


def align_to_y(state: np.ndarray, ops: SpinOps) -> tuple[float, np.ndarray]:
    """R_x angle that minimizes xi_y^2, found to 1e-8; ties resolve to 0.

    For a state whose mean spin lies on the x axis the aligned state
    satisfies xi_y^2 = xi^2.
    """
    w, v = ops._eig("x")
    proj = v.conj().T @ state

    def rotated(angles: np.ndarray) -> np.ndarray:
        return np.exp(-1j * np.outer(angles, w)) * proj @ v.T

    coarse = np.linspace(-np.pi, np.pi, 1025)
    _, xi2_y, _ = squeezing_batch(ops, rotated(coarse))
    xi2_y = np.where(np.isfinite(xi2_y), xi2_y, np.inf)
    if np.nanmax(xi2_y) - np.nanmin(xi2_y) < 1e-12:
        return 0.0, state
    i = int(np.argmin(xi2_y))

    def objective(angle):
        _, x2y, _ = squeezing_batch(ops, rotated(np.array([angle]))[0])
        return float(x2y) if np.isfinite(x2y) else 1e300

    lo, hi = coarse[max(i - 1, 0)], coarse[min(i + 1, coarse.size - 1)]
    angle, _ = golden_min(objective, lo, hi, tol=1e-8)
    return angle, rotated(np.array([angle]))[0]


def fidelity_study(references: dict[str, np.ndarray], generator: str,
                   ops: SpinOps, chi: float, times: np.ndarray) -> dict[str, np.ndarray]:
    """F(t) = |<ref| e^{-i chi t G} |ref>|^2 for G in {fy2, fz2}."""
    if generator == "fz2":
        w = ops.fz_diag**2
        v = None
    elif generator == "fy2":
        w, v = np.linalg.eigh(ops.fy2)
    else:
        raise ValueError("generator must be 'fy2' or 'fz2'")
    curves = {}
    for name, ref in references.items():
        amp = ref if v is None else v.conj().T @ ref
        inner = np.exp(-1j * np.outer(chi * times, w)) @ (np.abs(amp) ** 2)
        curves[name] = np.abs(inner) ** 2
    return curves


# ---------------------------------------------------------------------------
# scripted reference protocol
# ---------------------------------------------------------------------------

@dataclass
class ScriptedProtocol:
    """Hand-structured analogue of the learned policy.

    Preparation: three paired R_y(+-pi/2) windows whose step placements are
    grid-searched for the earliest crossing of xi2_ref (then depth).
    Handoff: R_x(pi/3) at the crossing, an optional alternation pulse, one
    rebalancing R_y(-pi/4).  Stabilization: alternating R_y(+-pi/2).
    """

    f: float
    chi_dt: float
    n_steps: int
    xi2_ref: float
    pulses: list[RotationPulse | None]
    k_star: int            # first step with xi2 <= xi2_ref (0-based step index)
    rebalance_step: int    # step carrying R_y(-pi/4)
    prep_steps: int        # steps counted into T_p (through the rebalance)
    probe_state: np.ndarray  # stabilized-cycle state right after rebalance (t4 analogue)
    trajectory: Trajectory
    cycle_xi2_y: tuple[float, float]  # the two alternating stabilized levels
    stabilization_first_sign: int     # sign of the first alternation pulse after rebalance

    def schedule(self, chi: float) -> Schedule:
        return Schedule(steps=list(self.pulses), chi=chi, dt=self.chi_dt / chi)


def _batch_eval_windows(ops: SpinOps, combos: np.ndarray, n_steps: int,
                        chi_dt: float, xi2_ref: float, metric_from: int):
    """First-hit step and min xi^2 for batches of 3-window placements.

    combos rows are (p1, q1, p2, q2, p3, q3): +pi/2 pulses at p_i, -pi/2 at
    q_i.  Returns (first_hit, min_xi2, argmin) arrays; first_hit = n_steps
    where the threshold is never reached.
    """
    qze = np.exp(-1j * chi_dt * ops.fz_diag**2)
    up = ops.rotation("y", np.pi / 2).T.copy()
    um = ops.rotation("y", -np.pi / 2).T.copy()
    B = combos.shape[0]
    states = np.broadcast_to(css_x(ops), (B, ops.d)).copy()
    first_hit = np.full(B, n_steps, dtype=int)
    xi2_at_hit = np.full(B, np.inf)
    for k in range(n_steps):
        plus = (combos[:, 0] == k) | (combos[:, 2] == k) | (combos[:, 4] == k)
        minus = (combos[:, 1] == k) | (combos[:, 3] == k) | (combos[:, 5] == k)
        if plus.any():
            states[plus] = states[plus] @ up
        if minus.any():
            states[minus] = states[minus] @ um
        states *= qze
        if k < metric_from:
            continue
        xi2, _, _ = squeezing_batch(ops, states)
        # a hit only counts once all three windows have closed, so the
        # handoff pulses never collide with (or precede) a window pulse
        hit_now = (combos[:, 5] <= k) & (xi2 <= xi2_ref) & (first_hit == n_steps)
        first_hit[hit_now] = k
        xi2_at_hit[hit_now] = xi2[hit_now]
    return first_hit, xi2_at_hit


def _search_prep_windows(ops: SpinOps, n_steps: int, chi_dt: float,
                         xi2_ref: float) -> tuple[tuple[int, ...], int]:
    """Coarse-grid + hill-climb search of the three window placements.

    Two candidate families seed the search: a stride-2 grid over all six
    pulse steps, and compact windows (one or two steps wide) at unit-stride
    starts; the earliest-hitting placements are compact windows packed late,
    which the stride-2 grid alone misses.
    """
    import itertools

    metric_from = max(0, int(0.10 / chi_dt) - 2)
    coarse = list(itertools.combinations(range(0, n_steps, 2), 6))
    for starts in itertools.combinations(range(n_steps - 1), 3):
        for widths in itertools.product((1, 2), repeat=3):
            c = (starts[0], starts[0] + widths[0],
                 starts[1], starts[1] + widths[1],
                 starts[2], starts[2] + widths[2])
            if c[1] < c[2] and c[3] < c[4] and c[5] < n_steps:
                coarse.append(c)
    coarse = sorted(set(coarse))
    combos = np.array(coarse, dtype=int)
    first_hit, xi2_at_hit = _batch_eval_windows(
        ops, combos, n_steps, chi_dt, xi2_ref, metric_from)

    def score(idx):
        return (first_hit[idx], xi2_at_hit[idx])

    order = sorted(range(len(coarse)), key=score)
    seen = set(map(tuple, combos[order[:40]]))
    frontier = [tuple(combos[i]) for i in order[:40]]
    best = tuple(combos[order[0]])
    best_score = score(order[0])

    while frontier:
        cand = []
        for c in frontier:
            for i in range(6):
                for d in (-1, 1):
                    cc = list(c)
                    cc[i] += d
                    cc = tuple(cc)
                    if cc in seen:
                        continue
                    if not (0 <= cc[0] < cc[1] < cc[2] < cc[3] < cc[4] < cc[5] < n_steps):
                        continue
                    seen.add(cc)
                    cand.append(cc)
        if not cand:
            break
        arr = np.array(cand, dtype=int)
        fh, xh = _batch_eval_windows(ops, arr, n_steps, chi_dt, xi2_ref, metric_from)
        frontier = []
        for i, cc in enumerate(cand):
            if (fh[i], xh[i]) < best_score:
                best_score = (fh[i], xh[i])
                best = cc
                frontier.append(cc)
    return best, int(best_score[0])


_SCRIPTED_CACHE: dict[tuple, ScriptedProtocol] = {}


def scripted_protocol(ops: SpinOps, chi_dt: float = 0.314 / 70, n_steps: int = 70,
                      xi2_ref: float | None = None) -> ScriptedProtocol:
    """Build (and cache) the scripted reference protocol for this spin."""
    if xi2_ref is None:
        xi2_ref = tact_xi2_ref(ops)
    key = (ops.f, round(chi_dt, 15), n_steps, round(xi2_ref, 15))
    if key in _SCRIPTED_CACHE:
        return _SCRIPTED_CACHE[key]

    # preparation placements are searched within the first ~chi*t <= 0.16
    prep_budget = min(n_steps, int(np.floor(0.16 / chi_dt)))
    windows, k_star = _search_prep_windows(ops, prep_budget, chi_dt, xi2_ref)
    if k_star >= prep_budget:
        raise RuntimeError(
            f"scripted preparation never reached xi2_ref={xi2_ref:.4f} for f={ops.f}")

    qze = np.exp(-1j * chi_dt * ops.fz_diag**2)

    def build(pulse_map: dict[int, RotationPulse], upto: int) -> np.ndarray:
        psi = css_x(ops)
        for k in range(upto + 1):
            p = pulse_map.get(k)
            if p is not None:
                psi = ops.rotation(p.axis, p.angle) @ psi
            psi = qze * psi
        return psi

    prep_map = {
        windows[0]: RotationPulse("y", np.pi / 2),
        windows[1]: RotationPulse("y", -np.pi / 2),
        windows[2]: RotationPulse("y", np.pi / 2),
        windows[3]: RotationPulse("y", -np.pi / 2),
        windows[4]: RotationPulse("y", np.pi / 2),
        windows[5]: RotationPulse("y", -np.pi / 2),
    }

    # handoff variants: R_x(pi/3) right after the threshold crossing, an
    # optional single alternation or idle step, then the rebalancing
    # R_y(-pi/4).  Among variants whose stabilized tail stays squeezed,
    # prefer the one minimizing the estimated SQL-crossing time
    # T_p / (1 - xi_y(best readout state)), where the readout states are
    # the probe itself and its two one-pulse images under the alternating
    # encoding cycle.
    def readout_levels(probe: np.ndarray) -> float:
        imgs = np.stack([
            probe,
            qze * (ops.rotation("y", np.pi / 2) @ probe),
            qze * (ops.rotation("y", -np.pi / 2) @ probe),
        ])
        _, xi2_y, _ = squeezing_batch(ops, imgs)
        return float(np.min(xi2_y))

    candidates = []
    for gap in (None, "idle", np.pi / 2, -np.pi / 2):
        for first_sign in (1, -1):
            pulses: list[RotationPulse | None] = [None] * n_steps
            for k, p in prep_map.items():
                pulses[k] = p
            step = k_star + 1
            pulses[step] = RotationPulse("x", np.pi / 3)
            step += 1
            if gap is not None:
                if step >= n_steps - 2:
                    continue
                if gap != "idle":
                    pulses[step] = RotationPulse("y", gap)
                step += 1
            rebalance = step
            pulses[rebalance] = RotationPulse("y", -np.pi / 4)
            sign = first_sign
            for k in range(rebalance + 1, n_steps):
                pulses[k] = RotationPulse("y", sign * np.pi / 2)
                sign = -sign
            traj = run_schedule(css_x(ops), Schedule(pulses, chi=1.0, dt=chi_dt), ops)
            tail = traj.xi2_y[rebalance:]
            tail = tail[np.isfinite(tail)]
            if tail.size < 4:
                continue
            worst_tail = float(np.max(tail))
            best_level = readout_levels(traj.states[rebalance])
            est_crossing = (rebalance + 1) / max(1.0 - np.sqrt(best_level), 1e-6)
            candidates.append(
                (worst_tail, est_crossing, pulses, rebalance, first_sign, traj))
    if not candidates:
        raise RuntimeError("no viable stabilization handoff found")
    stable = [c for c in candidates if c[0] <= from_db(-3.5)]
    pool = stable if stable else candidates
    worst_tail, _, pulses, rebalance, first_sign, traj = min(
        pool, key=lambda c: (c[1], c[0]))
    probe_state = traj.states[rebalance]
    # the two alternating stabilized xi_y^2 levels, read off the first cycle
    lvl_a = float(traj.xi2_y[rebalance])
    lvl_b = float(traj.xi2_y[rebalance + 1])

    proto = ScriptedProtocol(
        f=ops.f, chi_dt=chi_dt, n_steps=n_steps, xi2_ref=xi2_ref,
        pulses=pulses, k_star=k_star, rebalance_step=rebalance,
        prep_steps=rebalance + 1, probe_state=probe_state, trajectory=traj,
        cycle_xi2_y=(lvl_a, lvl_b), stabilization_first_sign=first_sign,
    )
    _SCRIPTED_CACHE[key] = proto
    return proto
