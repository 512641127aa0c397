"""Exact spin-f operators, states, rotations, and propagators.

States are length-d complex unit vectors in the f_z eigenbasis with the
magnetic quantum number ascending, m = -f, ..., +f.  All other modules share
this ordering; serialized amplitude vectors use it too.  Everything here is
dense double-precision complex: the Hilbert spaces of interest are small
(d = 2f+1 <= ~102), so exact eigendecomposition beats any sparse or
approximate scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

NORM_TOL = 1e-10


def spin_dim(f: float) -> int:
    """Hilbert dimension d = 2f+1 for a (half-)integer spin f."""
    two_f = 2 * f
    if abs(two_f - round(two_f)) > 1e-12 or round(two_f) < 1:
        raise ValueError(f"spin must be a positive (half-)integer, got f={f}")
    return int(round(two_f)) + 1


def parse_spin(text: str | float) -> float:
    """Accept spin given as float ('10.5') or fraction ('21/2')."""
    if isinstance(text, (int, float)):
        f = float(text)
    else:
        f = float(Fraction(text))
    spin_dim(f)  # validates
    return f


@dataclass(frozen=True)
class RotationPulse:
    """Instantaneous rotation about a lab axis by `angle` radians."""

    axis: str  # 'x', 'y' or 'z'
    angle: float

    def __post_init__(self):
        if self.axis not in ("x", "y", "z"):
            raise ValueError(f"axis must be x, y or z, got {self.axis!r}")
        if not np.isfinite(self.angle):
            raise ValueError("rotation angle must be finite")


@dataclass(frozen=True)
class QzePropagator:
    """Diagonal propagator e^{-i chi dt m^2} of the quadratic Zeeman term."""

    chi: float  # rad/s
    dt: float   # s
    phases: np.ndarray = field(repr=False, compare=False, default=None)

    @staticmethod
    def build(ops: "SpinOps", chi: float, dt: float) -> "QzePropagator":
        phases = np.exp(-1j * chi * dt * ops.fz_diag**2)
        return QzePropagator(chi=chi, dt=dt, phases=phases)


class SpinOps:
    """Spin-f operator set with cached rotation eigendecompositions.

    Immutable after construction; safe to share across workers.  Rotation
    unitaries are built from the cached eigenbasis of the generator, so the
    hot loops never re-exponentiate.
    """

    def __init__(self, f: float):
        self.f = float(f)
        self.d = spin_dim(f)
        d = self.d
        m = np.arange(d) - self.f
        self.fz_diag = m.copy()

        # ladder operator: <m+1| f_+ |m> = sqrt(f(f+1) - m(m+1))
        lam = np.sqrt(self.f * (self.f + 1) - m[:-1] * (m[:-1] + 1))
        fp = np.zeros((d, d), dtype=complex)
        fp[np.arange(1, d), np.arange(d - 1)] = lam
        fm = fp.conj().T
        self.fx = (fp + fm) / 2
        self.fy = (fp - fm) / 2j
        self.fz = np.diag(m.astype(complex))

        self.fx2 = self.fx @ self.fx
        self.fy2 = self.fy @ self.fy
        self.fz2 = self.fz @ self.fz

        # stack used by the batched moment evaluator:
        # fx, fy, fz, fx^2, fy^2, fz^2, {fx,fy}/2, {fy,fz}/2, {fz,fx}/2
        self.moment_stack = np.stack([
            self.fx, self.fy, self.fz,
            self.fx2, self.fy2, self.fz2,
            (self.fx @ self.fy + self.fy @ self.fx) / 2,
            (self.fy @ self.fz + self.fz @ self.fy) / 2,
            (self.fz @ self.fx + self.fx @ self.fz) / 2,
        ])

        self._rot_eig: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._unitary_cache: dict[tuple[str, float], np.ndarray] = {}

    def operator(self, axis: str) -> np.ndarray:
        return {"x": self.fx, "y": self.fy, "z": self.fz}[axis]

    def _eig(self, axis: str) -> tuple[np.ndarray, np.ndarray]:
        if axis not in self._rot_eig:
            w, v = np.linalg.eigh(self.operator(axis))
            self._rot_eig[axis] = (w, v)
        return self._rot_eig[axis]

    def rotation(self, axis: str, angle: float) -> np.ndarray:
        """Unitary e^{-i angle f_axis}, cached per (axis, angle)."""
        key = (axis, float(angle))
        U = self._unitary_cache.get(key)
        if U is None:
            if axis == "z":
                U = np.diag(np.exp(-1j * angle * self.fz_diag))
            else:
                w, v = self._eig(axis)
                U = (v * np.exp(-1j * angle * w)) @ v.conj().T
            U.setflags(write=False)
            self._unitary_cache[key] = U
        return U

    def evolve_under(self, generator: np.ndarray, t: float, state: np.ndarray) -> np.ndarray:
        """e^{-i t G} |state> for a Hermitian generator (eigendecomposition)."""
        w, v = np.linalg.eigh(generator)
        return v @ (np.exp(-1j * w * t) * (v.conj().T @ state))


def build_spin_ops(f: float) -> SpinOps:
    return SpinOps(f)


def rotation_unitary(ops: SpinOps, pulse: RotationPulse) -> np.ndarray:
    return ops.rotation(pulse.axis, pulse.angle)


def apply_pulse(state: np.ndarray, ops: SpinOps, pulse: RotationPulse | None) -> np.ndarray:
    if pulse is None:
        return state
    return ops.rotation(pulse.axis, pulse.angle) @ state


def apply_qze(state: np.ndarray, prop: QzePropagator) -> np.ndarray:
    if state.shape[-1] != prop.phases.shape[0]:
        raise ValueError(
            f"state dimension {state.shape[-1]} does not match propagator "
            f"dimension {prop.phases.shape[0]}"
        )
    return prop.phases * state


def css_x(ops: SpinOps) -> np.ndarray:
    """Coherent spin state polarized along +x, |f, m_x = f>.

    Built from the eigendecomposition of f_x; global phase fixed so the
    m = +f amplitude is real positive (all amplitudes end up real positive,
    a binomial profile).
    """
    w, v = ops._eig("x")
    state = v[:, -1].copy()  # eigh sorts ascending; +f is last
    phase = state[-1]
    state *= np.conj(phase) / abs(phase)
    return state / np.linalg.norm(state)


def basis_state(ops: SpinOps, m: float) -> np.ndarray:
    """|f, m_z = m> in the ascending-m basis."""
    idx = int(round(m + ops.f))
    if not 0 <= idx < ops.d or abs(m + ops.f - idx) > 1e-9:
        raise ValueError(f"m={m} is not a valid projection for f={ops.f}")
    state = np.zeros(ops.d, dtype=complex)
    state[idx] = 1.0
    return state


def expectation(operator: np.ndarray, state: np.ndarray) -> float:
    """<state|A|state> for Hermitian A; residual imaginary part is discarded."""
    val = np.vdot(state, operator @ state)
    if abs(val.imag) > 1e-8 * max(1.0, abs(val.real)):
        raise ValueError(
            f"operator is not Hermitian on this state (Im residue {val.imag:.3e})"
        )
    return float(val.real)


def variance(operator: np.ndarray, state: np.ndarray) -> float:
    """Var(A) = <A^2> - <A>^2, clamped to >= 0 against roundoff."""
    mean = expectation(operator, state)
    mean_sq = expectation(operator @ operator, state)
    var = mean_sq - mean * mean
    if var < -1e-10:
        raise ValueError(f"variance {var:.3e} below the roundoff floor")
    return max(var, 0.0)


def check_normalized(state: np.ndarray, tol: float = NORM_TOL) -> None:
    nrm = np.linalg.norm(state)
    if abs(nrm - 1.0) > tol:
        raise ValueError(f"state norm {nrm} deviates from 1 beyond {tol}")
