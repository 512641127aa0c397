"""State diagnostics: spin moments, squeezing parameters, readout, fidelity.

The Wineland parameter compares the minimal spin variance transverse to the
mean spin against the coherent-state level,

    xi^2 = 2f min_perp Var(f_perp) / |<f>|^2 ,

and the fixed-axis variant pins the variance to the y readout axis,

    xi_y^2 = 2f Var(f_y) / <f_x>^2 .

Both are 1 for a coherent state polarized along x.  dB values are
10*log10 of the linear parameter throughout.

The batched entry points (`moments_batch`, `squeezing_batch`) accept arrays
of states with shape (..., d) and are what the environment and protocol
loops run on; the scalar wrappers below match them exactly for a single
state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spin import SpinOps, check_normalized

MEAN_SPIN_FLOOR = 1e-6  # in units of f


class MeanSpinUndefined(ValueError):
    """Mean spin too short to define the transverse minimization plane."""


class ReadoutAxisDegenerate(ValueError):
    """<f_x> vanishes; the fixed-axis parameter xi_y^2 diverges."""


@dataclass(frozen=True)
class Observation:
    """The five dimension-normalized moments the control agent sees."""

    mx: float
    my: float
    mz: float
    mxx: float
    myy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mx, self.my, self.mz, self.mxx, self.myy])


@dataclass(frozen=True)
class SqueezingReport:
    xi2: float          # Wineland, linear
    xi2_y: float        # fixed-axis, linear (inf when <f_x> ~ 0)
    mean_spin: tuple[float, float, float]

    @property
    def xi2_db(self) -> float:
        return to_db(self.xi2)

    @property
    def xi2_y_db(self) -> float:
        return to_db(self.xi2_y)


def to_db(linear: float) -> float:
    """Power-ratio convention: 10 log10(x)."""
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(linear))


def from_db(db: float) -> float:
    return float(10.0 ** (db / 10.0))


def moments_batch(ops: SpinOps, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First moments and symmetrized second moments for states (..., d).

    Returns (n, S): n[..., i] = <f_i> and S[..., i, j] = <{f_i, f_j}>/2
    with i, j over (x, y, z).
    """
    vals = np.einsum("oij,...i,...j->...o", ops.moment_stack, states.conj(), states).real
    n = vals[..., 0:3]
    xx, yy, zz, xy, yz, zx = (vals[..., 3], vals[..., 4], vals[..., 5],
                              vals[..., 6], vals[..., 7], vals[..., 8])
    S = np.empty(vals.shape[:-1] + (3, 3))
    S[..., 0, 0] = xx
    S[..., 1, 1] = yy
    S[..., 2, 2] = zz
    S[..., 0, 1] = S[..., 1, 0] = xy
    S[..., 1, 2] = S[..., 2, 1] = yz
    S[..., 2, 0] = S[..., 0, 2] = zx
    return n, S


def squeezing_batch(ops: SpinOps, states: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(xi2, xi2_y, n) for states (..., d); degenerate entries come back inf.

    The transverse minimum is closed-form: restrict the covariance
    C = S - n n^T to the plane orthogonal to the mean spin and take the
    smaller eigenvalue of the resulting 2x2 matrix.
    """
    f = ops.f
    n, S = moments_batch(ops, states)
    C = S - n[..., :, None] * n[..., None, :]
    nlen = np.linalg.norm(n, axis=-1)

    safe = nlen > MEAN_SPIN_FLOOR * f
    nhat = np.where(safe[..., None], n / np.where(safe, nlen, 1.0)[..., None], 0.0)

    # orthonormal transverse pair: cross nhat with the axis it is least
    # aligned to, then complete the triad
    a = np.zeros_like(nhat)
    idx = np.argmin(np.abs(nhat), axis=-1)
    np.put_along_axis(a, idx[..., None], 1.0, axis=-1)
    e1 = np.cross(nhat, a)
    e1 /= np.maximum(np.linalg.norm(e1, axis=-1)[..., None], 1e-300)
    e2 = np.cross(nhat, e1)

    c11 = np.einsum("...i,...ij,...j->...", e1, C, e1)
    c22 = np.einsum("...i,...ij,...j->...", e2, C, e2)
    c12 = np.einsum("...i,...ij,...j->...", e1, C, e2)
    half_tr = (c11 + c22) / 2
    disc = np.sqrt(np.maximum(((c11 - c22) / 2) ** 2 + c12**2, 0.0))
    minvar = np.maximum(half_tr - disc, 0.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        xi2 = np.where(safe, 2 * f * minvar / np.where(safe, nlen, 1.0) ** 2, np.inf)

    var_y = np.maximum(C[..., 1, 1], 0.0)
    mx = n[..., 0]
    safe_x = np.abs(mx) > MEAN_SPIN_FLOOR * f
    with np.errstate(divide="ignore", invalid="ignore"):
        xi2_y = np.where(safe_x, 2 * f * var_y / np.where(safe_x, mx, 1.0) ** 2, np.inf)
    return xi2, xi2_y, n


def observe(state: np.ndarray, ops: SpinOps) -> Observation:
    """Normalized moment set; independent of the Hilbert dimension."""
    vals = np.einsum("oij,i,j->o", ops.moment_stack[:5], state.conj(), state).real
    f = ops.f
    return Observation(
        mx=vals[0] / f, my=vals[1] / f, mz=vals[2] / f,
        mxx=vals[3] / f**2, myy=vals[4] / f**2,
    )


def wineland_xi2(state: np.ndarray, ops: SpinOps) -> SqueezingReport:
    xi2, xi2_y, n = squeezing_batch(ops, state)
    if not np.isfinite(xi2):
        raise MeanSpinUndefined(
            f"|<f>| = {np.linalg.norm(n):.3e} below {MEAN_SPIN_FLOOR}*f"
        )
    return SqueezingReport(xi2=float(xi2), xi2_y=float(xi2_y),
                           mean_spin=tuple(float(v) for v in n))


def fixed_axis_xi2(state: np.ndarray, ops: SpinOps) -> float:
    _, xi2_y, n = squeezing_batch(ops, state)
    if not np.isfinite(xi2_y):
        raise ReadoutAxisDegenerate(f"<f_x> = {n[0]:.3e} below {MEAN_SPIN_FLOOR}*f")
    return float(xi2_y)


def readout_distribution(state: np.ndarray, ops: SpinOps, axis: str = "y") -> np.ndarray:
    """P_m = |<m; axis|psi>|^2, ordered m = -f..f along the given axis."""
    check_normalized(state)
    if axis == "z":
        probs = np.abs(state) ** 2
    else:
        w, v = ops._eig(axis)  # eigh returns ascending eigenvalues = ascending m
        probs = np.abs(v.conj().T @ state) ** 2
    probs = np.where(probs < 0, 0.0, probs)
    total = probs.sum()
    if abs(total - 1.0) > 1e-10:
        raise ValueError(f"readout probabilities sum to {total}, expected 1")
    return probs


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """|<a|b>|^2 for pure states of equal dimension."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(np.vdot(a, b)) ** 2)
