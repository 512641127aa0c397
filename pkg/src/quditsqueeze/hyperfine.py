"""Hyperfine-Zeeman structure on the full nuclear x electronic product space.

H/h = A i.j + B_q [3(i.j)^2 + 3/2 i.j - i(i+1)j(j+1)] / [2i(2i-1)j(2j-1)]
      + (g_j mu_B j_z + g_i mu_N i_z) B / h

with everything in Hz.  Diagonalizing at a given field and labeling the
eigenvectors by their zero-field coupled basis overlap isolates one f
manifold, whose energies follow E_m ~ Omega_L m + chi m^2 in the weak-field
regime; the quadratic fit of that spectrum is the source of the qudit
simulator's chi.

The hyperfine constants are config inputs with literature defaults for the
161 isotope of dysprosium (ground term, j = 8, i = 5/2); the fitted
(Omega_L, chi) against the known 50 uT values validates them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spin import build_spin_ops, spin_dim
from .wigner import clebsch_gordan

MU_B_HZ_PER_T = 13.996244936e9   # Bohr magneton / h
MU_N_HZ_PER_T = 7.6225932291e6   # nuclear magneton / h


class ManifoldMixing(ValueError):
    """Zeeman mixing too strong to label eigenstates by (f, m)."""


@dataclass(frozen=True)
class AtomParams:
    i: float = 2.5
    j: float = 8.0
    a_hz: float = -116.2322e6       # magnetic-dipole constant
    b_hz: float = 1091.577e6        # electric-quadrupole constant
    g_j: float = 1.2416
    g_i: float = -0.192             # nuclear moment / (i mu_N)

    @property
    def dim(self) -> int:
        return spin_dim(self.i) * spin_dim(self.j)

    @property
    def f_range(self) -> list[float]:
        lo, hi = abs(self.j - self.i), self.j + self.i
        return [lo + k for k in range(int(round(hi - lo)) + 1)]


def product_operators(params: AtomParams):
    """(i_z, j_z, i.j) on the product space, ordered (m_i asc) x (m_j asc)."""
    iops = build_spin_ops(params.i)
    jops = build_spin_ops(params.j)
    eye_i = np.eye(iops.d)
    eye_j = np.eye(jops.d)
    iz = np.kron(iops.fz, eye_j)
    jz = np.kron(eye_i, jops.fz)
    ip = iops.fx + 1j * iops.fy
    im = iops.fx - 1j * iops.fy
    jp = jops.fx + 1j * jops.fy
    jm = jops.fx - 1j * jops.fy
    idotj = np.kron(iops.fz, jops.fz) + (np.kron(ip, jm) + np.kron(im, jp)) / 2
    return iz, jz, idotj


def build_hamiltonian(params: AtomParams, b_field: float) -> np.ndarray:
    """Full hyperfine + Zeeman Hamiltonian in Hz on the product space."""
    iz, jz, idotj = product_operators(params)
    i, j = params.i, params.j
    h = params.a_hz * idotj
    if i > 0.5 and j > 0.5:
        quad_num = (3 * idotj @ idotj + 1.5 * idotj
                    - i * (i + 1) * j * (j + 1) * np.eye(params.dim))
        h = h + params.b_hz * quad_num / (2 * i * (2 * i - 1) * j * (2 * j - 1))
    h = h + (params.g_j * MU_B_HZ_PER_T * jz + params.g_i * MU_N_HZ_PER_T * iz) * b_field
    return h


def coupled_basis(params: AtomParams) -> dict[tuple[float, float], np.ndarray]:
    """Zero-field eigenbasis |f, m> expanded over the product basis."""
    iops = build_spin_ops(params.i)
    jops = build_spin_ops(params.j)
    basis = {}
    for f in params.f_range:
        for mf_idx in range(spin_dim(f)):
            m = -f + mf_idx
            vec = np.zeros(params.dim)
            for ii, mi in enumerate(iops.fz_diag):
                mj = m - mi
                jj = int(round(mj + params.j))
                if 0 <= jj < jops.d and abs(mj) <= params.j:
                    vec[ii * jops.d + jj] = clebsch_gordan(
                        params.i, mi, params.j, mj, f, m)
            basis[(f, m)] = vec
    return basis


@dataclass
class ManifoldSpectrum:
    f: float
    m_values: np.ndarray
    energies_hz: np.ndarray
    overlaps: np.ndarray      # labeling confidence per level
    b_field: float


def label_manifold(params: AtomParams, b_field: float, f_target: float,
                   min_overlap: float = 0.6) -> ManifoldSpectrum:
    """Diagonalize at b_field and pick out the f_target manifold levels.

    H commutes with the total projection m_i + m_j, so each total-m sector
    diagonalizes independently; this keeps the m label exact (also through
    the zero-field degeneracies) and reduces the f label to a within-block
    overlap with the coupled basis.
    """
    if f_target not in params.f_range:
        raise ValueError(
            f"f={f_target} outside the coupled range {params.f_range}")
    ham = build_hamiltonian(params, b_field)
    herm_err = np.abs(ham - ham.conj().T).max()
    if herm_err > 1e-12 * max(1.0, np.abs(ham).max()):
        raise AssertionError(f"Hamiltonian not Hermitian ({herm_err:.2e})")

    iz, jz, _ = product_operators(params)
    mtot = np.real(np.diag(iz) + np.diag(jz))
    basis = coupled_basis(params)

    rows = {}
    d_target = spin_dim(f_target)
    for m in (-f_target + np.arange(d_target)):
        sel = np.where(np.abs(mtot - m) < 1e-9)[0]
        block = ham[np.ix_(sel, sel)]
        evals, evecs = np.linalg.eigh(block)
        # coupled vectors with this projection, restricted to the block
        f_labels = [f for f in params.f_range if abs(m) <= f]
        proj = np.stack([basis[(f, m)][sel] for f in f_labels])
        overlap2 = np.abs(proj.conj() @ evecs) ** 2
        for eig_idx in range(evals.size):
            lbl = int(np.argmax(overlap2[:, eig_idx]))
            if f_labels[lbl] != f_target:
                continue
            conf = overlap2[lbl, eig_idx]
            if conf < min_overlap:
                raise ManifoldMixing(
                    f"labeling overlap {conf:.3f} < {min_overlap} at m={m}")
            if m in rows:
                raise ManifoldMixing(f"duplicate label (f={f_target}, m={m})")
            rows[m] = (evals[eig_idx], conf)
    if len(rows) != d_target:
        raise ManifoldMixing(
            f"found {len(rows)} of {d_target} levels for f={f_target}")
    m_values = np.array(sorted(rows))
    return ManifoldSpectrum(
        f=f_target,
        m_values=m_values,
        energies_hz=np.array([rows[m][0] for m in m_values]),
        overlaps=np.array([rows[m][1] for m in m_values]),
        b_field=b_field,
    )


@dataclass
class QuadraticFit:
    omega_l: float        # rad/s
    chi: float            # rad/s
    offset_hz: float
    residual_rms_hz: float

    @property
    def gamma_from(self) -> float:
        """Gyromagnetic ratio Omega_L / B needs the field; see fit caller."""
        raise AttributeError("use gamma(b_field)")

    def gamma(self, b_field: float) -> float:
        return self.omega_l / b_field


def fit_quadratic(manifold: ManifoldSpectrum) -> QuadraticFit:
    """Least squares of E_m against (1, m, m^2); returns angular frequencies."""
    m = manifold.m_values
    if m.size < 3:
        raise ValueError("need at least three labeled levels")
    design = np.column_stack([np.ones_like(m), m, m * m])
    coef, *_ = np.linalg.lstsq(design, manifold.energies_hz, rcond=None)
    resid = manifold.energies_hz - design @ coef
    return QuadraticFit(
        omega_l=2 * np.pi * coef[1],
        chi=2 * np.pi * coef[2],
        offset_hz=coef[0],
        residual_rms_hz=float(np.sqrt(np.mean(resid**2))),
    )


def fit_at_field(params: AtomParams, b_field: float, f_target: float | None = None):
    """Convenience: label the (top-f by default) manifold and fit it."""
    if f_target is None:
        f_target = params.i + params.j
    manifold = label_manifold(params, b_field, f_target)
    return fit_quadratic(manifold), manifold
