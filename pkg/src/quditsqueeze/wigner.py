"""Spin Wigner distribution on the sphere via the multipole expansion.

W(theta, phi) = N * sum_{k=0}^{2f} sum_{q=-k}^{k} rho_kq Y_kq(theta, phi)

with state multipoles rho_kq obtained by projecting |psi><psi| onto the
irreducible tensor operators T_kq (matrix elements given by Clebsch-Gordan
coefficients).  The prefactor N is fixed so the map integrates to 1 over
the sphere; for a normalized pure state rho_00 = 1/sqrt(2f+1), hence
N = sqrt((2f+1)/(4*pi)).

Spherical harmonics are evaluated with the fully-normalized associated
Legendre three-term recursion (stable far beyond the k <= 2f = 21 needed
here); the factorial closed form would overflow at these orders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_LOG_FACT = None


def _log_factorial(n):
    """log(n!) from a cached table; n may be an integer array."""
    global _LOG_FACT
    if _LOG_FACT is None:
        _LOG_FACT = np.concatenate([[0.0], np.cumsum(np.log(np.arange(1, 400)))])
    return _LOG_FACT[n]


def _as_two(x: float, name: str) -> int:
    two = 2 * x
    if abs(two - round(two)) > 1e-9:
        raise ValueError(f"{name}={x} is not a (half-)integer")
    return int(round(two))


def clebsch_gordan(j1: float, m1: float, j2: float, m2: float,
                   J: float, M: float) -> float:
    """<j1 m1; j2 m2 | J M> in the Condon-Shortley convention.

    Returns 0 for M != m1+m2 or when the triangle rule fails; raises for
    arguments that are not (half-)integers or have inconsistent parity.
    """
    tj1, tm1 = _as_two(j1, "j1"), _as_two(m1, "m1")
    tj2, tm2 = _as_two(j2, "j2"), _as_two(m2, "m2")
    tJ, tM = _as_two(J, "J"), _as_two(M, "M")
    for tj, tm, nm in ((tj1, tm1, "m1"), (tj2, tm2, "m2"), (tJ, tM, "M")):
        if (tj - tm) % 2 != 0:
            raise ValueError(f"projection {nm} has the wrong parity for its spin")
    if tj1 < 0 or tj2 < 0 or tJ < 0:
        raise ValueError("spins must be non-negative")

    if tM != tm1 + tm2:
        return 0.0
    if abs(tm1) > tj1 or abs(tm2) > tj2 or abs(tM) > tJ:
        return 0.0
    if tJ < abs(tj1 - tj2) or tJ > tj1 + tj2 or (tj1 + tj2 - tJ) % 2 != 0:
        return 0.0

    # all of these are genuine integers once the guards above pass
    a = (tj1 + tj2 - tJ) // 2
    b = (tj1 - tj2 + tJ) // 2
    c = (-tj1 + tj2 + tJ) // 2
    log_delta = 0.5 * (_log_factorial(a) + _log_factorial(b) + _log_factorial(c)
                       - _log_factorial((tj1 + tj2 + tJ) // 2 + 1))

    log_pref = 0.5 * (np.log(tJ + 1.0)
                      + _log_factorial((tJ + tM) // 2) + _log_factorial((tJ - tM) // 2)
                      + _log_factorial((tj1 + tm1) // 2) + _log_factorial((tj1 - tm1) // 2)
                      + _log_factorial((tj2 + tm2) // 2) + _log_factorial((tj2 - tm2) // 2))

    k_min = max(0, (tj2 - tJ - tm1) // 2, (tj1 - tJ + tm2) // 2)
    k_max = min(a, (tj1 - tm1) // 2, (tj2 + tm2) // 2)
    total = 0.0
    for k in range(k_min, k_max + 1):
        log_den = (_log_factorial(k)
                   + _log_factorial(a - k)
                   + _log_factorial((tj1 - tm1) // 2 - k)
                   + _log_factorial((tj2 + tm2) // 2 - k)
                   + _log_factorial((tJ - tj2 + tm1) // 2 + k)
                   + _log_factorial((tJ - tj1 - tm2) // 2 + k))
        total += (-1.0) ** k * np.exp(log_delta + log_pref - log_den)
    return float(total)


def legendre_normalized(k_max: int, theta: np.ndarray) -> np.ndarray:
    """Fully-normalized associated Legendre values Pbar[k, q, i].

    Normalized so that Y_kq(theta, phi) = Pbar[k, q] * exp(i q phi) for
    q >= 0, Condon-Shortley phase included.  Entries with q > k are 0.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    ct, st = np.cos(theta), np.sin(theta)
    P = np.zeros((k_max + 1, k_max + 1) + theta.shape)
    P[0, 0] = 1.0 / np.sqrt(4 * np.pi)
    for q in range(1, k_max + 1):
        P[q, q] = -np.sqrt((2 * q + 1) / (2.0 * q)) * st * P[q - 1, q - 1]
    for q in range(0, k_max):
        P[q + 1, q] = np.sqrt(2 * q + 3.0) * ct * P[q, q]
        for k in range(q + 2, k_max + 1):
            a = np.sqrt((4.0 * k * k - 1.0) / (k * k - q * q))
            b = np.sqrt(((k - 1.0) ** 2 - q * q) / (4.0 * (k - 1.0) ** 2 - 1.0))
            P[k, q] = a * (ct * P[k - 1, q] - b * P[k - 2, q])
    return P


def state_multipoles(state: np.ndarray, ops) -> np.ndarray:
    """rho[k, q + k_max] = Tr(T_kq^dag |psi><psi|) for k = 0..2f, |q| <= k.

    Columns are centered at q = 0 -> index k_max = 2f, so every row shares
    one q axis.
    """
    f, d = ops.f, ops.d
    k_max = d - 1
    pref = np.sqrt((2 * np.arange(k_max + 1) + 1.0) / d)
    m = ops.fz_diag
    rho = np.zeros((k_max + 1, 2 * k_max + 1), dtype=complex)
    for k in range(k_max + 1):
        for q in range(-k, k + 1):
            # <T_kq> = sum_m conj(c_{m+q}) c_m sqrt((2k+1)/d) <f m; k q | f m+q>
            acc = 0.0
            for i in range(d):
                ip = i + q
                if not 0 <= ip < d:
                    continue
                cg = clebsch_gordan(f, m[i], k, q, f, m[ip])
                if cg != 0.0:
                    acc = acc + np.conj(state[ip]) * state[i] * cg
            rho[k, q + k_max] = np.conj(pref[k] * acc)
    return rho


def wigner_at(state: np.ndarray, ops, theta, phi) -> np.ndarray:
    """W evaluated at broadcast angle arrays (no grid restriction)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if theta.shape != phi.shape:
        raise ValueError("theta and phi must have the same shape")
    rho = state_multipoles(state, ops)
    k_max = ops.d - 1
    flat_t, flat_p = theta.ravel(), phi.ravel()
    P = legendre_normalized(k_max, flat_t)
    vals = np.zeros(flat_t.size, dtype=complex)
    for k in range(k_max + 1):
        vals += rho[k, k_max] * P[k, 0]
        for q in range(1, k + 1):
            # q and -q terms combined; Y_{k,-q} = (-1)^q conj(Y_kq)
            vals += 2 * (rho[k, k_max + q] * P[k, q] * np.exp(1j * q * flat_p)).real
    vals *= np.sqrt(ops.d / (4 * np.pi))
    return vals.real.reshape(theta.shape)


@dataclass
class WignerMap:
    theta: np.ndarray   # (n_theta,)
    phi: np.ndarray     # (n_phi,)
    values: np.ndarray  # (n_theta, n_phi)

    def to_rows(self):
        """(theta, phi, W) rows for CSV serialization."""
        tt, pp = np.meshgrid(self.theta, self.phi, indexing="ij")
        return np.column_stack([tt.ravel(), pp.ravel(), self.values.ravel()])


def wigner_map(state: np.ndarray, ops, n_theta: int = 64, n_phi: int = 128) -> WignerMap:
    """W on a regular midpoint grid; 64x128 resolves f = 21/2 comfortably."""
    theta = (np.arange(n_theta) + 0.5) * np.pi / n_theta
    phi = np.arange(n_phi) * 2 * np.pi / n_phi
    rho = state_multipoles(state, ops)
    k_max = ops.d - 1
    P = legendre_normalized(k_max, theta)          # (k, q, n_theta)
    A = np.einsum("kq,kqt->qt", rho[:, k_max:], P)  # q >= 0 block
    phases = np.exp(1j * np.outer(np.arange(k_max + 1), phi))
    weights = np.full(k_max + 1, 2.0)
    weights[0] = 1.0
    values = (weights[:, None, None] * A[:, :, None] * phases[:, None, :]).sum(axis=0).real
    values *= np.sqrt(ops.d / (4 * np.pi))
    return WignerMap(theta=theta, phi=phi, values=values)


def sphere_integral(state: np.ndarray, ops, n_theta: int = 64, n_phi: int = 128) -> float:
    """Gauss-Legendre x uniform-phi quadrature of W; exact for band limit 2f."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(x)
    phi = np.arange(n_phi) * 2 * np.pi / n_phi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    vals = wigner_at(state, ops, tt, pp)
    return float((w @ vals).sum() * 2 * np.pi / n_phi)
