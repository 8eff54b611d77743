"""Exact evolution of the four-level model in its conserved collective sector.

The model is ``H = chi (S_A^+ + S_B^+)(S_A^- + S_B^-) + delta (S_B^z - S_A^z)``
for two spins of length ``j = N/4``. It conserves ``S_A^z + S_B^z``; starting
from ``|m_A = -j, m_B = +j>`` the dynamics stays in the sector spanned by::

    |n> = |m_A = -j + n, m_B = j - n>,   n = 0 .. 2j

where ``n`` is the number of pairs, so n̄ = n_{e,A} + n_{g,B} = 2n. The
Hamiltonian is tridiagonal in this basis.

Moments that leave the sector (``<S^+ S^+>``, ``<S^x S^z>`` and so on) vanish
identically, so variances of transverse spin combinations are assembled from
``<S_a^z>``, ``<(S_a^z)^2>`` and ``c = <S_A^+ S_B^->`` alone.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import expm_multiply

from .upa import QUAD_FROM_MODES

__all__ = [
    "SectorBasis",
    "CollectiveState",
    "SectorMoments",
    "FockOracleConfig",
    "FockOracleResult",
    "CutoffError",
    "KrylovConvergenceWarning",
    "build_sector_hamiltonian",
    "evolve_collective",
    "sector_moments",
    "fock_tms_oracle",
    "ed_time_series",
    "SectorPropagator",
    "minimum_squeezing",
]


class CutoffError(RuntimeError):
    """Fock cutoff too small for the requested evolution."""


class KrylovConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SectorBasis:
    """Zero-total-inversion sector of two spins of length j = N/4."""

    N: int

    def __post_init__(self):
        if self.N < 2 or self.N % 2:
            raise ValueError("N must be even and >= 2")

    @property
    def j(self) -> float:
        return self.N / 4.0

    @property
    def dim(self) -> int:
        return self.N // 2 + 1

    @property
    def m_A(self) -> np.ndarray:
        return -self.j + np.arange(self.dim)

    @property
    def m_B(self) -> np.ndarray:
        return self.j - np.arange(self.dim)

    def index(self, m_A: float) -> int:
        n = m_A + self.j
        if abs(n - round(n)) > 1e-9 or not 0 <= round(n) < self.dim:
            raise ValueError(f"m_A={m_A} not in the sector")
        return int(round(n))


@dataclass(frozen=True)
class CollectiveState:
    amplitudes: np.ndarray
    basis: SectorBasis

    @classmethod
    def initial(cls, basis: SectorBasis) -> "CollectiveState":
        psi = np.zeros(basis.dim, dtype=complex)
        psi[0] = 1.0
        return cls(psi, basis)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def _ladder(j, m, sign):
    """sqrt(j(j+1) - m(m +/- 1))."""
    return np.sqrt(np.clip(j * (j + 1) - m * (m + sign), 0.0, None))


def _hopping(basis: SectorBasis) -> np.ndarray:
    """<n+1| S_A^+ S_B^- |n> for n = 0 .. dim-2."""
    mA, mB = basis.m_A[:-1], basis.m_B[:-1]
    return _ladder(basis.j, mA, +1) * _ladder(basis.j, mB, -1)


def _tridiagonal(N, chi, delta):
    basis = SectorBasis(N)
    j, mA, mB = basis.j, basis.m_A, basis.m_B
    diag = chi * ((j + mA) * (j - mA + 1) + (j + mB) * (j - mB + 1)) + delta * (mB - mA)
    off = chi * _hopping(basis)
    return basis, diag, off


def build_sector_hamiltonian(N: int, chi: float, delta: float) -> sparse.csr_matrix:
    """Tridiagonal sector Hamiltonian as a real symmetric CSR matrix."""
    _, diag, off = _tridiagonal(N, chi, delta)
    return sparse.diags([off, diag, off], [-1, 0, 1], format="csr")


# ---------------------------------------------------------------------------
# Time evolution
# ---------------------------------------------------------------------------


def _lanczos_expm(H, v, dt, m, tol):
    """One Krylov step of exp(-i H dt) v; returns (w, error estimate)."""
    n = v.shape[0]
    m = min(m, n)
    beta0 = np.linalg.norm(v)
    V = np.zeros((m + 1, n), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = v / beta0
    k_used = m
    for k in range(m):
        w = H @ V[k]
        alpha[k] = np.vdot(V[k], w).real
        w = w - alpha[k] * V[k] - (beta[k - 1] * V[k - 1] if k else 0.0)
        # full reorthogonalization keeps the small basis accurate
        w -= V[: k + 1].T @ (V[: k + 1].conj() @ w)
        beta[k] = np.linalg.norm(w)
        if beta[k] < 1e-13 * max(1.0, abs(alpha[k])):
            k_used = k + 1
            break
        V[k + 1] = w / beta[k]
    k = k_used
    if k == 1:
        evals, evecs = np.array([alpha[0]]), np.ones((1, 1))
    else:
        evals, evecs = eigh_tridiagonal(alpha[:k], beta[: k - 1])
    coef = evecs @ (np.exp(-1j * evals * dt) * evecs[0])
    if k < m:
        return beta0 * (coef @ V[:k]), 0.0
    # the residual estimate cannot resolve below roundoff in coef
    floor = 8 * m * np.finfo(float).eps * beta[k - 1]
    err = max(abs(beta[k - 1] * coef[-1]) - floor, 0.0) * beta0
    return beta0 * (coef @ V[:k]), err


def _krylov_propagate(H, psi, t_grid, m=30, tol=1e-12, max_steps=2_000_000):
    out = np.empty((len(t_grid), psi.shape[0]), dtype=complex)
    # remove the mean diagonal as a global phase to shrink the Krylov spectrum
    shift = float(H.diagonal().mean()) if H.shape[0] else 0.0
    H = (H - shift * sparse.identity(H.shape[0], format="csr")).tocsr()
    t_now = 0.0
    hnorm = abs(H).sum(axis=1).max() if H.nnz else 0.0
    dt = (m / 4.0) / hnorm if hnorm > 0 else math.inf
    steps = 0
    for i, t_target in enumerate(t_grid):
        while t_now < t_target:
            h = min(dt, t_target - t_now)
            w, err = _lanczos_expm(H, psi, h, m, tol)
            steps += 1
            if steps > max_steps:
                raise RuntimeError("Krylov propagation exceeded its step budget")
            if err > tol:
                dt = 0.5 * h
                if dt < 1e-300:
                    raise RuntimeError("Krylov step size underflow")
                continue
            psi = w
            t_now += h
            if err < 1e-3 * tol:
                dt = 1.5 * max(dt, h)
        out[i] = psi * np.exp(-1j * shift * t_target)
    return out


def _ode_propagate(H, psi, t_grid, tol=1e-12):
    Hc = H.astype(complex)
    sol = solve_ivp(lambda _, y: -1j * (Hc @ y), (0.0, t_grid[-1]) if len(t_grid) else (0, 0),
                    psi, t_eval=t_grid, method="DOP853", rtol=tol, atol=tol * 1e-2)
    if not sol.success:
        raise RuntimeError(f"ODE evolution failed: {sol.message}")
    return sol.y.T


def _eigh_propagate(N, chi, delta, psi, t_grid):
    _, diag, off = _tridiagonal(N, chi, delta)
    E, V = eigh_tridiagonal(diag, off)
    c = V.T @ psi
    phases = np.exp(-1j * np.outer(t_grid, E))
    return (phases * c) @ V.T


def evolve_collective(state: CollectiveState, t_grid: Sequence[float], chi: float,
                      delta: float, method: str = "krylov", tol: float = 1e-12):
    """Evolve ``state`` to every time in ``t_grid`` (relative to now).

    Parameters
    ----------
    method : {'krylov', 'adaptive_ode', 'eigh'}
        ``krylov`` is the Lanczos propagator with adaptive steps and a local
        error target ``tol``; if it fails it falls back to ``adaptive_ode``
        with a :class:`KrylovConvergenceWarning`. ``eigh`` diagonalizes the
        tridiagonal Hamiltonian once and is exact for long grids.
        Negative times are allowed (backward evolution) when t_grid is
        monotone in magnitude away from zero.

    Returns
    -------
    ndarray of shape (len(t_grid), dim)
    """
    t_grid = np.asarray(t_grid, dtype=float)
    basis = state.basis
    psi = np.asarray(state.amplitudes, dtype=complex)
    if t_grid.size == 0:
        return np.empty((0, basis.dim), dtype=complex)
    if method == "eigh":
        return _eigh_propagate(basis.N, chi, delta, psi, t_grid)
    sign = 1.0
    if np.all(t_grid <= 0):
        sign, t_grid = -1.0, -t_grid
    if np.any(np.diff(t_grid) < 0) or t_grid[0] < 0:
        raise ValueError("t_grid must be monotone and start at or after 0")
    H = sign * build_sector_hamiltonian(basis.N, chi, delta)
    if method == "krylov":
        try:
            return _krylov_propagate(H, psi, t_grid, tol=tol)
        except RuntimeError as exc:
            warnings.warn(f"Krylov propagation failed ({exc}); using adaptive ODE",
                          KrylovConvergenceWarning)
            return _ode_propagate(H, psi, t_grid, tol)
    if method == "adaptive_ode":
        return _ode_propagate(H, psi, t_grid, tol)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------

SPIN_LABELS = ("Ax", "Ay", "Az", "Bx", "By", "Bz")


@dataclass(frozen=True)
class SectorMoments:
    """Moments of a sector-confined state.

    ``spin_mean`` and ``spin_cov`` are the mean vector and symmetrized
    covariance over (S_A^x, S_A^y, S_A^z, S_B^x, S_B^y, S_B^z).
    """

    N: int
    z_A: float
    z_B: float
    zz_AA: float
    zz_BB: float
    zz_AB: float
    c_AB: complex
    n_bar: float
    var_s1m: float
    var_s2p: float
    var_dn: float
    spin_mean: np.ndarray
    spin_cov: np.ndarray

    @property
    def xi2(self) -> float:
        return 4.0 * self.var_s1m / self.N


def sector_moments(amplitudes, basis: SectorBasis) -> SectorMoments:
    psi = np.asarray(amplitudes)
    p = np.abs(psi) ** 2
    p = p / p.sum()
    j = basis.j
    mA, mB = basis.m_A, basis.m_B
    zA, zB = float(p @ mA), float(p @ mB)
    zzA, zzB, zzAB = float(p @ mA**2), float(p @ mB**2), float(p @ (mA * mB))
    c = complex(np.sum(np.conj(psi[1:]) * psi[:-1] * _hopping(basis)))
    c /= float(np.sum(np.abs(psi) ** 2))
    tA = 0.5 * (j * (j + 1) - zzA)
    tB = 0.5 * (j * (j + 1) - zzB)
    var = tA + tB - c.imag
    mean = np.array([0.0, 0.0, zA, 0.0, 0.0, zB])
    cov = np.zeros((6, 6))
    cov[0, 0] = cov[1, 1] = tA
    cov[3, 3] = cov[4, 4] = tB
    cov[2, 2] = zzA - zA**2
    cov[5, 5] = zzB - zB**2
    cov[2, 5] = cov[5, 2] = zzAB - zA * zB
    cov[0, 3] = cov[3, 0] = c.real / 2
    cov[1, 4] = cov[4, 1] = c.real / 2
    cov[0, 4] = cov[4, 0] = -c.imag / 2
    cov[1, 3] = cov[3, 1] = c.imag / 2
    n_bar = (j + zA) + (j - zB)
    dn = mA + mB  # n_eA - n_gB, identically zero in the sector
    var_dn = float(p @ dn**2 - (p @ dn) ** 2)
    return SectorMoments(basis.N, zA, zB, zzA, zzB, zzAB, c, float(n_bar), float(var),
                         float(var), var_dn, mean, cov)


def ed_time_series(N: int, chi: float, delta: float, t_grid, method: str = "eigh"):
    """Moments at every time of ``t_grid`` starting from the pump state."""
    basis = SectorBasis(N)
    states = evolve_collective(CollectiveState.initial(basis), t_grid, chi, delta, method)
    return [sector_moments(s, basis) for s in states]


class SectorPropagator:
    """Pump-state evolution from one diagonalization of the sector Hamiltonian."""

    def __init__(self, N: int, chi: float, delta: float):
        self.basis = SectorBasis(N)
        _, diag, off = _tridiagonal(N, chi, delta)
        self.energies, self.vectors = eigh_tridiagonal(diag, off)
        self._coef = self.vectors.T @ CollectiveState.initial(self.basis).amplitudes

    def state(self, t: float) -> np.ndarray:
        w = np.exp(-1j * t * self.energies) * self._coef
        # keep the large real eigenvector matrix out of complex arithmetic
        return self.vectors @ w.real + 1j * (self.vectors @ w.imag)

    def moments(self, t: float) -> SectorMoments:
        return sector_moments(self.state(t), self.basis)


def minimum_squeezing(N: int, chi: float, delta: float, nchit_max: float = 8.0,
                      n_grid: int = 161):
    """Minimum over t of (4/N) var(S_{1,-}); returns (t_min, xi2_min).

    A grid in N chi t in (0, nchit_max] locates the basin, then a bounded
    scalar search refines it.
    """
    prop = SectorPropagator(N, chi, delta)
    scale = N * chi
    taus = np.linspace(0.0, nchit_max, n_grid)[1:]
    vals = np.array([prop.moments(tau / scale).xi2 for tau in taus])
    k = int(np.argmin(vals))
    lo = taus[max(k - 1, 0)] if k > 0 else taus[0] / 2
    hi = taus[min(k + 1, len(taus) - 1)]
    res = minimize_scalar(lambda tau: prop.moments(tau / scale).xi2, bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-9})
    if res.fun <= vals[k]:
        return res.x / scale, float(res.fun)
    return taus[k] / scale, float(vals[k])


# ---------------------------------------------------------------------------
# Two-mode Fock oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FockOracleConfig:
    """Two-mode Fock evolution under r (a^dag b^dag + a b), r = N chi / 2.

    ``times`` are the output times; the cutoff shell population must stay
    below ``cutoff_tol``.
    """

    n_max: int
    coupling: float
    times: tuple
    cutoff_tol: float = 1e-8


@dataclass(frozen=True)
class FockOracleResult:
    times: np.ndarray
    n_bar: np.ndarray
    covariance: np.ndarray  # (n_t, 4, 4) over (X+, Y+, X-, Y-)
    cutoff_population: np.ndarray


def fock_tms_oracle(cfg: FockOracleConfig) -> FockOracleResult:
    n = cfg.n_max + 1
    ann = sparse.diags(np.sqrt(np.arange(1, n, dtype=float)), 1, format="csr")
    eye = sparse.identity(n, format="csr")
    a = sparse.kron(ann, eye, format="csr")
    b = sparse.kron(eye, ann, format="csr")
    H = cfg.coupling * (a.T @ b.T + a @ b)
    psi0 = np.zeros(n * n, dtype=complex)
    psi0[0] = 1.0
    times = np.asarray(cfg.times, dtype=float)
    states = np.array([expm_multiply(-1j * H * t, psi0) if t else psi0 for t in times])
    s2 = 1.0 / math.sqrt(2.0)
    quads = [s2 * (a + a.T), -1j * s2 * (a - a.T), s2 * (b + b.T), -1j * s2 * (b - b.T)]
    na = np.arange(n).repeat(n)
    nb = np.tile(np.arange(n), n)
    shell = (na == cfg.n_max) | (nb == cfg.n_max)
    nbars, covs, cut = [], [], []
    for psi in states:
        p = np.abs(psi) ** 2
        cut.append(p[shell].sum())
        nbars.append(p @ (na + nb))
        vecs = [q @ psi for q in quads]
        mean = np.array([np.vdot(psi, v).real for v in vecs])
        C = np.empty((4, 4))
        for i in range(4):
            for k in range(4):
                C[i, k] = np.vdot(vecs[i], vecs[k]).real - mean[i] * mean[k]
        covs.append(QUAD_FROM_MODES @ C @ QUAD_FROM_MODES.T)
    cut = np.array(cut)
    if np.any(cut > cfg.cutoff_tol):
        raise CutoffError(
            f"cutoff shell population {cut.max():.2e} exceeds {cfg.cutoff_tol:g}; increase n_max")
    return FockOracleResult(times, np.array(nbars), np.array(covs), cut)
