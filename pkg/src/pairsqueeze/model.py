"""Physical parameters, Clebsch-Gordan coefficients, coupling tensors and
initial-state moments shared by every simulation backend.

Level ordering
--------------
The 4F+2 internal levels are ordered lexicographically by (manifold, m) with
the ground manifold first and m ascending::

    index(g, m) = m + F
    index(e, m) = 2F + 1 + m + F

Flattening of collective variables
----------------------------------
A Hermitian matrix S of collective variables S_{ab} is flattened into ``d**2``
real numbers by walking the pairs a <= b lexicographically and emitting
``Re S_ab`` followed by ``Im S_ab`` (the imaginary part is omitted on the
diagonal, where it vanishes identically). :func:`flatten_hermitian` and
:func:`unflatten_hermitian` implement this layout and every module uses them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Dict, Tuple

import numpy as np

__all__ = [
    "DomainError",
    "SingularDetuningError",
    "PhysicalParams",
    "DerivedParams",
    "CouplingTensors",
    "InitialMoments",
    "clebsch_gordan",
    "derive_params",
    "coupling_tensors",
    "initial_state_moments",
    "product_state_moments",
    "level_index",
    "level_labels",
    "n_levels",
    "flatten_hermitian",
    "unflatten_hermitian",
    "flat_index",
    "repair_psd",
    "export_cg_table",
]


class DomainError(ValueError):
    """Raised when a quantum number or population is out of range."""


class SingularDetuningError(ValueError):
    """Raised when the cavity-atom detuning vanishes."""


def _half_integer(x) -> Fraction:
    """Convert ``x`` to an exact half-integer Fraction or raise."""
    fx = Fraction(x).limit_denominator(4)
    if fx.denominator not in (1, 2) or abs(float(fx) - float(x)) > 1e-12:
        raise DomainError(f"{x!r} is not an integer or half-integer")
    return fx


# ---------------------------------------------------------------------------
# Clebsch-Gordan coefficients
# ---------------------------------------------------------------------------


def _fact(x: Fraction) -> int:
    if x.denominator != 1 or x < 0:
        raise DomainError("factorial of a non-integer or negative argument")
    return math.factorial(int(x))


def _cg_exact_squared(j1: Fraction, m1: Fraction, j2: Fraction, m2: Fraction,
                      J: Fraction, M: Fraction) -> Tuple[int, Fraction]:
    """Return (sign, value**2) of <j1 m1; j2 m2 | J M> as exact rationals.

    Uses the explicit Racah finite sum, which is the Wigner 3j formula with the
    phase and sqrt(2J+1) normalization folded in.
    """
    if m1 + m2 != M:
        return 0, Fraction(0)
    if not (abs(j1 - j2) <= J <= j1 + j2):
        return 0, Fraction(0)
    if abs(m1) > j1 or abs(m2) > j2 or abs(M) > J:
        return 0, Fraction(0)
    pref = Fraction(
        (2 * J + 1) * _fact(J + j1 - j2) * _fact(J - j1 + j2) * _fact(j1 + j2 - J),
        _fact(j1 + j2 + J + 1),
    )
    pref *= (_fact(J + M) * _fact(J - M) * _fact(j1 - m1) * _fact(j1 + m1)
             * _fact(j2 - m2) * _fact(j2 + m2))
    total = Fraction(0)
    k = 0
    while True:
        args = (j1 + j2 - J - k, j1 - m1 - k, j2 + m2 - k)
        if min(args) < 0:
            break
        lo = (J - j2 + m1 + k, J - j1 - m2 + k)
        if min(lo) >= 0:
            den = _fact(Fraction(k))
            for a in args + lo:
                den *= _fact(a)
            total += Fraction((-1) ** k, den)
        k += 1
    if total == 0:
        return 0, Fraction(0)
    return (1 if total > 0 else -1), pref * total * total


def clebsch_gordan(F, m, q) -> float:
    """Coefficient C_m^q = <F, m; 1, q | F, m+q> for an F -> F transition.

    Parameters
    ----------
    F : int, float or Fraction
        Total angular momentum (integer or half-integer, F >= 1/2).
    m : int, float or Fraction
        Ground-state magnetic quantum number.
    q : {-1, 0, 1}
        Photon polarization index.

    Returns
    -------
    float
        The coefficient, computed with exact rational arithmetic and converted
        to float once at the end.
    """
    Ff, mf = _half_integer(F), _half_integer(m)
    if Ff < Fraction(1, 2):
        raise DomainError(f"F must be >= 1/2, got {F!r}")
    if q not in (-1, 0, 1):
        raise DomainError(f"q must be -1, 0 or +1, got {q!r}")
    if (Ff - mf).denominator != 1:
        raise DomainError(f"m={m!r} is incompatible with F={F!r}")
    if abs(mf) > Ff or abs(mf + q) > Ff:
        raise DomainError(f"|m| or |m+q| exceeds F for F={F}, m={m}, q={q}")
    return _cg_cached(Ff, mf, int(q))


@lru_cache(maxsize=None)
def _cg_cached(Ff: Fraction, mf: Fraction, q: int) -> float:
    sign, sq = _cg_exact_squared(Ff, mf, Fraction(1), Fraction(q), Ff, mf + q)
    if sign == 0:
        return 0.0
    return sign * math.sqrt(float(sq))


def export_cg_table(F, path) -> None:
    """Write every nonzero-domain C_m^q for the F -> F line as CSV."""
    Ff = _half_integer(F)
    ms = [Ff - k for k in range(int(2 * Ff) + 1)][::-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["F", "m", "q", "value"])
        for m in ms:
            for q in (-1, 0, 1):
                if abs(m + q) <= Ff:
                    w.writerow([float(Ff), float(m), q, repr(clebsch_gordan(Ff, m, q))])


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhysicalParams:
    """Raw cavity and atom parameters (angular frequencies in rad/s).

    Attributes
    ----------
    g0 : float
        Single-photon half-Rabi frequency.
    kappa : float
        Cavity power decay linewidth.
    gamma : float
        Spontaneous emission rate.
    delta_cavity : float
        Cavity-atom detuning Delta. Its sign is kept; couplings use |Delta|.
    F : float
        Total angular momentum of both manifolds.
    N : int
        Total atom number, even, split equally between ensembles A and B.
    delta_g, delta_e : float
        Ground and excited Zeeman shifts per unit m.
    """

    g0: float
    kappa: float
    gamma: float
    delta_cavity: float
    F: float
    N: int
    delta_g: float = 0.0
    delta_e: float = 0.0

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or isinstance(self.N, bool):
            raise DomainError(f"N must be an integer, got {self.N!r}")
        if self.N < 2 or self.N % 2:
            raise DomainError(f"N must be even and >= 2, got {self.N}")
        Ff = _half_integer(self.F)
        if Ff < Fraction(1, 2):
            raise DomainError(f"F must be >= 1/2, got {self.F}")
        for name in ("g0", "kappa", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise DomainError(f"{name} must be finite and non-negative, got {v}")
        for name in ("delta_cavity", "delta_g", "delta_e"):
            if not np.isfinite(getattr(self, name)) and name != "delta_cavity":
                raise DomainError(f"{name} must be finite")

    @property
    def far_detuned(self) -> bool:
        """Validity flag for adiabatic elimination, |Delta| > 10 g0 sqrt(N)."""
        return abs(self.delta_cavity) > 10.0 * self.g0 * math.sqrt(self.N)

    @property
    def detuning_sign(self) -> int:
        return int(np.sign(self.delta_cavity))

    @property
    def zeeman_splitting(self) -> float:
        """Effective four-level splitting delta = F (delta_e - delta_g)."""
        return float(self.F) * (self.delta_e - self.delta_g)

    @classmethod
    def with_splitting(cls, *, delta: float, **kw) -> "PhysicalParams":
        """Build params with delta_e = -delta_g = delta / (2F)."""
        F = float(kw["F"])
        de = delta / (2.0 * F)
        return cls(delta_g=-de, delta_e=de, **kw)

    @classmethod
    def from_chi(cls, *, chi: float, delta: float, N: int, F, gamma: float = 0.0,
                 kappa: float = 1.0) -> "PhysicalParams":
        """Params in reduced units: Delta = 1 and g0 chosen so that the
        derived coupling equals ``chi``; delta is split symmetrically."""
        Fv = float(_half_integer(F))
        g0 = math.sqrt(chi * (Fv + 1.0) / Fv)
        return cls.with_splitting(delta=delta, g0=g0, kappa=kappa, gamma=gamma,
                                  delta_cavity=1.0, F=Fv, N=N)


@dataclass(frozen=True)
class DerivedParams:
    """Couplings derived from :class:`PhysicalParams`.

    ``chi`` is stored positive; the sign of Delta lives on PhysicalParams.
    """

    g_F: float
    chi: float
    Gamma: float
    delta_res: float
    cooperativity: float


def derive_params(p: PhysicalParams) -> DerivedParams:
    """Compute g_F, chi, Gamma, the resonant splitting and the cooperativity."""
    if p.delta_cavity == 0:
        raise SingularDetuningError("cavity-atom detuning must be nonzero")
    F = float(p.F)
    g_F = p.g0 * math.sqrt(F / (F + 1.0))
    D = abs(p.delta_cavity)
    if math.isinf(D):
        chi, Gamma = 0.0, 0.0
    else:
        chi = g_F**2 / D
        Gamma = g_F**2 * p.kappa / D**2
    denom = p.kappa * p.gamma
    coop = 4.0 * g_F**2 / denom if denom > 0 else math.inf
    return DerivedParams(g_F=g_F, chi=chi, Gamma=Gamma,
                         delta_res=p.N * chi / 2.0, cooperativity=coop)


# ---------------------------------------------------------------------------
# Levels and coupling tensors
# ---------------------------------------------------------------------------


def n_levels(F) -> int:
    return int(round(4 * float(F) + 2))


def level_index(manifold: str, m, F) -> int:
    """Index of level (manifold, m) in the fixed ordering."""
    Ff, mf = _half_integer(F), _half_integer(m)
    if abs(mf) > Ff or (Ff - mf).denominator != 1:
        raise DomainError(f"m={m} invalid for F={F}")
    k = int(mf + Ff)
    if manifold == "g":
        return k
    if manifold == "e":
        return int(2 * Ff) + 1 + k
    raise DomainError(f"manifold must be 'g' or 'e', got {manifold!r}")


def level_labels(F) -> list:
    """List of (manifold, m) tuples in index order (m as float)."""
    Ff = _half_integer(F)
    ms = [float(-Ff + k) for k in range(int(2 * Ff) + 1)]
    return [("g", m) for m in ms] + [("e", m) for m in ms]


@dataclass(frozen=True)
class CouplingTensors:
    """Selection-rule-sparse single-atom couplings of the multilevel model.

    Attributes
    ----------
    F : float
    pi_plus : dict
        m -> C_m^0, amplitude of |e,m><g,m| in Pi^+.
    sigma_plus : dict
        (m, q) -> i C_m^q / sqrt(2), amplitude of |e,m+q><g,m| in Sigma^+.
    zeeman : ndarray
        Diagonal single-atom energies m*delta_g (ground) and m*delta_e (excited)
        in level order.
    """

    F: float
    pi_plus: Dict[float, float]
    sigma_plus: Dict[Tuple[float, int], complex]
    zeeman: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return n_levels(self.F)

    def pi_matrix(self) -> np.ndarray:
        """Dense single-atom Pi^+ (rows: final level, cols: initial level)."""
        P = np.zeros((self.dim, self.dim), dtype=complex)
        for m, c in self.pi_plus.items():
            P[level_index("e", m, self.F), level_index("g", m, self.F)] = c
        return P

    def sigma_matrix(self) -> np.ndarray:
        """Dense single-atom Sigma^+."""
        S = np.zeros((self.dim, self.dim), dtype=complex)
        for (m, q), c in self.sigma_plus.items():
            S[level_index("e", m + q, self.F), level_index("g", m, self.F)] += c
        return S


def coupling_tensors(p: PhysicalParams) -> CouplingTensors:
    Ff = _half_integer(p.F)
    ms = [-Ff + k for k in range(int(2 * Ff) + 1)]
    pi = {float(m): clebsch_gordan(Ff, m, 0) for m in ms}
    sig = {}
    for m in ms:
        for q in (-1, 1):
            if abs(m + q) <= Ff:
                sig[(float(m), q)] = 1j * clebsch_gordan(Ff, m, q) / math.sqrt(2.0)
    mf = np.array([float(m) for m in ms])
    zeeman = np.concatenate([mf * p.delta_g, mf * p.delta_e])
    zeeman.setflags(write=False)
    return CouplingTensors(F=float(Ff), pi_plus=pi, sigma_plus=sig, zeeman=zeeman)


# ---------------------------------------------------------------------------
# Hermitian flattening
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _flat_layout(d: int):
    """Index arrays describing the real flattening of a d x d Hermitian matrix."""
    rows, cols, part = [], [], []
    for a in range(d):
        for b in range(a, d):
            rows.append(a)
            cols.append(b)
            part.append(0)
            if a != b:
                rows.append(a)
                cols.append(b)
                part.append(1)
    r, c, p = (np.array(x, dtype=np.intp) for x in (rows, cols, part))
    for x in (r, c, p):
        x.setflags(write=False)
    return r, c, p


def flat_index(a: int, b: int, part: int, d: int) -> int:
    """Position of Re (part=0) or Im (part=1) of S_ab (a <= b) in the flat vector."""
    if a > b:
        raise ValueError("flat_index expects a <= b")
    if a == b and part:
        raise ValueError("diagonal entries have no imaginary component")
    r, c, p = _flat_layout(d)
    hits = np.nonzero((r == a) & (c == b) & (p == part))[0]
    return int(hits[0])


def flatten_hermitian(S: np.ndarray) -> np.ndarray:
    """Flatten Hermitian matrices (..., d, d) into real vectors (..., d*d)."""
    d = S.shape[-1]
    r, c, p = _flat_layout(d)
    vals = S[..., r, c]
    return np.where(p == 0, vals.real, vals.imag)


def unflatten_hermitian(x: np.ndarray, d: int) -> np.ndarray:
    """Inverse of :func:`flatten_hermitian`; Hermiticity is exact by construction."""
    r, c, p = _flat_layout(d)
    x = np.asarray(x, dtype=float)
    S = np.zeros(x.shape[:-1] + (d, d), dtype=complex)
    re = p == 0
    S[..., r[re], c[re]] = x[..., re]
    im = ~re
    S[..., r[im], c[im]] += 1j * x[..., im]
    iu = r < c
    S[..., c[iu], r[iu]] = np.conj(S[..., r[iu], c[iu]])
    return S


# ---------------------------------------------------------------------------
# Initial moments
# ---------------------------------------------------------------------------


def repair_psd(cov: np.ndarray, tol: float = 1e-10):
    """Return (repaired covariance, sampling factor L with L L^T = cov).

    Eigenvalues below ``-tol`` raise :class:`DomainError`; those in
    ``[-tol, 0)`` are clipped to zero.
    """
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    if w.size and w.min() < -tol:
        raise DomainError(f"covariance not positive semidefinite (min eig {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    L = V * np.sqrt(w)
    return (V * w) @ V.T, L


@dataclass(frozen=True)
class InitialMoments:
    """Gaussian moments of the flattened collective variables.

    ``mean`` is the complex d x d matrix of first moments; ``covariance`` is the
    real d^2 x d^2 covariance of the flattened variables (see module docs).
    ``sampling_factor`` satisfies L L^T = covariance.
    """

    F: float
    N: int
    mean: np.ndarray = field(repr=False)
    covariance: np.ndarray = field(repr=False)
    sampling_factor: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def mean_of(self, a: int, b: int) -> complex:
        return complex(self.mean[a, b])

    @property
    def flat_mean(self) -> np.ndarray:
        return flatten_hermitian(self.mean)


def _populations(N: int, imbalance) -> Tuple[int, int]:
    dtot, dab = imbalance
    if int(dtot) != dtot or int(dab) != dab:
        raise DomainError("imbalances must be integers")
    a2, b2 = N + dtot + dab, N + dtot - dab
    if a2 % 2 or b2 % 2:
        raise DomainError("populations (N + dN_tot +/- dN_AB)/2 must be integers")
    nA, nB = a2 // 2, b2 // 2
    if nA < 0 or nB < 0:
        raise DomainError(f"negative population: N_gA={nA}, N_eB={nB}")
    return int(nA), int(nB)


def product_state_moments(dim: int, occupations: Dict[int, int], F=None, N=None) -> InitialMoments:
    """Gaussian moments of a product state with ``occupations[k]`` atoms in level k.

    For an atom sitting in a definite level k, the Hermitian parts of the
    coherences S_kb (b != k) each carry variance 1/4 and no correlations;
    populations are sharp. Symmetrized second moments add over atoms.
    """
    mean = np.zeros((dim, dim), dtype=complex)
    r, c, _ = _flat_layout(dim)
    var = np.zeros(dim * dim)
    for k, n in occupations.items():
        if n < 0:
            raise DomainError(f"negative population {n} in level {k}")
        mean[k, k] += n
        var += 0.25 * n * (((r == k) | (c == k)) & (r != c))
    cov, L = repair_psd(np.diag(var))
    for a in (mean, cov, L):
        a.setflags(write=False)
    total = int(round(sum(occupations.values())))
    return InitialMoments(F=F, N=total if N is None else N, mean=mean, covariance=cov,
                          sampling_factor=L)


def initial_state_moments(p: PhysicalParams, imbalance=(0, 0)) -> InitialMoments:
    """Moments of the product state with N_gA atoms in |g,-F> and N_eB in |e,F>.

    ``imbalance = (dN_tot, dN_AB)`` gives N_gA = (N + dN_tot + dN_AB)/2 and
    N_eB = (N + dN_tot - dN_AB)/2.
    """
    F = float(p.F)
    nA, nB = _populations(p.N, imbalance)
    kA, kB = level_index("g", -F, F), level_index("e", F, F)
    return product_state_moments(n_levels(F), {kA: nA, kB: nB}, F=F, N=nA + nB)
