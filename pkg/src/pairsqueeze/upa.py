"""Closed-form results under the undepleted-pump approximation (UPA).

Conventions
-----------
Modes: ``a = a_{e,A}`` and ``b = a_{g,B}`` with quadratures ``x = (c + c^dag)/sqrt2``
and ``p = (c - c^dag)/(i sqrt2)``. The two-mode quadratures are::

    X_pm = (x_b -/+ p_a)/sqrt2,    Y_pm = (p_b +/- x_a)/sqrt2

ordered as ``(X+, Y+, X-, Y-)``. With equal pumps they map onto spin
quadratures as ``S_{1,pm} = sqrt(N/2) X_pm`` and ``S_{2,pm} = sqrt(N/2) Y_pm``.

Resonant pair growth gives ``nbar = 2 sinh^2(N chi t / 2)``, so the squeezing
factor ``e^{-N chi t}`` can be written in terms of nbar alone as
``1/(nbar + 1 + sqrt(nbar (nbar + 2)))``. Every sensitivity below accepts either
parameterization through :func:`nbar_from_time` and :func:`time_from_nbar`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy import optimize

__all__ = [
    "QuadratureState",
    "SensitivityResult",
    "BECMapping",
    "OptimalTime",
    "OptimalDetuning",
    "pair_occupation_general",
    "pair_regime",
    "entangled_pair_number",
    "nbar_from_time",
    "time_from_nbar",
    "xi2_from_nbar",
    "evolve_quadratures",
    "bogoliubov_propagator",
    "real_transfer_matrix",
    "squeezing_xi2",
    "sensitivity_ideal",
    "sensitivity_beyond_upa",
    "optimal_nbar_beyond_upa",
    "sensitivity_with_decoherence",
    "optimal_time",
    "optimal_detuning_and_best_sensitivity",
    "cavity_rates",
    "best_sensitivity_at_detuning",
    "sensitivity_with_pump_fluctuations",
    "pump_fluctuation_monte_carlo",
    "bec_mapping",
    "bec_inverse",
    "QUAD_FROM_MODES",
    "DecoherenceMoments",
    "decoherence_moments",
    "sensitivity_decoherence_moments",
]

SQRT2 = math.sqrt(2.0)

# Rows express (X+, Y+, X-, Y-) in terms of (x_a, p_a, x_b, p_b).
QUAD_FROM_MODES = np.array(
    [
        [0.0, -1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0, 1.0],
        [0.0, 1.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0, 1.0],
    ]
) / SQRT2
QUAD_FROM_MODES.setflags(write=False)

# (a, a^dag, b, b^dag) = _W @ (x_a, p_a, x_b, p_b)
_W = np.array(
    [[1, 1j, 0, 0], [1, -1j, 0, 0], [0, 0, 1, 1j], [0, 0, 1, -1j]], dtype=complex
) / SQRT2
_W_INV = np.linalg.inv(_W)


# ---------------------------------------------------------------------------
# Pair growth
# ---------------------------------------------------------------------------


def _cosh_sinhc(z):
    """Return cosh(sqrt z) and sinh(sqrt z)/sqrt z for real z of either sign.

    Small |z| uses the Taylor series, which removes the cancellation at the
    exceptional point z = 0.
    """
    z = np.asarray(z, dtype=float)
    c = np.empty_like(z)
    s = np.empty_like(z)
    small = np.abs(z) < 1e-6
    zs = z[small]
    c[small] = 1 + zs / 2 + zs**2 / 24 + zs**3 / 720
    s[small] = 1 + zs / 6 + zs**2 / 120 + zs**3 / 5040
    pos = (~small) & (z > 0)
    r = np.sqrt(z[pos])
    c[pos] = np.cosh(r)
    s[pos] = np.sinh(r) / r
    neg = (~small) & (z < 0)
    r = np.sqrt(-z[neg])
    c[neg] = np.cos(r)
    s[neg] = np.sin(r) / r
    return c, s


def pair_regime(N, chi, delta) -> str:
    """'amplifying', 'non_amplifying' or 'critical' according to the sign of
    delta (N chi - delta)."""
    g = delta * (N * chi - delta)
    if g > 0:
        return "amplifying"
    if g < 0:
        return "non_amplifying"
    return "critical"


def pair_occupation_general(t, N, chi, delta):
    """Occupation of each pair mode for a general Zeeman splitting.

    ``n(t) = (N chi)^2 / (4 g) sinh^2(t sqrt g)`` with ``g = delta (N chi - delta)``.
    For g < 0 the analytic continuation gives bounded oscillations (see
    :func:`pair_regime`); at g = 0 the limit ``(N chi t)^2 / 4`` is returned.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    g = delta * (N * chi - delta)
    _, s = _cosh_sinhc(g * t**2)
    n = (N * chi) ** 2 / 4.0 * (t * s) ** 2
    return n if n.ndim else float(n)


def entangled_pair_number(t, N, chi):
    """n̄ = 2 sinh^2(N chi t / 2) at resonance."""
    return 2.0 * np.sinh(N * chi * np.asarray(t, dtype=float) / 2.0) ** 2


def nbar_from_time(t, N, chi):
    return entangled_pair_number(t, N, chi)


def time_from_nbar(n_bar, N, chi):
    """Inverse of :func:`entangled_pair_number`."""
    n_bar = np.asarray(n_bar, dtype=float)
    if np.any(n_bar < 0):
        raise ValueError("n_bar must be non-negative")
    return 2.0 * np.arcsinh(np.sqrt(n_bar / 2.0)) / (N * chi)


def xi2_from_nbar(n_bar):
    """Squeezing factor e^{-N chi t} expressed through n̄."""
    n_bar = np.asarray(n_bar, dtype=float)
    return 1.0 / (n_bar + 1.0 + np.sqrt(n_bar * (n_bar + 2.0)))


def squeezing_xi2(t, N, chi):
    """ξ² = (4/N) var(S_{1,-}) = e^{-N chi t} for resonant equal pumps."""
    return np.exp(-N * chi * np.asarray(t, dtype=float))


# ---------------------------------------------------------------------------
# Gaussian quadrature evolution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureState:
    """Mean and covariance of (X+, Y+, X-, Y-) with c-number pumps."""

    mean: np.ndarray
    covariance: np.ndarray
    pump_A: float
    pump_B: float

    @classmethod
    def vacuum(cls, N: float, imbalance=(0.0, 0.0)) -> "QuadratureState":
        dtot, dab = imbalance
        pa = (N + dtot + dab) / 2.0
        pb = (N + dtot - dab) / 2.0
        if pa < 0 or pb < 0:
            raise ValueError("negative pump population")
        return cls(np.zeros(4), 0.5 * np.eye(4), float(pa), float(pb))

    def variance(self, name: str) -> float:
        k = ("X+", "Y+", "X-", "Y-").index(name)
        return float(self.covariance[k, k])

    def mode_covariance(self) -> np.ndarray:
        """Covariance in the (x_a, p_a, x_b, p_b) basis."""
        O = QUAD_FROM_MODES
        return O.T @ self.covariance @ O

    def mode_mean(self) -> np.ndarray:
        return QUAD_FROM_MODES.T @ self.mean


def bogoliubov_propagator(t, pump_A, pump_B, chi, delta):
    """exp(-i M t) for i d/dt (a_{e,A}, a_{g,B}^dag) = M (a_{e,A}, a_{g,B}^dag).

    ``M = [[N_gA chi - delta, sqrt(N_gA N_eB) chi], [-sqrt(N_gA N_eB) chi,
    -N_eB chi + delta]]``. The traceless part K satisfies K^2 = -det(K) I,
    so ``exp(-i K t) = cosh(lt) I - i sinh(lt)/l K`` with ``l^2 = det K``.
    Broadcasts over array arguments; returns shape (..., 2, 2).
    """
    t, pa, pb = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, pump_A, pump_B)))
    c = np.sqrt(pa * pb) * chi
    m11 = pa * chi - delta
    m22 = -pb * chi + delta
    tr = 0.5 * (m11 + m22)
    k11 = 0.5 * (m11 - m22)
    det_k = -k11**2 + c**2
    ch, sh = _cosh_sinhc(det_k * t**2)
    sh = sh * t
    phase = np.exp(-1j * tr * t)
    U = np.empty(t.shape + (2, 2), dtype=complex)
    U[..., 0, 0] = phase * (ch - 1j * sh * k11)
    U[..., 0, 1] = phase * (-1j * sh * c)
    U[..., 1, 0] = phase * (1j * sh * c)
    U[..., 1, 1] = phase * (ch + 1j * sh * k11)
    return U


def real_transfer_matrix(U: np.ndarray) -> np.ndarray:
    """Real 4x4 Heisenberg map on (x_a, p_a, x_b, p_b) for a propagator U."""
    U = np.asarray(U)
    L = np.zeros(U.shape[:-2] + (4, 4), dtype=complex)
    u11, u12, u21, u22 = U[..., 0, 0], U[..., 0, 1], U[..., 1, 0], U[..., 1, 1]
    L[..., 0, 0], L[..., 0, 3] = u11, u12
    L[..., 1, 1], L[..., 1, 2] = np.conj(u11), np.conj(u12)
    L[..., 2, 1], L[..., 2, 2] = np.conj(u21), np.conj(u22)
    L[..., 3, 0], L[..., 3, 3] = u21, u22
    S = _W_INV @ L @ _W
    return S.real


def evolve_quadratures(state: QuadratureState, t: float, N=None, chi=1.0,
                       delta=None) -> QuadratureState:
    """Propagate the Gaussian state for time t with the (possibly unequal)
    pumps stored on ``state``.

    ``N`` is accepted for signature symmetry with the other backends; the
    pumps on the state define the generator. ``delta`` defaults to the
    resonant value (N_gA + N_eB) chi / 2.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if delta is None:
        n_tot = state.pump_A + state.pump_B if N is None else N
        delta = n_tot * chi / 2.0
    U = bogoliubov_propagator(t, state.pump_A, state.pump_B, chi, delta)
    S = real_transfer_matrix(U)
    O = QUAD_FROM_MODES
    T = O @ S @ O.T
    cov = T @ state.covariance @ T.T
    cov = 0.5 * (cov + cov.T)
    return QuadratureState(T @ state.mean, cov, state.pump_A, state.pump_B)


# ---------------------------------------------------------------------------
# Sensitivities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SensitivityResult:
    """(Δφ)² = noise / signal_slope², with a labeled breakdown."""

    phi: float
    variance_phi: float
    signal_slope: float
    noise: float
    components: Dict[str, float] = field(default_factory=dict)
    params_snapshot: Dict[str, object] = field(default_factory=dict)
    flags: Dict[str, bool] = field(default_factory=dict)

    @property
    def sub_sql(self) -> bool:
        N = self.params_snapshot.get("N")
        return N is not None and self.variance_phi < 1.0 / N


def _from_variance(phi, N, var, components, snapshot, flags):
    slope = (N / 2.0) * math.cos(phi)
    if abs(math.cos(phi)) < 1e-15 or not math.isfinite(var):
        flags = dict(flags, infinite_variance=True)
        return SensitivityResult(phi, math.inf, slope, math.inf, components, snapshot, flags)
    flags = dict(flags, infinite_variance=False)
    return SensitivityResult(phi, var, slope, var * slope**2, components, snapshot, flags)


def sensitivity_ideal(phi: float, n_bar: float, N: float) -> SensitivityResult:
    """Ideal UPA sensitivity, ``e^{-N chi t}/N + n̄(n̄+2) tan^2(phi) / (4 N^2)``.

    The squeezing factor is evaluated from n̄ with :func:`xi2_from_nbar`.
    """
    if n_bar < 0:
        raise ValueError("n_bar must be non-negative")
    if abs(abs(phi) - math.pi / 2) < 1e-15:
        return _from_variance(phi, N, math.inf, {}, {"N": N, "n_bar": n_bar}, {})
    squeeze = float(xi2_from_nbar(n_bar)) / N
    tan_term = n_bar * (n_bar + 2.0) * math.tan(phi) ** 2 / (4.0 * N**2)
    comps = {"ideal": squeeze, "phase_offset": tan_term}
    return _from_variance(phi, N, squeeze + tan_term, comps, {"N": N, "n_bar": n_bar, "phi": phi}, {})


def sensitivity_beyond_upa(phi: float, n_bar: float, N: float) -> SensitivityResult:
    """``1/(2 N n̄) + n̄^3/(2 N^3) + n̄(n̄+2) tan^2(phi)/(4 N^2)``.

    The expression assumes ``1 << n̄ << N``; ``flags['in_domain']`` reports
    whether ``1 <= n̄ <= N/10``. Below that range use :func:`sensitivity_ideal`.
    """
    if n_bar <= 0:
        return _from_variance(phi, N, math.inf, {}, {"N": N, "n_bar": n_bar}, {"in_domain": False})
    ideal = 1.0 / (2.0 * N * n_bar)
    depletion = n_bar**3 / (2.0 * N**3)
    tan_term = n_bar * (n_bar + 2.0) * math.tan(phi) ** 2 / (4.0 * N**2)
    comps = {"ideal": ideal, "depletion": depletion, "phase_offset": tan_term}
    flags = {"in_domain": bool(1.0 <= n_bar <= N / 10.0)}
    return _from_variance(phi, N, ideal + depletion + tan_term, comps,
                          {"N": N, "n_bar": n_bar, "phi": phi}, flags)


def optimal_nbar_beyond_upa(N: float):
    """(n̄_opt, (Δφ)²_min) = (sqrt(N)/3^{1/4}, 2/(3^{3/4} N^{3/2}))."""
    return math.sqrt(N) / 3**0.25, 2.0 / (3**0.75 * N**1.5)


def sensitivity_with_decoherence(t, N, chi, Gamma, gamma) -> SensitivityResult:
    """First-order decoherence sensitivity at phi = 0.

    ``e^{-N chi t}/N + Gamma/(2 N chi) + gamma/(N^2 chi)
    + e^{N chi t}/N (gamma/(2 N chi) - gamma t/2)^2
    + e^{N chi t}/N (Gamma/(4 chi) + gamma/(2 N chi) - gamma t/2)^2``
    """
    tau = N * chi * t
    a = gamma / (2.0 * N * chi)
    b = Gamma / (4.0 * chi)
    comps = {
        "ideal": math.exp(-tau) / N,
        "collective_decay": Gamma / (2.0 * N * chi),
        "spontaneous_decay": gamma / (N**2 * chi),
        "depletion_offset": math.exp(tau) / N * (a - gamma * t / 2.0) ** 2,
        "mean_field_offset": math.exp(tau) / N * (b + a - gamma * t / 2.0) ** 2,
    }
    flags = {"first_order_valid": bool(Gamma / chi <= 0.5 and gamma / (N * chi) <= 0.5)}
    snap = {"t": t, "N": N, "chi": chi, "Gamma": Gamma, "gamma": gamma}
    return _from_variance(0.0, N, sum(comps.values()), comps, snap, flags)


@dataclass(frozen=True)
class OptimalTime:
    t_opt: float
    method: str
    t_approx: float
    residual: float


def _optimal_time_residual(s, N, chi, Gamma, gamma):
    """(residual, discriminant) of the stationarity condition in s = gamma t."""
    b = Gamma / (4.0 * chi)
    a2 = (gamma / (N * chi)) ** 2
    disc = 2.0 * math.exp(-2.0 * N * chi * s / gamma) + a2 - b * b
    if disc < 0:
        return math.nan, disc
    return s - b - math.sqrt(disc), disc


def optimal_time(N, chi, Gamma, gamma) -> OptimalTime:
    """Minimize :func:`sensitivity_with_decoherence` over t.

    Solves ``gamma t = Gamma/(4chi) + sqrt(2 e^{-2 N chi t} + (gamma/(N chi))^2
    - (Gamma/(4 chi))^2)`` by bisection on the bracket
    ``[0, Gamma/(4 chi) + sqrt2 + gamma/(N chi)]``. If the discriminant is
    negative where the root would sit, a bounded scalar minimization is used
    instead (``method='minimize'``).
    """
    if gamma <= 0 or chi <= 0:
        raise ValueError("gamma and chi must be positive")
    b = Gamma / (4.0 * chi)
    s_hi = b + math.sqrt(2.0) + gamma / (N * chi)
    t_approx = (b + math.sqrt(2.0) * math.exp(-N * Gamma / (4.0 * gamma))) / gamma

    def f(s):
        return _optimal_time_residual(s, N, chi, Gamma, gamma)

    r0, d0 = f(0.0)
    r1, d1 = f(s_hi)
    if d0 >= 0 and d1 >= 0 and r0 < 0 < r1:
        s = optimize.bisect(lambda x: f(x)[0], 0.0, s_hi, xtol=1e-300, rtol=1e-13, maxiter=400)
        return OptimalTime(s / gamma, "implicit", t_approx, abs(f(s)[0]))
    if d0 >= 0 and r0 < 0 and d1 < 0:
        # discriminant vanishes inside the bracket; shrink to where it is valid
        lo, hi = 0.0, s_hi
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if f(mid)[1] >= 0:
                lo = mid
            else:
                hi = mid
        if f(lo)[0] > 0:
            s = optimize.bisect(lambda x: f(x)[0], 0.0, lo, xtol=1e-300, rtol=1e-13, maxiter=400)
            return OptimalTime(s / gamma, "implicit", t_approx, abs(f(s)[0]))

    def obj(tau):
        return sensitivity_with_decoherence(tau / (N * chi), N, chi, Gamma, gamma).variance_phi

    tau_hi = min(max(10.0, N * chi * s_hi / gamma), 600.0)
    res = optimize.minimize_scalar(obj, bounds=(0.0, tau_hi), method="bounded",
                                   options={"xatol": 1e-10})
    return OptimalTime(res.x / (N * chi), "minimize", t_approx, math.nan)


@dataclass(frozen=True)
class OptimalDetuning:
    """Analytic optimum over (t, Delta).

    ``Delta_opt`` is ``kappa sqrt(NC) / (2 sqrt(ln 2NC))``;
    ``Delta_opt_alt`` is the variant ``kappa sqrt(NC / (2 ln 2NC))``, larger by
    sqrt(2). Both are reported; neither is preferred.
    """

    Delta_opt: float
    Delta_opt_alt: float
    variance_min: float


def optimal_detuning_and_best_sensitivity(N, C, kappa) -> OptimalDetuning:
    NC = N * C
    if NC <= 1:
        raise ValueError("N*C must exceed 1")
    L = math.log(2.0 * NC)
    return OptimalDetuning(
        Delta_opt=kappa * math.sqrt(NC) / (2.0 * math.sqrt(L)),
        Delta_opt_alt=kappa * math.sqrt(NC / (2.0 * L)),
        variance_min=math.sqrt(2.0 * L) / (N**1.5 * math.sqrt(C)),
    )


def cavity_rates(C, kappa, Delta, g_F=1.0):
    """(chi, Gamma, gamma) for cooperativity C at cavity detuning Delta.

    ``chi = g_F^2/|Delta|``, ``Gamma = g_F^2 kappa/Delta^2`` and
    ``gamma = 4 g_F^2/(kappa C)``. Sensitivities depend only on Delta/kappa,
    C and N, so the overall scale ``g_F`` drops out.
    """
    if C <= 0 or kappa <= 0 or Delta == 0:
        raise ValueError("C, kappa and Delta must be nonzero and positive")
    g2 = g_F * g_F
    D = abs(Delta)
    return g2 / D, g2 * kappa / D**2, 4.0 * g2 / (kappa * C)


def best_sensitivity_at_detuning(N, C, kappa, Delta, backend="closed_form"):
    """Minimum over t of (Δφ)² at fixed Delta; returns (variance, t_opt).

    ``backend='closed_form'`` uses :func:`optimal_time` on the first-order
    expression; ``'moments'`` minimizes :func:`sensitivity_decoherence_moments`
    with a bounded search around the closed-form optimum.
    """
    chi, Gamma, gamma = cavity_rates(C, kappa, Delta)
    opt = optimal_time(N, chi, Gamma, gamma)
    if backend == "closed_form":
        return sensitivity_with_decoherence(opt.t_opt, N, chi, Gamma, gamma).variance_phi, opt.t_opt
    if backend != "moments":
        raise ValueError(f"unknown backend {backend!r}")
    tau0 = max(N * chi * opt.t_opt, 1.0)

    def obj(tau):
        return sensitivity_decoherence_moments(tau / (N * chi), N, chi, Gamma, gamma).variance_phi

    res = optimize.minimize_scalar(obj, bounds=(0.3 * tau0, 3.0 * tau0), method="bounded",
                                   options={"xatol": 1e-4 * tau0})
    return float(res.fun), res.x / (N * chi)


def sensitivity_with_pump_fluctuations(t, N, chi, sigma_tot, sigma_AB) -> SensitivityResult:
    """``e^{-N chi t}/N + (sigma_tot^2 + sigma_AB^2) e^{N chi t} / (4 N^3)``."""
    tau = N * chi * t
    comps = {
        "ideal": math.exp(-tau) / N,
        "pump_fluctuation": (sigma_tot**2 + sigma_AB**2) * math.exp(tau) / (4.0 * N**3),
    }
    flags = {"small_fluctuations": bool(max(sigma_tot, sigma_AB) <= 0.1 * N)}
    snap = {"t": t, "N": N, "chi": chi, "sigma_tot": sigma_tot, "sigma_AB": sigma_AB}
    return _from_variance(0.0, N, sum(comps.values()), comps, snap, flags)


def pump_fluctuation_monte_carlo(t, N, chi, sigma_tot, sigma_AB, n_samples=10_000,
                                 seed=0, delta=None):
    """Shot-averaged (Δφ)² with Gaussian pump imbalances.

    Each sample draws (δN_tot, δN_AB) as continuous Gaussians, propagates the
    vacuum with the unequal-pump generator at fixed ``delta`` (default N chi/2),
    and evaluates var(S_{1,-}) with weights sqrt(N_eB) on x_b and sqrt(N_gA) on
    p_a. The pooled variance is divided by (N/2)^2.

    Returns ``(variance_phi, standard_error)``.
    """
    rng = np.random.default_rng(seed)
    dtot = rng.normal(0.0, sigma_tot, n_samples)
    dab = rng.normal(0.0, sigma_AB, n_samples)
    pa = (N + dtot + dab) / 2.0
    pb = (N + dtot - dab) / 2.0
    if np.any(pa <= 0) or np.any(pb <= 0):
        raise ValueError("sampled a non-positive pump population")
    if delta is None:
        delta = N * chi / 2.0
    U = bogoliubov_propagator(np.full(n_samples, float(t)), pa, pb, chi, delta)
    S = real_transfer_matrix(U)
    w = np.zeros((n_samples, 4))
    w[:, 1] = np.sqrt(pa) / SQRT2
    w[:, 2] = np.sqrt(pb) / SQRT2
    v = np.einsum("ni,nij->nj", w, S)
    cond_var = 0.5 * np.sum(v * v, axis=1)
    scale = (N / 2.0) ** 2
    return float(cond_var.mean() / scale), float(cond_var.std(ddof=1) / math.sqrt(n_samples) / scale)


# ---------------------------------------------------------------------------
# Spin-1 BEC mapping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BECMapping:
    """Spin-1 condensate parameters and their cavity-model equivalents."""

    U_s: float
    q: float
    N: float
    hbar: float
    equivalent_chi: float
    equivalent_delta: float

    @property
    def is_resonant(self) -> bool:
        return math.isclose(self.q, -self.U_s, rel_tol=1e-12, abs_tol=0.0) or (
            self.q == 0 and self.U_s == 0)


def bec_mapping(U_s, q, N, hbar=1.0) -> BECMapping:
    """Map (U_s, q) to chi = 2 U_s/(N hbar), delta = q/hbar."""
    return BECMapping(U_s, q, N, hbar, 2.0 * U_s / (N * hbar), q / hbar)


def bec_inverse(chi, delta, N, hbar=1.0) -> BECMapping:
    """Map cavity parameters back to U_s = N hbar chi/2, q = hbar delta."""
    return BECMapping(N * hbar * chi / 2.0, hbar * delta, N, hbar, chi, delta)


# ---------------------------------------------------------------------------
# Decoherence moment equations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecoherenceMoments:
    """Collective moments after squeezing for time t with decay.

    ``A[a, b] = <S_a^+ S_b^->`` for a, b in (A, B); ``z_A``, ``z_B`` are the
    pump inversions. ``var_s2p`` equals var(S_{2,+}) = var(S_{1,-}) and
    ``inversion_difference`` is <S_{3,-}>, the Ramsey slope at phi = 0.
    """

    t: float
    A: np.ndarray
    z_A: float
    z_B: float
    var_s2p: float
    inversion_difference: float
    method: str


def _pump_inversions(t, N, gamma):
    return -N / 4.0, N / 4.0 * (2.0 * math.exp(-gamma * t) - 1.0)


def _coherence_generator(t, N, chi, Gamma, gamma, delta):
    """M(t) in d/dt (<S_A^->, <S_B^->) = M(t) (<S_A^->, <S_B^->)."""
    zA, zB = _pump_inversions(t, N, gamma)
    c = Gamma + 2j * chi
    return np.array(
        [[-gamma / 2 + 1j * delta + c * zA, c * zA],
         [c * zB, -gamma / 2 - 1j * delta + c * zB]], dtype=complex)


def _moments_from_propagator(t, N, U, gamma, method):
    A0 = np.diag([0.0, N / 2.0]).astype(complex)
    A = np.conj(U) @ A0 @ U.T
    zA, zB = _pump_inversions(t, N, gamma)
    var = 0.5 * (A[0, 0].real - zA) + 0.5 * (A[1, 1].real - zB) - A[0, 1].imag
    return DecoherenceMoments(t, A, zA, zB, float(var), zB - zA, method)


def decoherence_moments(t, N, chi, Gamma, gamma, delta=None, method="dyson"):
    """Second moments of the squeezed state with collective and single-atom decay.

    The coherence equation uses factorized pump inversions, with <S_A^z> = -N/4
    and a depleted <S_B^z> = (N/4)(2 e^{-gamma t} - 1). Second moments follow
    as ``A(t) = conj(U) A(0) U^T``.

    ``method='dyson'`` builds U to first order in (Gamma, gamma) around the
    decoherence-free propagator, with the interaction-picture integral done by
    adaptive quadrature. ``method='exact'`` integrates the linear equation for
    U directly and serves as an oracle.
    """
    from scipy.integrate import quad_vec, solve_ivp
    from scipy.linalg import expm

    if delta is None:
        delta = N * chi / 2.0
    if t == 0:
        return _moments_from_propagator(0.0, N, np.eye(2, dtype=complex), gamma, method)
    M0 = _coherence_generator(0.0, N, chi, 0.0, 0.0, delta)
    if method == "dyson":
        def integrand(tau):
            M1 = _coherence_generator(tau, N, chi, Gamma, gamma, delta) - M0
            return (expm(M0 * (t - tau)) @ M1 @ expm(M0 * tau)).ravel()

        corr, _ = quad_vec(integrand, 0.0, t, epsrel=1e-11, epsabs=0.0)
        U = expm(M0 * t) + corr.reshape(2, 2)
    elif method == "exact":
        def rhs(s, y):
            return (_coherence_generator(s, N, chi, Gamma, gamma, delta) @ y.reshape(2, 2)).ravel()

        sol = solve_ivp(rhs, (0.0, t), np.eye(2, dtype=complex).ravel(), method="DOP853",
                        rtol=1e-11, atol=1e-13)
        U = sol.y[:, -1].reshape(2, 2)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _moments_from_propagator(t, N, U, gamma, method)


def sensitivity_decoherence_moments(t, N, chi, Gamma, gamma, delta=None,
                                    method="dyson") -> SensitivityResult:
    """(Δφ)² at phi = 0 from :func:`decoherence_moments`.

    Uses the physical slope <S_{3,-}(t)> = (N/2) e^{-gamma t}, so the
    attenuation of the Ramsey fringe by spontaneous emission is kept.
    """
    m = decoherence_moments(t, N, chi, Gamma, gamma, delta, method)
    slope = m.inversion_difference
    snap = {"t": t, "N": N, "chi": chi, "Gamma": Gamma, "gamma": gamma, "method": method}
    return SensitivityResult(0.0, m.var_s2p / slope**2, slope, m.var_s2p,
                             {"noise": m.var_s2p}, snap, {"infinite_variance": False})
