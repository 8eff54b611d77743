"""Truncated-Wigner simulation of the multilevel and four-level spin models.

Each trajectory is a Hermitian matrix of classical collective variables
``S_ab`` (the Weyl symbols of ``sum_i |a><b|_i``). For a Hamiltonian of the form

    H = sum_X c_X X X^dag + sum_a h_a S_aa,      X = sum_{mn} X_mn S_mn

the symmetric decoupling gives the classical function

    H_cl(S) = sum_X c_X [ x conj(x) + s([X, X^dag]) / 2 ] + sum_a h_a S_aa

with ``s(Y) = sum Y_mn S_mn``, and the equations of motion

    dS/dt = i [G^T, S],    G = dH_cl/dS = sum_X c_X (conj(x) X + x X^dag + [X, X^dag]/2) + diag(h)

which follow from ``[S_ab, S_cd] = delta_bc S_ad - delta_da S_cb``. The
flow conserves the trace and the Hermiticity of S exactly.

The full model uses ``X in {Pi^+, Sigma^+}`` with ``c_X = chi (F+1)/F`` on the
4F+2 levels. The four-level model works on (g,-F), (g,F), (e,-F), (e,F) with
``X = S_A^+ + S_B^+`` and ``S_B^+ = -|e,F><g,F|``.

Spin conventions used by the estimators::

    S_A^x = Re S_{eA,gA},   S_A^y = Im S_{eA,gA}
    S_B^x = -Re S_{eB,gB},  S_B^y = -Im S_{eB,gB}
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from .model import (
    InitialMoments,
    PhysicalParams,
    _populations,
    coupling_tensors,
    derive_params,
    flatten_hermitian,
    level_index,
    n_levels,
    product_state_moments,
    unflatten_hermitian,
)

__all__ = [
    "TWAConfig",
    "TWASystem",
    "TWAObservables",
    "TWARunError",
    "build_system",
    "initial_moments_for",
    "sample_initial_ensemble",
    "eom_rhs",
    "evolve_ensemble",
    "measure_squeezing",
    "jackknife_variance",
    "dump_ensemble",
]

MODELS = ("full_multilevel", "four_level")


class TWARunError(RuntimeError):
    """Too many trajectories failed to integrate."""


@dataclass(frozen=True)
class TWAConfig:
    """Trajectory-ensemble settings.

    ``abs_tol`` defaults to ``1e-10 * N`` when left as None. ``chunk_size``
    fixes how trajectories are grouped for integration; results depend on it
    but never on the number of workers.
    """

    n_traj: int
    t_grid: Tuple[float, ...]
    seed: int = 0
    model: str = "full_multilevel"
    rel_tol: float = 1e-8
    abs_tol: Optional[float] = None
    chunk_size: int = 256
    integrator: str = "DOP853"
    max_fail_fraction: float = 0.01

    def __post_init__(self):
        if self.n_traj < 2:
            raise ValueError("n_traj must be >= 2")
        t = np.asarray(self.t_grid, dtype=float)
        if t.ndim != 1 or t.size == 0 or t[0] != 0 or np.any(np.diff(t) <= 0):
            raise ValueError("t_grid must be strictly increasing and start at 0")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        object.__setattr__(self, "t_grid", tuple(float(x) for x in t))


# ---------------------------------------------------------------------------
# System definition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TWASystem:
    """Couplings of one model, in the form consumed by the EOM.

    ``ops`` holds the single-atom matrices X, ``coefs`` their prefactors and
    ``const`` the trajectory-independent part of G (Zeeman plus commutator
    terms). ``idx`` maps role names (gA, eA, gB, eB) to level indices.
    """

    model: str
    N: int
    F: float
    dim: int
    ops: Tuple[np.ndarray, ...]
    coefs: Tuple[float, ...]
    zeeman: np.ndarray
    const: np.ndarray
    idx: dict

    def gradient(self, S: np.ndarray) -> np.ndarray:
        """G = dH_cl/dS for a batch S of shape (..., d, d)."""
        G = np.broadcast_to(self.const, S.shape).copy()
        for c, X in zip(self.coefs, self.ops):
            x = np.einsum("mn,...mn->...", X, S)
            G += c * (np.conj(x)[..., None, None] * X + x[..., None, None] * X.conj().T)
        return G

    def hamiltonian(self, S: np.ndarray) -> np.ndarray:
        """Classical energy H_cl(S)."""
        H = np.einsum("a,...aa->...", self.zeeman, S).real
        for c, X in zip(self.coefs, self.ops):
            x = np.einsum("mn,...mn->...", X, S)
            K = X @ X.conj().T - X.conj().T @ X
            H = H + c * ((x * np.conj(x)).real + 0.5 * np.einsum("mn,...mn->...", K, S).real)
        return H

    def rhs(self, S: np.ndarray) -> np.ndarray:
        """dS/dt = i (G^T S - S G^T) for Hermitian S, batched over leading axes."""
        GT = np.swapaxes(self.gradient(S), -1, -2)
        Z = GT @ S
        return 1j * (Z - np.conj(np.swapaxes(Z, -1, -2)))


def _four_level_indices():
    return {"gA": 0, "gB": 1, "eA": 2, "eB": 3}


def build_system(p: PhysicalParams, model: str = "full_multilevel") -> TWASystem:
    dp = derive_params(p)
    F = float(p.F)
    if model == "full_multilevel":
        tens = coupling_tensors(p)
        d = tens.dim
        X_ops = (tens.pi_matrix(), tens.sigma_matrix())
        coef = dp.chi * (F + 1.0) / F
        coefs = (coef, coef)
        zeeman = np.asarray(tens.zeeman, dtype=float)
        idx = {"gA": level_index("g", -F, F), "gB": level_index("g", F, F),
               "eA": level_index("e", -F, F), "eB": level_index("e", F, F)}
    elif model == "four_level":
        d = 4
        idx = _four_level_indices()
        J = np.zeros((4, 4), dtype=complex)
        J[idx["eA"], idx["gA"]] = 1.0
        J[idx["eB"], idx["gB"]] = -1.0
        X_ops, coefs = (J,), (dp.chi,)
        # restriction of the multilevel Zeeman diagonal to the four levels
        zeeman = np.zeros(4)
        zeeman[idx["gA"]] = -F * p.delta_g
        zeeman[idx["gB"]] = F * p.delta_g
        zeeman[idx["eA"]] = -F * p.delta_e
        zeeman[idx["eB"]] = F * p.delta_e
    else:
        raise ValueError(f"model must be one of {MODELS}")
    const = np.diag(zeeman).astype(complex)
    for c, X in zip(coefs, X_ops):
        const += 0.5 * c * (X @ X.conj().T - X.conj().T @ X)
    for a in (zeeman, const, *X_ops):
        a.setflags(write=False)
    return TWASystem(model, p.N, F, d, tuple(X_ops), tuple(coefs), zeeman, const, idx)


def initial_moments_for(p: PhysicalParams, system: TWASystem, imbalance=(0, 0)) -> InitialMoments:
    """Pump-state moments in the level basis of ``system``."""
    nA, nB = _populations(p.N, imbalance)
    return product_state_moments(system.dim, {system.idx["gA"]: nA, system.idx["eB"]: nB},
                                 F=system.F, N=nA + nB)


def eom_rhs(svars: np.ndarray, system: TWASystem) -> np.ndarray:
    """Time derivative of one trajectory (or a batch) of Hermitian variables."""
    return system.rhs(np.asarray(svars, dtype=complex))


# ---------------------------------------------------------------------------
# Packed real state
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _masks(d):
    upper = np.triu(np.ones((d, d)), 0)
    strict = np.triu(np.ones((d, d)), 1)
    diag = np.eye(d)
    return upper, strict, diag


def _pack(S):
    """(B, d, d) Hermitian -> (B, d*d) real: Re on and above, Im of the upper
    entries stored at the mirrored lower positions."""
    d = S.shape[-1]
    upper, strict, _ = _masks(d)
    R = S.real * upper + np.swapaxes(S.imag * strict, -1, -2)
    return R.reshape(S.shape[0], d * d)


def _unpack(y, d):
    _, strict, diag = _masks(d)
    R = y.reshape(-1, d, d)
    RT = np.swapaxes(R, -1, -2)
    U = R * strict
    re = U + np.swapaxes(U, -1, -2) + R * diag
    L = RT * strict  # Im S_ab for a < b, at (a, b)
    im = L - np.swapaxes(L, -1, -2)
    return re + 1j * im


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def sample_initial_ensemble(moments: InitialMoments, cfg: TWAConfig, indices=None) -> np.ndarray:
    """Draw Gaussian initial conditions; returns Hermitian matrices (n, d, d).

    Trajectory k uses its own generator seeded by (cfg.seed, k), so any subset
    of indices reproduces the same draws.
    """
    if indices is None:
        indices = range(cfg.n_traj)
    L = moments.sampling_factor
    mu = moments.flat_mean
    n = len(indices)
    z = np.empty((n, L.shape[1]))
    for row, k in enumerate(indices):
        z[row] = _trajectory_rng(cfg.seed, int(k)).standard_normal(L.shape[1])
    x = mu + z @ L.T
    return unflatten_hermitian(x, moments.dim)


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------


def _integrate(system: TWASystem, S0: np.ndarray, t_grid, rtol, atol, method):
    d = system.dim
    B = S0.shape[0]

    def f(_, y):
        S = _unpack(y, d)
        return _pack(system.rhs(S)).ravel()

    sol = solve_ivp(f, (t_grid[0], t_grid[-1]), _pack(S0).ravel(), method=method,
                    t_eval=t_grid, rtol=rtol, atol=atol)
    if not sol.success or sol.y.shape[1] != len(t_grid) or not np.all(np.isfinite(sol.y)):
        return None
    y = sol.y.T.reshape(len(t_grid), B, d * d)
    return _unpack(y.reshape(-1, d * d), d).reshape(len(t_grid), B, d, d).swapaxes(0, 1)


def _raw_observables(system: TWASystem, traj: np.ndarray) -> np.ndarray:
    """Per-trajectory quantities (B, n_t, d + 4): populations then
    (Re, Im) S_{eA,gA} and (Re, Im) S_{eB,gB}."""
    i = system.idx
    pops = np.real(np.diagonal(traj, axis1=-2, axis2=-1))
    cA = traj[..., i["eA"], i["gA"]]
    cB = traj[..., i["eB"], i["gB"]]
    return np.concatenate(
        [pops, np.stack([cA.real, cA.imag, cB.real, cB.imag], axis=-1)], axis=-1)


def _run_chunk(args):
    p, cfg, system, moments, start, stop, keep_states = args
    atol = cfg.abs_tol if cfg.abs_tol is not None else 1e-10 * p.N
    t_grid = np.asarray(cfg.t_grid)
    idx = list(range(start, stop))
    S0 = sample_initial_ensemble(moments, cfg, idx)
    traj = _integrate(system, S0, t_grid, cfg.rel_tol, atol, cfg.integrator)
    failed = np.zeros(len(idx), dtype=bool)
    if traj is None:
        # isolate the failing trajectories
        traj = np.full((len(idx), len(t_grid), system.dim, system.dim), np.nan, dtype=complex)
        for k in range(len(idx)):
            one = _integrate(system, S0[k:k + 1], t_grid, cfg.rel_tol, atol, cfg.integrator)
            if one is None:
                failed[k] = True
            else:
                traj[k] = one[0]
    raw = _raw_observables(system, traj)
    states = flatten_hermitian(traj) if keep_states else None
    return start, raw, failed, states


@dataclass(frozen=True)
class TWAObservables:
    """Ensemble estimates at each time of ``t``.

    Variances are unbiased (ddof = 1); ``*_se`` are jackknife standard errors.
    """

    t: np.ndarray
    occupations: np.ndarray
    occupations_se: np.ndarray
    n_bar: np.ndarray
    n_bar_se: np.ndarray
    n_tilde: np.ndarray
    n_tilde_se: np.ndarray
    var_s1m: np.ndarray
    var_s1m_se: np.ndarray
    var_s2p: np.ndarray
    var_s2p_se: np.ndarray
    var_dn: np.ndarray
    var_dn_se: np.ndarray
    n_used: int
    n_failed: int
    N: int
    states: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def xi2(self) -> np.ndarray:
        return 4.0 * self.var_s1m / self.N

    @property
    def xi2_se(self) -> np.ndarray:
        return 4.0 * self.var_s1m_se / self.N


def jackknife_variance(x: np.ndarray, axis: int = 0):
    """Unbiased sample variance and its leave-one-out jackknife error."""
    x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
    n = x.shape[0]
    if n < 3:
        raise ValueError("jackknife needs at least 3 samples")
    s1 = x.sum(0)
    s2 = (x * x).sum(0)
    var = (s2 - s1 * s1 / n) / (n - 1)
    s1_loo = s1 - x
    s2_loo = s2 - x * x
    var_loo = (s2_loo - s1_loo * s1_loo / (n - 1)) / (n - 2)
    se = np.sqrt((n - 1) / n * ((var_loo - var_loo.mean(0)) ** 2).sum(0))
    return var, se


def _mean_se(x):
    return x.mean(0), x.std(0, ddof=1) / math.sqrt(x.shape[0])


def _spin_samples(system, raw):
    d = system.dim
    ax, ay = raw[..., d], raw[..., d + 1]
    bx, by = -raw[..., d + 2], -raw[..., d + 3]
    return ax, ay, bx, by


def _observables_from_raw(system: TWASystem, t, raw, n_failed, states):
    d = system.dim
    i = system.idx
    pops = raw[..., :d]
    occ, occ_se = _mean_se(pops)
    nbar_s = pops[..., i["eA"]] + pops[..., i["gB"]]
    pump = {i["gA"], i["eB"], i["eA"], i["gB"]}
    others = [k for k in range(d) if k not in pump]
    ntil_s = pops[..., others].sum(-1) if others else np.zeros_like(nbar_s)
    dn_s = pops[..., i["eA"]] - pops[..., i["gB"]]
    ax, ay, bx, by = _spin_samples(system, raw)
    v1, v1e = jackknife_variance(bx - ay)
    v2, v2e = jackknife_variance(by + ax)
    vd, vde = jackknife_variance(dn_s)
    nb, nbe = _mean_se(nbar_s)
    nt, nte = _mean_se(ntil_s)
    return TWAObservables(np.asarray(t), occ, occ_se, nb, nbe, nt, nte, v1, v1e, v2, v2e,
                          vd, vde, raw.shape[0], int(n_failed), system.N, states)


def evolve_ensemble(p: PhysicalParams, cfg: TWAConfig, workers: int = 1,
                    keep_states: bool = False, imbalance=(0, 0)) -> TWAObservables:
    """Sample, integrate and reduce a trajectory ensemble.

    Trajectories are integrated in fixed chunks of ``cfg.chunk_size``; chunks
    are distributed over ``workers`` processes and reassembled in index order,
    so outputs are bit-identical for any worker count.
    """
    system = build_system(p, cfg.model)
    moments = initial_moments_for(p, system, imbalance)
    bounds = [(s, min(s + cfg.chunk_size, cfg.n_traj))
              for s in range(0, cfg.n_traj, cfg.chunk_size)]
    jobs = [(p, cfg, system, moments, a, b, keep_states) for a, b in bounds]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(jobs) == 1:
        results = [_run_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_chunk, jobs))
    results.sort(key=lambda r: r[0])
    raw = np.concatenate([r[1] for r in results], axis=0)
    failed = np.concatenate([r[2] for r in results])
    n_failed = int(failed.sum())
    if n_failed > cfg.max_fail_fraction * cfg.n_traj:
        raise TWARunError(f"{n_failed} of {cfg.n_traj} trajectories failed to integrate")
    states = None
    if keep_states:
        states = np.concatenate([r[3] for r in results], axis=0)[~failed]
    return _observables_from_raw(system, cfg.t_grid, raw[~failed], n_failed, states)


def measure_squeezing(snapshot: np.ndarray, system: TWASystem):
    """(ξ², var(S_{1,-}), var(S_{2,+})) from Hermitian snapshots (n, d, d)."""
    snapshot = np.asarray(snapshot)
    if snapshot.shape[0] < 2:
        raise ValueError("need at least two trajectories")
    i = system.idx
    cA = snapshot[:, i["eA"], i["gA"]]
    cB = snapshot[:, i["eB"], i["gB"]]
    ax, ay, bx, by = cA.real, cA.imag, -cB.real, -cB.imag
    v1 = float(np.var(bx - ay, ddof=1))
    v2 = float(np.var(by + ax, ddof=1))
    return 4.0 * v1 / system.N, v1, v2


def dump_ensemble(path, t_grid, states: np.ndarray) -> None:
    """Write flattened trajectories as CSV: trajectory, t, then d^2 columns in
    the shared flattening order."""
    states = np.asarray(states)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory", "t"] + [f"v{k}" for k in range(states.shape[-1])])
        for k in range(states.shape[0]):
            for it, t in enumerate(t_grid):
                w.writerow([k, repr(float(t))] + [repr(float(v)) for v in states[k, it]])
