import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sympy import Rational
from sympy.physics.quantum.cg import CG

from pairsqueeze.model import (
    DomainError,
    PhysicalParams,
    SingularDetuningError,
    clebsch_gordan,
    coupling_tensors,
    derive_params,
    export_cg_table,
    flat_index,
    flatten_hermitian,
    initial_state_moments,
    level_index,
    n_levels,
    product_state_moments,
    repair_psd,
    unflatten_hermitian,
)

from conftest import unit_params

HALF_INTEGER_F = [Fraction(k, 2) for k in range(1, 12)]


def sympy_cg(F, m, q):
    return float(CG(Rational(F), Rational(m), 1, q, Rational(F), Rational(m) + q).doit())


@pytest.mark.parametrize("F", [Fraction(1, 2), Fraction(3, 2), Fraction(9, 2)])
def test_clebsch_gordan_matches_sympy(F):
    for k in range(int(2 * F) + 1):
        m = -F + k
        for q in (-1, 0, 1):
            if abs(m + q) > F:
                continue
            assert clebsch_gordan(F, m, q) == pytest.approx(sympy_cg(F, m, q), abs=1e-14)


def test_clebsch_gordan_stretched_values():
    assert clebsch_gordan(4.5, 4.5, 0) == pytest.approx(math.sqrt(9 / 11), abs=1e-15)
    assert clebsch_gordan(4.5, 4.5, -1) ** 2 == pytest.approx(2 / 11, abs=1e-15)
    assert clebsch_gordan(1, 0, 0) == 0.0


@pytest.mark.parametrize("F", HALF_INTEGER_F)
def test_stretched_pi_dominates(F):
    # |C_F^0|^2 = F/(F+1) against |C_F^-1|^2 = 1/(F+1): strict only for F > 1
    pi2, sig2 = clebsch_gordan(F, F, 0) ** 2, clebsch_gordan(F, F, -1) ** 2
    assert pi2 == pytest.approx(F / (F + 1), abs=1e-14)
    assert sig2 == pytest.approx(1 / (F + 1), abs=1e-14)
    if F > 1:
        assert pi2 > sig2
    for k in range(int(2 * F) + 1):
        m = -F + k
        assert clebsch_gordan(F, -m, 0) == pytest.approx(-clebsch_gordan(F, m, 0), abs=1e-15)


def test_derive_params_scale_consistency():
    p1 = PhysicalParams(g0=1.0, kappa=2.0, gamma=0.3, delta_cavity=50.0, F=4.5, N=100)
    p2 = PhysicalParams(g0=3.0, kappa=2.0, gamma=0.3, delta_cavity=50.0, F=4.5, N=100)
    d1, d2 = derive_params(p1), derive_params(p2)
    for name in ("chi", "Gamma", "cooperativity"):
        assert getattr(d2, name) == pytest.approx(9 * getattr(d1, name), rel=1e-14)
    assert d1.g_F == pytest.approx(0.9045340337332909, abs=1e-15)


def test_far_detuned_flag():
    base = dict(g0=1.0, kappa=1.0, gamma=0.0, F=4.5, N=100)
    assert PhysicalParams(delta_cavity=101.0, **base).far_detuned
    assert not PhysicalParams(delta_cavity=99.0, **base).far_detuned


def test_full_model_small_n_covariance_psd():
    m = initial_state_moments(unit_params(4))
    assert np.linalg.eigvalsh(m.covariance).min() >= -1e-12
    assert m.mean.trace().real == 4
    assert np.allclose(m.mean, m.mean.conj().T)


def test_clebsch_gordan_frozen_value():
    # frozen from the sympy oracle
    assert clebsch_gordan(4.5, 3.5, 1) == pytest.approx(-0.4264014327112209, abs=1e-15)


@pytest.mark.parametrize("F", HALF_INTEGER_F)
def test_clebsch_gordan_column_normalization(F):
    # sum over m, q of |<F m; 1 q | F m+q>|^2 = (2F+1) by orthogonality of the 3j symbols
    total = 0.0
    for k in range(int(2 * F) + 1):
        m = -F + k
        for q in (-1, 0, 1):
            if abs(m + q) <= F:
                total += clebsch_gordan(F, m, q) ** 2
    assert total == pytest.approx(2 * F + 1, rel=1e-13)


def test_clebsch_gordan_pi_values():
    F = 4.5
    for k in range(10):
        m = -F + k
        assert clebsch_gordan(F, m, 0) == pytest.approx(m / math.sqrt(F * (F + 1)), abs=1e-14)


def test_clebsch_gordan_rejects_bad_input():
    with pytest.raises(DomainError):
        clebsch_gordan(1.5, 2.5, 0)
    with pytest.raises(DomainError):
        clebsch_gordan(1.5, 1.5, 1)
    with pytest.raises(DomainError):
        clebsch_gordan(1.5, 0.5, 2)


def test_export_cg_table(tmp_path):
    path = tmp_path / "cg.csv"
    export_cg_table(1.5, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].split(",")[:4] == ["F", "m", "q", "value"]
    assert len(lines) > 1


def test_params_validation():
    base = dict(g0=1.0, kappa=1.0, gamma=0.0, delta_cavity=1.0, F=4.5)
    for N in (0, 3, -2):
        with pytest.raises(DomainError):
            PhysicalParams(N=N, **base)
    with pytest.raises(DomainError):
        PhysicalParams(N=10, **dict(base, F=0.0))
    with pytest.raises(DomainError):
        PhysicalParams(N=10, **dict(base, F=0.75))
    assert PhysicalParams(N=10, **dict(base, F=2.0)).F == 2.0
    with pytest.raises(DomainError):
        PhysicalParams(N=10, **dict(base, kappa=-1.0))


def test_derive_params():
    p = PhysicalParams(g0=2.0, kappa=3.0, gamma=0.5, delta_cavity=-10.0, F=4.5, N=100)
    d = derive_params(p)
    gF2 = 4.0 * 4.5 / 5.5
    assert d.g_F == pytest.approx(math.sqrt(gF2))
    assert d.chi == pytest.approx(gF2 / 10.0)
    assert d.Gamma == pytest.approx(gF2 * 3.0 / 100.0)
    assert d.cooperativity == pytest.approx(4 * gF2 / 1.5)
    assert d.delta_res == pytest.approx(100 * d.chi / 2)
    assert p.detuning_sign == -1


def test_derive_params_limits():
    with pytest.raises(SingularDetuningError):
        derive_params(PhysicalParams(g0=1.0, kappa=1.0, gamma=0.0, delta_cavity=0.0, F=0.5, N=2))
    d = derive_params(PhysicalParams(g0=1.0, kappa=1.0, gamma=0.0, delta_cavity=math.inf, F=0.5, N=2))
    assert d.chi == 0 and d.Gamma == 0
    assert derive_params(unit_params(10)).cooperativity == math.inf


def test_from_chi_reproduces_coupling():
    p = unit_params(100, chi=0.37, F=1.5)
    assert derive_params(p).chi == pytest.approx(0.37, rel=1e-14)
    assert p.zeeman_splitting == pytest.approx(100 * 0.37 / 2)


def test_coupling_tensors_structure():
    p = unit_params(10, F=1.5)
    t = coupling_tensors(p)
    P, S = t.pi_matrix(), t.sigma_matrix()
    assert P.shape == (8, 8)
    # raising operators only connect g to e
    g = [level_index("g", m, 1.5) for m in (-1.5, -0.5, 0.5, 1.5)]
    assert np.all(P[:, 4:] == 0) and np.all(S[:, 4:] == 0)
    assert np.all(P[g, :] == 0) and np.all(S[g, :] == 0)
    # Pi^+ is diagonal in m; Sigma^+ changes m by one unit
    assert P[level_index("e", 0.5, 1.5), level_index("g", 0.5, 1.5)] != 0
    assert S[level_index("e", 0.5, 1.5), level_index("g", 0.5, 1.5)] == 0
    assert np.allclose(t.zeeman[:4], np.array([-1.5, -0.5, 0.5, 1.5]) * p.delta_g)


@given(st.integers(1, 7), st.integers(0, 2**31 - 1))
def test_flatten_roundtrip(d, seed):
    r = np.random.default_rng(seed)
    A = r.normal(size=(3, d, d)) + 1j * r.normal(size=(3, d, d))
    S = A + np.conj(np.swapaxes(A, -1, -2))
    x = flatten_hermitian(S)
    assert x.shape == (3, d * d)
    assert np.allclose(unflatten_hermitian(x, d), S)


def test_flat_index_layout():
    d = 3
    S = np.zeros((d, d), dtype=complex)
    S[0, 2] = 2 + 5j
    S[2, 0] = 2 - 5j
    x = flatten_hermitian(S)
    assert x[flat_index(0, 2, 0, d)] == 2 and x[flat_index(0, 2, 1, d)] == 5
    with pytest.raises(ValueError):
        flat_index(1, 1, 1, d)


def test_repair_psd():
    cov = np.diag([1.0, -1e-12, 2.0])
    fixed, L = repair_psd(cov)
    assert np.allclose(L @ L.T, fixed)
    assert np.linalg.eigvalsh(fixed).min() >= 0
    with pytest.raises(DomainError):
        repair_psd(np.diag([1.0, -1e-3]))


def _brute_force_atom_moments(d, k):
    """Symmetrized moments of the Hermitian parts of |a><b| for one atom in |k>."""
    psi = np.zeros(d)
    psi[k] = 1
    ops = []
    for a in range(d):
        for b in range(a, d):
            E = np.zeros((d, d), dtype=complex)
            E[a, b] = 1
            ops.append(0.5 * (E + E.conj().T))
            if a != b:
                ops.append((E - E.conj().T) / 2j)
    mean = np.array([psi @ O @ psi for O in ops]).real
    cov = np.array([[0.5 * (psi @ (O1 @ O2 + O2 @ O1) @ psi).real for O2 in ops] for O1 in ops])
    return mean, cov - np.outer(mean, mean)


def test_initial_moments_match_brute_force_oracle():
    p = unit_params(10, F=0.5)
    m = initial_state_moments(p, imbalance=(2, 0))
    d = n_levels(0.5)
    kA, kB = level_index("g", -0.5, 0.5), level_index("e", 0.5, 0.5)
    mean_A, cov_A = _brute_force_atom_moments(d, kA)
    mean_B, cov_B = _brute_force_atom_moments(d, kB)
    nA, nB = 6, 6
    assert np.allclose(m.flat_mean, nA * mean_A + nB * mean_B)
    assert np.allclose(m.covariance, nA * cov_A + nB * cov_B)


def test_initial_moments_imbalance():
    p = unit_params(100)
    m = initial_state_moments(p, imbalance=(4, 2))
    kA, kB = level_index("g", -4.5, 4.5), level_index("e", 4.5, 4.5)
    assert m.mean_of(kA, kA) == 53 and m.mean_of(kB, kB) == 51
    assert m.N == 104
    with pytest.raises(DomainError):
        initial_state_moments(p, imbalance=(1, 0))
    with pytest.raises(DomainError):
        initial_state_moments(p, imbalance=(0, 200))


def test_product_state_moments_psd():
    m = product_state_moments(4, {0: 3, 3: 5})
    assert np.allclose(m.sampling_factor @ m.sampling_factor.T, m.covariance)
    assert m.N == 8
