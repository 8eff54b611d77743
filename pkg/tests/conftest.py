"""Shared helpers: reduced-unit parameters and brute-force oracles."""

from functools import reduce

import numpy as np
import pytest
from scipy.linalg import expm

from pairsqueeze.model import PhysicalParams


def unit_params(N, F=4.5, delta=None, chi=1.0):
    """Parameters with the derived coupling equal to ``chi``."""
    if delta is None:
        delta = N * chi / 2.0
    return PhysicalParams.from_chi(chi=chi, delta=delta, N=N, F=F)


def dense_atom_run(N, chi, delta, t):
    """Atom-by-atom evolution of the four-level model for tiny N.

    Returns (n_bar, var S_{1,-}, var S_{2,+}) built from single-atom Pauli
    matrices, independent of any collective-sector construction.
    """
    sp = np.array([[0, 0], [1, 0]], dtype=complex)  # |e><g| in the (g, e) basis
    sz = np.diag([-0.5, 0.5]).astype(complex)
    eye = np.eye(2)

    def site(op, k):
        return reduce(np.kron, [op if i == k else eye for i in range(N)])

    h = N // 2
    SAp = sum(site(sp, k) for k in range(h))
    SBp = -sum(site(sp, k) for k in range(h, N))
    SAz = sum(site(sz, k) for k in range(h))
    SBz = sum(site(sz, k) for k in range(h, N))
    Jp = SAp + SBp
    H = chi * Jp @ Jp.conj().T + delta * (SBz - SAz)
    g, e = np.array([1, 0]), np.array([0, 1])
    psi = reduce(np.kron, [g] * h + [e] * h).astype(complex)
    psi = expm(-1j * H * t) @ psi

    def ev(O):
        return np.vdot(psi, O @ psi)

    SAx, SAy = (SAp + SAp.conj().T) / 2, (SAp - SAp.conj().T) / 2j
    SBx, SBy = (SBp + SBp.conj().T) / 2, (SBp - SBp.conj().T) / 2j

    def var(O):
        return (ev(O @ O) - ev(O) ** 2).real

    nbar = (ev(SAz) + N / 2 - ev(SBz)).real
    return nbar, var(SBx - SAy), var(SBy + SAx)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
