"""Ramsey protocols on the squeezed two-ensemble state.

Every backend reduces the squeezed state to something a pair of independent
spin rotations can act on:

* ``gaussian_upa``: the 6-component spin mean and covariance of the
  linearized state (undepleted pump means, pair-number fluctuations for the
  inversions);
* ``ed``: either the exact state in the widened product basis (N <= 2000) or the
  exact sector moments;
* ``twa``: the classical spin vectors of every trajectory;
* ``decoherence_moments``: the moment-equation solution (phi = 0 only).

Spin components are ordered (A_x, A_y, A_z, B_x, B_y, B_z). A pulse
``exp(-i theta G)`` with ``G = a.S_A + b.S_B`` rotates the A and B Bloch vectors
by theta about a and b (right-handed).

Differential protocol: pulse ``S_{2,+}``, imprint about ``S_{3,-}``, pulse
``S_{1,+}``, read ``S_B^z - S_A^z``. Sum protocol: pulse ``S_{2,-}``, imprint
about ``S_{3,+}``, pulse ``S_{1,-}``, read ``S_B^z + S_A^z``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np

from . import ed as _ed
from . import twa as _twa
from . import upa as _upa
from .model import PhysicalParams

__all__ = [
    "FRAME",
    "SpinQuadratureFrame",
    "RamseyConfig",
    "SpinMoments",
    "ProductState",
    "SampleState",
    "DegenerateProtocolError",
    "rotation_matrix",
    "apply_pulse",
    "imprint_phase",
    "readout",
    "prepare_state",
    "run_protocol",
    "compare_protocols",
    "protocol_trace",
    "write_trace",
]

PROTOCOLS = ("differential", "sum")
BACKENDS = ("gaussian_upa", "twa", "ed", "decoherence_moments")


class DegenerateProtocolError(ValueError):
    """The signal slope vanishes, so the phase cannot be estimated."""


# ---------------------------------------------------------------------------
# Frame
# ---------------------------------------------------------------------------


def _form(ax=0, ay=0, az=0, bx=0, by=0, bz=0):
    v = np.array([ax, ay, az, bx, by, bz], dtype=float)
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class SpinQuadratureFrame:
    """Linear forms of the two-sphere spin quadratures over (A_xyz, B_xyz)."""

    forms: Dict[str, np.ndarray] = field(default_factory=lambda: {
        "S1+": _form(ay=1, bx=1),
        "S2+": _form(ax=1, by=1),
        "S1-": _form(ay=-1, bx=1),
        "S2-": _form(ax=-1, by=1),
        "S3-": _form(az=-1, bz=1),
        "S3+": _form(az=1, bz=1),
    })

    def __getitem__(self, name: str) -> np.ndarray:
        return self.forms[name]

    @staticmethod
    def commutator(u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Coefficients w of [u.S, v.S] = i w.S for linear forms on two spins."""
        return np.concatenate([np.cross(u[:3], v[:3]), np.cross(u[3:], v[3:])])

    def closes(self, names: Tuple[str, str, str]) -> bool:
        """True if the three forms satisfy [S_i, S_j] = i eps_ijk S_k."""
        f = [self[n] for n in names]
        for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            if not np.allclose(self.commutator(f[i], f[j]), f[k]):
                return False
        return True


FRAME = SpinQuadratureFrame()

_PULSE_GENERATORS = ("S2+", "S1+", "S2-", "S1-")
_IMPRINT_AXES = ("S3-", "S3+")


def _axis_rotation(n, theta) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        return np.eye(3)
    n = n / norm
    K = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
    return np.eye(3) + math.sin(theta) * K + (1 - math.cos(theta)) * (K @ K)


def rotation_matrix(generator: str, angle: float) -> np.ndarray:
    """6x6 map of Bloch vectors under ``exp(-i angle G)``."""
    form = FRAME[generator]
    R = np.zeros((6, 6))
    R[:3, :3] = _axis_rotation(form[:3], angle * np.linalg.norm(form[:3]))
    R[3:, 3:] = _axis_rotation(form[3:], angle * np.linalg.norm(form[3:]))
    return R


def _rotation_derivative(generator: str, angle: float) -> np.ndarray:
    form = FRAME[generator]
    K = np.zeros((6, 6))
    for s in (slice(0, 3), slice(3, 6)):
        n = form[s]
        K[s, s] = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
    return K @ rotation_matrix(generator, angle)


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpinMoments:
    """Mean and symmetrized covariance of the six spin components."""

    mean: np.ndarray
    cov: np.ndarray
    N: float

    def rotate(self, R: np.ndarray) -> "SpinMoments":
        return SpinMoments(R @ self.mean, R @ self.cov @ R.T, self.N)

    def expectation(self, form):
        return float(form @ self.mean), float(form @ self.cov @ form)


@dataclass(frozen=True)
class SampleState:
    """Classical spin vectors (n_traj, 6) of a trajectory ensemble."""

    samples: np.ndarray
    N: float

    def rotate(self, R: np.ndarray) -> "SampleState":
        return SampleState(self.samples @ R.T, self.N)

    def expectation(self, form):
        x = self.samples @ form
        return float(x.mean()), float(np.var(x, ddof=1))

    @property
    def moments(self) -> SpinMoments:
        return SpinMoments(self.samples.mean(0), np.cov(self.samples.T, ddof=1), self.N)


def _spin_matrices(j: float):
    m = np.arange(-j, j + 1)
    jp = np.zeros((m.size, m.size))
    jp[np.arange(1, m.size), np.arange(m.size - 1)] = np.sqrt(j * (j + 1) - m[:-1] * (m[:-1] + 1))
    jx = 0.5 * (jp + jp.T)
    jy = -0.5j * (jp - jp.T)
    return jx, jy, np.diag(m)


@dataclass(frozen=True)
class ProductState:
    """Two spin-j state as a (2j+1, 2j+1) amplitude matrix Psi[m_A, m_B]."""

    psi: np.ndarray
    j: float
    N: float

    def _unitary(self, n, theta):
        jx, jy, jz = _spin_matrices(self.j)
        G = n[0] * jx + n[1] * jy + n[2] * jz
        w, V = np.linalg.eigh(G)
        return (V * np.exp(-1j * theta * w)) @ V.conj().T

    def apply(self, generator: str, angle: float) -> "ProductState":
        form = FRAME[generator]
        UA = self._unitary(form[:3], angle)
        UB = self._unitary(form[3:], angle)
        return ProductState(UA @ self.psi @ UB.T, self.j, self.N)

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.psi) ** 2)))

    def z_moments(self, form):
        """Mean and variance of ``form . S`` for a form with only z entries."""
        if np.any(form[[0, 1, 3, 4]]):
            raise ValueError("direct readout supports inversion observables only")
        m = np.arange(-self.j, self.j + 1)
        vals = form[2] * m[:, None] + form[5] * m[None, :]
        p = np.abs(self.psi) ** 2
        p = p / p.sum()
        mean = float(np.sum(p * vals))
        return mean, float(np.sum(p * vals**2) - mean**2)

    expectation = z_moments

    @property
    def moments(self) -> SpinMoments:
        """Full 6-component moments (used for traces)."""
        jx, jy, jz = _spin_matrices(self.j)
        ops = []
        I = np.eye(jx.shape[0])
        for o in (jx, jy, jz):
            ops.append((o, I))
        for o in (jx, jy, jz):
            ops.append((I, o))
        psi = self.psi / self.norm

        def apply(op, x):
            return op[0] @ x @ op[1].T

        vecs = [apply(o, psi) for o in ops]
        mean = np.array([np.vdot(psi, v).real for v in vecs])
        cov = np.empty((6, 6))
        for a in range(6):
            for b in range(6):
                cov[a, b] = np.vdot(vecs[a], vecs[b]).real - mean[a] * mean[b]
        return SpinMoments(mean, cov, self.N)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def apply_pulse(state, generator: str, angle: float):
    """Apply ``exp(-i angle G)`` for a transverse frame combination G."""
    if generator not in _PULSE_GENERATORS:
        raise ValueError(f"pulse generator must be one of {_PULSE_GENERATORS}")
    if isinstance(state, ProductState):
        return state.apply(generator, angle)
    if isinstance(state, (SpinMoments, SampleState)):
        return state.rotate(rotation_matrix(generator, angle))
    raise TypeError(f"unsupported state type {type(state).__name__}")


def imprint_phase(state, axis: str, phi: float):
    """Rotate by phi about ``S_{3,-}`` (differential) or ``S_{3,+}`` (sum)."""
    if axis not in _IMPRINT_AXES:
        raise ValueError(f"imprint axis must be one of {_IMPRINT_AXES}")
    if isinstance(state, ProductState):
        form = FRAME[axis]
        m = np.arange(-state.j, state.j + 1)
        phase = np.exp(-1j * phi * (form[2] * m[:, None] + form[5] * m[None, :]))
        return ProductState(state.psi * phase, state.j, state.N)
    if isinstance(state, (SpinMoments, SampleState)):
        return state.rotate(rotation_matrix(axis, phi))
    raise TypeError(f"unsupported state type {type(state).__name__}")


_SEQUENCES = {
    "differential": ("S2+", "S3-", "S1+", "S3-"),
    "sum": ("S2-", "S3+", "S1-", "S3+"),
}


def readout(state, protocol: str) -> Tuple[float, float]:
    """(signal, noise): mean and variance of S_B^z -/+ S_A^z."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}")
    return state.expectation(FRAME[_SEQUENCES[protocol][3]])


def _sequence(state, protocol, phi):
    p1, ax, p2, _ = _SEQUENCES[protocol]
    s1 = apply_pulse(state, p1, math.pi / 2)
    s2 = imprint_phase(s1, ax, phi)
    s3 = apply_pulse(s2, p2, math.pi / 2)
    return s1, s2, s3


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RamseyConfig:
    """Protocol settings.

    ``delta`` defaults to the resonant N chi / 2. ``decoherence`` is an
    optional (Gamma, gamma) pair and is only used by the
    ``decoherence_moments`` backend. ``ed_readout`` selects the widened
    product basis ('widened'), the moment shortcut ('moments') or the
    widened path whenever N <= 2000 ('auto').
    """

    protocol: str
    squeeze_time: float
    phi: float
    backend: str
    N: int
    chi: float = 1.0
    delta: Optional[float] = None
    decoherence: Optional[Tuple[float, float]] = None
    F: float = 4.5
    twa_model: str = "four_level"
    n_traj: int = 2000
    seed: int = 0
    workers: int = 1
    ed_readout: str = "auto"
    fd_step: float = 1e-4

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if not abs(self.phi) < math.pi / 2:
            raise ValueError("phi must lie in (-pi/2, pi/2)")
        if self.squeeze_time < 0:
            raise ValueError("squeeze_time must be non-negative")
        if self.ed_readout not in ("auto", "widened", "moments"):
            raise ValueError("ed_readout must be auto, widened or moments")
        if self.backend == "decoherence_moments" and self.phi != 0:
            raise ValueError("decoherence_moments backend supports phi = 0 only")

    @property
    def resolved_delta(self) -> float:
        return self.N * self.chi / 2.0 if self.delta is None else float(self.delta)


def _gaussian_moments(cfg: RamseyConfig) -> SpinMoments:
    """Spin moments of the linearized squeezed state.

    With S_A^+ = sqrt(N_A) a^dag and S_B^+ = sqrt(N_B) b the transverse spins
    are S_A^x = sqrt(N_A) x_a/sqrt2, S_A^y = -sqrt(N_A) p_a/sqrt2,
    S_B^x = sqrt(N_B) x_b/sqrt2, S_B^y = sqrt(N_B) p_b/sqrt2. Inversion means
    keep their undepleted values -N_A/2 and N_B/2; their fluctuations are the
    pair-number fluctuations of the Gaussian state.
    """
    st = _upa.QuadratureState.vacuum(cfg.N)
    st = _upa.evolve_quadratures(st, cfg.squeeze_time, cfg.N, cfg.chi, cfg.resolved_delta)
    if np.any(st.mean != 0):
        raise ValueError("gaussian backend expects a zero-mean state")
    V = st.mode_covariance()
    nA, nB = st.pump_A, st.pump_B
    T = np.zeros((4, 4))  # (Ax, Ay, Bx, By) from (x_a, p_a, x_b, p_b)
    T[0, 0] = math.sqrt(nA / 2)
    T[1, 1] = -math.sqrt(nA / 2)
    T[2, 2] = math.sqrt(nB / 2)
    T[3, 3] = math.sqrt(nB / 2)
    Vt = T @ V @ T.T
    # quantum second moments <r_k r_l> and mode moments of (a, a^dag, b, b^dag)
    omega = np.kron(np.eye(2), np.array([[0, 1], [-1, 0]]))
    G = V + 0.5j * omega
    C = _upa._W @ G @ _upa._W.T
    a, ad, b, bd = 0, 1, 2, 3
    cov_n = np.empty((2, 2))
    pairs = ((a, ad), (b, bd))
    for i, (ci, cdi) in enumerate(pairs):
        for k, (ck, cdk) in enumerate(pairs):
            cov_n[i, k] = (C[cdi, cdk] * C[ci, ck] + C[cdi, ck] * C[ci, cdk]).real
    # S_A^z = n_a - N_A/2, S_B^z = N_B/2 - n_b
    sgn = np.array([1.0, -1.0])
    cov_z = cov_n * np.outer(sgn, sgn)
    mean = np.array([0.0, 0.0, -nA / 2, 0.0, 0.0, nB / 2])
    cov = np.zeros((6, 6))
    tr = [0, 1, 3, 4]
    cov[np.ix_(tr, tr)] = Vt
    cov[np.ix_([2, 5], [2, 5])] = cov_z
    return SpinMoments(mean, cov, float(cfg.N))


def _ed_state(cfg: RamseyConfig):
    basis = _ed.SectorBasis(cfg.N)
    psi = _ed.evolve_collective(_ed.CollectiveState.initial(basis), [cfg.squeeze_time],
                                cfg.chi, cfg.resolved_delta, method="eigh")[0]
    widened = cfg.ed_readout == "widened" or (cfg.ed_readout == "auto" and cfg.N <= 2000)
    if not widened:
        m = _ed.sector_moments(psi, basis)
        return SpinMoments(m.spin_mean, m.spin_cov, float(cfg.N))
    j = basis.j
    d = basis.dim
    full = np.zeros((d, d), dtype=complex)
    n = np.arange(d)
    full[n, d - 1 - n] = psi  # m_A = -j + n, m_B = j - n
    return ProductState(full, j, float(cfg.N))


def _twa_state(cfg: RamseyConfig) -> SampleState:
    p = PhysicalParams.from_chi(chi=cfg.chi, delta=cfg.resolved_delta, N=cfg.N, F=cfg.F)
    t_grid = (0.0, float(cfg.squeeze_time)) if cfg.squeeze_time > 0 else (0.0, 1e-300)
    tcfg = _twa.TWAConfig(n_traj=cfg.n_traj, t_grid=t_grid, seed=cfg.seed, model=cfg.twa_model)
    obs = _twa.evolve_ensemble(p, tcfg, workers=cfg.workers, keep_states=True)
    system = _twa.build_system(p, cfg.twa_model)
    from .model import unflatten_hermitian

    S = unflatten_hermitian(obs.states[:, -1], system.dim)
    return SampleState(_twa_spins(S, system), float(cfg.N))


def _twa_spins(S: np.ndarray, system) -> np.ndarray:
    i = system.idx
    cA = S[:, i["eA"], i["gA"]]
    cB = S[:, i["eB"], i["gB"]]
    pop = np.real(np.diagonal(S, axis1=-2, axis2=-1))
    Az = 0.5 * (pop[:, i["eA"]] - pop[:, i["gA"]])
    Bz = 0.5 * (pop[:, i["eB"]] - pop[:, i["gB"]])
    return np.stack([cA.real, cA.imag, Az, -cB.real, -cB.imag, Bz], axis=1)


def prepare_state(cfg: RamseyConfig):
    """Squeezed state of ``cfg.backend`` after ``cfg.squeeze_time``."""
    if cfg.backend == "gaussian_upa":
        return _gaussian_moments(cfg)
    if cfg.backend == "ed":
        return _ed_state(cfg)
    if cfg.backend == "twa":
        return _twa_state(cfg)
    raise ValueError(f"backend {cfg.backend!r} has no explicit state")


def _analytic_slope(state: SpinMoments, protocol: str, phi: float) -> float:
    p1, ax, p2, ro = _SEQUENCES[protocol]
    R1 = rotation_matrix(p1, math.pi / 2)
    dR = _rotation_derivative(ax, phi)
    R2 = rotation_matrix(p2, math.pi / 2)
    return float(FRAME[ro] @ R2 @ dR @ R1 @ state.mean)


def run_protocol(cfg: RamseyConfig, state=None) -> _upa.SensitivityResult:
    """Squeeze, pulse, imprint, pulse and read out; returns (Δφ)².

    The slope is analytic on the Gaussian and decoherence backends and a
    central finite difference of step ``cfg.fd_step`` on TWA and ED. A
    prepared ``state`` may be passed to reuse one squeezing run across phases.
    """
    snap = {"N": cfg.N, "chi": cfg.chi, "delta": cfg.resolved_delta, "t": cfg.squeeze_time,
            "backend": cfg.backend, "protocol": cfg.protocol}
    if cfg.backend == "decoherence_moments":
        Gamma, gamma = cfg.decoherence or (0.0, 0.0)
        res = _upa.sensitivity_decoherence_moments(cfg.squeeze_time, cfg.N, cfg.chi, Gamma,
                                                   gamma, cfg.resolved_delta)
        slope = res.signal_slope
        _check_slope(slope, cfg.N)
        return _upa.SensitivityResult(0.0, res.variance_phi, slope, res.noise, res.components,
                                      dict(snap, Gamma=Gamma, gamma=gamma), res.flags)
    if state is None:
        state = prepare_state(cfg)
    _, _, final = _sequence(state, cfg.protocol, cfg.phi)
    signal, noise = readout(final, cfg.protocol)
    if cfg.backend == "gaussian_upa":
        slope = _analytic_slope(state, cfg.protocol, cfg.phi)
        method = "analytic"
    else:
        h = cfg.fd_step
        sp, _ = readout(_sequence(state, cfg.protocol, cfg.phi + h)[2], cfg.protocol)
        sm, _ = readout(_sequence(state, cfg.protocol, cfg.phi - h)[2], cfg.protocol)
        slope = (sp - sm) / (2 * h)
        method = "finite_difference"
    _check_slope(slope, cfg.N)
    comps = {"signal": signal, "noise": noise}
    flags = {"slope_method": method, "infinite_variance": False}
    return _upa.SensitivityResult(cfg.phi, noise / slope**2, slope, noise, comps, snap, flags)


def _check_slope(slope, N):
    if not abs(slope) > 1e-12 * N:
        raise DegenerateProtocolError(f"signal slope {slope:.3e} is degenerate")


def compare_protocols(cfg: RamseyConfig, rtol: float = 1e-8, state=None):
    """Run both protocols on one squeezed state and check they agree.

    Returns (differential, sum). Raises AssertionError if the sensitivities
    differ by more than ``rtol`` relative.
    """
    if state is None and cfg.backend != "decoherence_moments":
        state = prepare_state(cfg)
    d = run_protocol(replace(cfg, protocol="differential"), state)
    s = run_protocol(replace(cfg, protocol="sum"), state)
    if not math.isclose(d.variance_phi, s.variance_phi, rel_tol=rtol):
        raise AssertionError(
            f"protocols disagree: {d.variance_phi:.6e} vs {s.variance_phi:.6e}")
    return d, s


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


def _stage_moments(state) -> SpinMoments:
    return state if isinstance(state, SpinMoments) else state.moments


def protocol_trace(cfg: RamseyConfig, state=None):
    """Bloch-vector means and quadrature variances at every protocol stage.

    Returns a list of dict rows with keys ``stage``, the six spin means and the
    variances of the frame combinations.
    """
    if state is None:
        state = prepare_state(cfg)
    stages = ("squeezed", "pulse1", "imprint", "pulse2")
    rows = []
    for name, st in zip(stages, (state, *_sequence(state, cfg.protocol, cfg.phi))):
        m = _stage_moments(st)
        row = {"stage": name}
        for lab, v in zip(_ed.SPIN_LABELS, m.mean):
            row[lab] = float(v)
        for k, form in FRAME.forms.items():
            row[f"mean_{k}"] = float(form @ m.mean)
            row[f"var_{k}"] = float(form @ m.cov @ form)
        rows.append(row)
    return rows


def write_trace(path, rows) -> None:
    """Write :func:`protocol_trace` rows as CSV with 17 significant digits."""
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([r[k] if isinstance(r[k], str) else f"{r[k]:.17g}" for k in keys])
