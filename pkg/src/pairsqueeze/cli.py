"""Command-line runner for reproducible experiment sweeps.

Usage::

    pairsqueeze run config.json [--seed S] [--workers W] [--output-dir DIR]
    pairsqueeze validate config.json
    pairsqueeze list-experiments

Exit codes: 0 success, 1 configuration error, 2 runtime error (including a
partially failed sweep).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
import tempfile
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Annotated, Any, Callable, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator, model_validator

from . import __version__
from . import ed as _ed
from . import twa as _twa
from . import upa as _upa
from .model import DomainError, PhysicalParams, derive_params

SCHEMA_VERSION = 1

EXPERIMENTS = {
    "squeeze_sweep": "ED and UPA squeezing curves xi^2(t) and the minimum-squeezing table",
    "sensitivity_time": "sqrt(N) dphi versus squeezing time for several cavity detunings",
    "sensitivity_detuning": "best N^{3/4} dphi versus Delta/(sqrt(N) kappa) with the analytic optimum",
    "twa_benchmark": "TWA versus ED pair growth, leakage and occupation-difference variance",
    "upa_table": "tabulated closed-form sensitivities and optima over a parameter grid",
    "pump_fluctuation": "Monte Carlo over pump imbalances versus the closed-form penalty",
}

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ConfigError(Exception):
    """Configuration problem, reported with line-level diagnostics."""


# ---------------------------------------------------------------------------
# Configuration schema
# ---------------------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, allow_inf_nan=False)


def _axis(default):
    """A non-empty sweep axis."""
    return Field(default, min_length=1)


class PhysicalConfig(_Strict):
    """Cavity and atom parameters; ``delta`` is the four-level splitting
    (default N chi / 2) split symmetrically unless delta_g/delta_e are given."""

    g0: float = Field(1.0, gt=0)
    kappa: float = Field(1.0, gt=0)
    gamma: float = Field(0.0, ge=0)
    delta_cavity: float = 1.0
    F: float = 4.5
    N: int = Field(1000, ge=2)
    delta: Optional[float] = None
    delta_g: Optional[float] = None
    delta_e: Optional[float] = None

    @field_validator("delta_cavity")
    @classmethod
    def _nonzero(cls, v):
        if v == 0 or not math.isfinite(v):
            raise ValueError("delta_cavity must be finite and nonzero")
        return v

    @model_validator(mode="after")
    def _check(self):
        if (self.delta_g is None) != (self.delta_e is None):
            raise ValueError("delta_g and delta_e must be given together")
        if self.delta is not None and self.delta_g is not None:
            raise ValueError("give either delta or (delta_g, delta_e)")
        self.to_params()
        return self

    def to_params(self, N: Optional[int] = None) -> PhysicalParams:
        N = self.N if N is None else N
        base = dict(g0=self.g0, kappa=self.kappa, gamma=self.gamma,
                    delta_cavity=self.delta_cavity, F=self.F, N=N)
        try:
            if self.delta_g is not None:
                return PhysicalParams(delta_g=self.delta_g, delta_e=self.delta_e, **base)
            chi = derive_params(PhysicalParams(**base)).chi
            delta = N * chi / 2.0 if self.delta is None else self.delta
            return PhysicalParams.with_splitting(delta=delta, **base)
        except DomainError as exc:
            raise ValueError(str(exc)) from exc


class _Base(_Strict):
    schema_version: Literal[1] = 1
    physical: PhysicalConfig = PhysicalConfig()
    output_dir: str = "output"
    seed: int = Field(0, ge=0, lt=2**64)
    workers: int = Field(1, ge=1)
    format: Literal["csv", "json"] = "csv"


class SqueezeSweep(_Strict):
    N: List[int] = _axis([100, 1000, 10000])
    nchit_max: float = Field(8.0, gt=0)
    n_t: int = Field(161, ge=2)

    @field_validator("N")
    @classmethod
    def _even(cls, v):
        if any(n < 2 or n % 2 for n in v):
            raise ValueError("every N must be even and >= 2")
        return v


class SqueezeSweepConfig(_Base):
    experiment: Literal["squeeze_sweep"]
    sweep: SqueezeSweep = SqueezeSweep()


class TimeSweep(_Strict):
    cooperativity: float = Field(10.0, gt=0)
    delta_scaled: List[float] = _axis([0.25, 0.5, 1.0, 2.0])
    nchit_max: float = Field(12.0, gt=0)
    n_t: int = Field(121, ge=2)
    include_moments: bool = True


class SensitivityTimeConfig(_Base):
    experiment: Literal["sensitivity_time"]
    sweep: TimeSweep = TimeSweep()


class GeometricRange(_Strict):
    min: float = Field(0.05, gt=0)
    max: float = Field(5.0, gt=0)
    n: int = Field(25, ge=1)

    @model_validator(mode="after")
    def _order(self):
        if self.max < self.min:
            raise ValueError("max must be >= min")
        return self

    def values(self) -> np.ndarray:
        return np.geomspace(self.min, self.max, self.n)


class DetuningSweep(_Strict):
    N: List[int] = _axis([1000, 10000])
    cooperativity: List[float] = _axis([10.0])
    delta_scaled: GeometricRange = GeometricRange()
    include_moments: bool = True


class SensitivityDetuningConfig(_Base):
    experiment: Literal["sensitivity_detuning"]
    sweep: DetuningSweep = DetuningSweep()


class TWASettings(_Strict):
    n_traj: int = Field(10000, ge=2)
    models: List[Literal["full_multilevel", "four_level"]] = _axis(["full_multilevel", "four_level"])
    rel_tol: float = Field(1e-8, gt=0)
    abs_tol: Optional[float] = Field(None, gt=0)
    chunk_size: int = Field(256, ge=1)


class TWABenchmarkSweep(_Strict):
    nbar_max_factor: float = Field(0.76, gt=0)
    n_t: int = Field(13, ge=2)


class TWABenchmarkConfig(_Base):
    experiment: Literal["twa_benchmark"]
    sweep: TWABenchmarkSweep = TWABenchmarkSweep()
    twa: TWASettings = TWASettings()


class UPATableSweep(_Strict):
    N: List[float] = _axis([1e3, 1e4, 1e5, 1e6])
    n_bar: List[float] = _axis([1.0, 3.0, 10.0, 30.0, 100.0])
    phi: List[float] = _axis([0.0, 0.01, 0.1])
    cooperativity: List[float] = _axis([1.0, 10.0, 100.0])
    nchit: List[float] = _axis([2.0, 4.0, 6.0])
    sigma_scaled: List[float] = _axis([0.0, 1.0, 3.0])


class UPATableConfig(_Base):
    experiment: Literal["upa_table"]
    sweep: UPATableSweep = UPATableSweep()


class PumpSweep(_Strict):
    N: List[int] = _axis([10000])
    exp_nchit: List[float] = _axis([100.0])
    sigma_scaled: List[float] = _axis([1.0])
    n_samples: int = Field(10000, ge=2)

    @field_validator("exp_nchit")
    @classmethod
    def _gain(cls, v):
        if any(x < 1 for x in v):
            raise ValueError("exp_nchit must be >= 1")
        return v


class PumpFluctuationConfig(_Base):
    experiment: Literal["pump_fluctuation"]
    sweep: PumpSweep = PumpSweep()


RunConfig = Annotated[
    Union[SqueezeSweepConfig, SensitivityTimeConfig, SensitivityDetuningConfig,
          TWABenchmarkConfig, UPATableConfig, PumpFluctuationConfig],
    Field(discriminator="experiment"),
]
_ADAPTER = TypeAdapter(RunConfig)


def _key_line(text: str, loc: Tuple) -> Optional[int]:
    """Best-effort line number of the JSON key path ``loc`` in ``text``."""
    pos, line = 0, None
    for key in loc:
        if isinstance(key, int):
            continue
        hit = text.find(f'"{key}"', pos)
        if hit < 0:
            break
        pos = hit + 1
        line = text.count("\n", 0, hit) + 1
    return line


def parse_config(text: str, overrides: Optional[Dict[str, Any]] = None):
    """Parse and validate a JSON config; raises ConfigError with line numbers."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("line 1: top level must be a JSON object")
    if "experiment" in raw and raw["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"line {_key_line(text, ('experiment',))}: unknown experiment "
                          f"{raw['experiment']!r}; choose from {sorted(EXPERIMENTS)}")
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    try:
        return _ADAPTER.validate_python(raw)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            if loc and loc[0] in EXPERIMENTS:
                loc = loc[1:]
            line = _key_line(text, loc)
            where = ".".join(str(x) for x in loc) or "<root>"
            prefix = f"line {line}" if line else "line ?"
            msgs.append(f"{prefix}: {where}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from None


def config_to_json(cfg) -> str:
    """Canonical serialization of the effective config."""
    return json.dumps(_ADAPTER.dump_python(cfg, mode="json"), sort_keys=True, indent=2) + "\n"


def config_hash(cfg) -> str:
    return hashlib.sha256(config_to_json(cfg).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _json_value(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v) if math.isfinite(v) else None
    return v


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Table:
    """Column-named result table written as CSV or JSON."""

    def __init__(self, name: str, columns: List[str], description: str = ""):
        self.name = name
        self.columns = columns
        self.description = description
        self.rows: List[list] = []

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"{self.name}: expected {len(self.columns)} values")
        self.rows.append(list(values))

    def encode(self, fmt: str) -> bytes:
        if fmt == "csv":
            lines = [",".join(self.columns)]
            lines += [",".join(_fmt(v) for v in r) for r in self.rows]
            return ("\n".join(lines) + "\n").encode()
        doc = {"name": self.name, "description": self.description, "columns": self.columns,
               "rows": [[_json_value(v) for v in r] for r in self.rows]}
        return (json.dumps(doc, indent=1, allow_nan=False) + "\n").encode()


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _pool_map(fn: Callable, items: list, workers: int) -> list:
    """Apply ``fn`` to every item, capturing per-item failures, in order."""
    if workers <= 1 or len(items) <= 1:
        return [_safe_call(fn, it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_safe_call, [fn] * len(items), items))


def _safe_call(fn, item):
    try:
        return ("ok", fn(item), None)
    except Exception as exc:  # recorded per point in the manifest
        return ("error", None, f"{type(exc).__name__}: {exc}")


def _squeeze_point(args):
    N, chi, delta, nchit_max, n_t = args
    prop = _ed.SectorPropagator(N, chi, delta)
    taus = np.linspace(0.0, nchit_max, n_t)
    curve = []
    for tau in taus:
        m = prop.moments(tau / (N * chi))
        curve.append((tau / (N * chi), tau, m.xi2, float(np.exp(-tau)), m.n_bar,
                      float(_upa.nbar_from_time(tau / (N * chi), N, chi))))
    t_min, xi2_min = _ed.minimum_squeezing(N, chi, delta, nchit_max, n_t)
    return curve, (t_min, xi2_min)


def _exp_squeeze_sweep(cfg, seed):
    curves = Table("squeeze_curves", ["N", "t", "nchit", "xi2_ed", "xi2_upa", "nbar_ed", "nbar_upa"],
                   "xi^2 = (4/N) var(S_{1,-}) from ED and exp(-N chi t) from the UPA")
    table = Table("squeeze_min", ["N", "t_min", "nchit_min", "xi2_min", "xi2_min_sqrtN",
                                  "reference_0p88_over_sqrtN"],
                  "ED minimum squeezing against 0.88/sqrt(N)")
    items = []
    for N in cfg.sweep.N:
        p = cfg.physical.to_params(N)
        chi = derive_params(p).chi
        items.append((N, chi, p.zeeman_splitting, cfg.sweep.nchit_max, cfg.sweep.n_t))
    results = _pool_map(_squeeze_point, items, cfg.workers)
    status = []
    for (N, chi, *_), (st, res, err) in zip(items, results):
        status.append({"point": f"N={N}", "status": st, "error": err})
        if st != "ok":
            continue
        curve, (t_min, xi2_min) = res
        for row in curve:
            curves.add(N, *row)
        table.add(N, t_min, N * chi * t_min, xi2_min, xi2_min * math.sqrt(N), 0.88 / math.sqrt(N))
    return [curves, table], status


def _time_point(args):
    N, C, kappa, ds, nchit_max, n_t, moments = args
    Delta = ds * math.sqrt(N) * kappa
    chi, Gamma, gamma = _upa.cavity_rates(C, kappa, Delta)
    rows = []
    for tau in np.linspace(0.0, nchit_max, n_t)[1:]:
        t = tau / (N * chi)
        closed = _upa.sensitivity_with_decoherence(t, N, chi, Gamma, gamma).variance_phi
        mom = (_upa.sensitivity_decoherence_moments(t, N, chi, Gamma, gamma).variance_phi
               if moments else math.nan)
        rows.append((ds, t, tau, math.sqrt(N * closed), math.sqrt(N * mom)))
    return rows


def _exp_sensitivity_time(cfg, seed):
    s = cfg.sweep
    N, kappa = cfg.physical.N, cfg.physical.kappa
    table = Table("sensitivity_time", ["Delta_scaled", "t", "nchit", "sqrtN_dphi_closed_form",
                                       "sqrtN_dphi_moments"],
                  "sqrt(N) dphi versus time; Delta_scaled = Delta/(sqrt(N) kappa)")
    items = [(N, s.cooperativity, kappa, ds, s.nchit_max, s.n_t, s.include_moments)
             for ds in s.delta_scaled]
    status = []
    for it, (st, res, err) in zip(items, _pool_map(_time_point, items, cfg.workers)):
        status.append({"point": f"Delta_scaled={it[3]!r}", "status": st, "error": err})
        for row in res or []:
            table.add(*row)
    return [table], status


def _detuning_point(args):
    N, C, kappa, ds, moments = args
    Delta = ds * math.sqrt(N) * kappa
    v, t = _upa.best_sensitivity_at_detuning(N, C, kappa, Delta, "closed_form")
    vm = _upa.best_sensitivity_at_detuning(N, C, kappa, Delta, "moments")[0] if moments else math.nan
    return (N, C, ds, t, N**0.75 * math.sqrt(v), N**0.75 * math.sqrt(vm))


def _exp_sensitivity_detuning(cfg, seed):
    s = cfg.sweep
    kappa = cfg.physical.kappa
    table = Table("sensitivity_detuning", ["N", "C", "Delta_scaled", "t_opt", "N34_dphi_closed_form",
                                           "N34_dphi_moments"],
                  "best N^{3/4} dphi over t versus Delta/(sqrt(N) kappa)")
    markers = Table("sensitivity_detuning_markers",
                    ["N", "C", "Delta_opt_scaled", "Delta_opt_alt_scaled", "N34_dphi_analytic"],
                    "analytic optimum; the alternative detuning is larger by sqrt(2)")
    items = [(N, C, kappa, float(ds), s.include_moments)
             for N in s.N for C in s.cooperativity for ds in s.delta_scaled.values()]
    status = []
    for it, (st, res, err) in zip(items, _pool_map(_detuning_point, items, cfg.workers)):
        status.append({"point": f"N={it[0]},C={it[1]!r},Delta_scaled={it[3]!r}", "status": st,
                       "error": err})
        if st == "ok":
            table.add(*res)
    for N in s.N:
        for C in s.cooperativity:
            o = _upa.optimal_detuning_and_best_sensitivity(N, C, kappa)
            sc = math.sqrt(N) * kappa
            markers.add(N, C, o.Delta_opt / sc, o.Delta_opt_alt / sc,
                        N**0.75 * math.sqrt(o.variance_min))
    return [table, markers], status


def _exp_twa_benchmark(cfg, seed):
    p = cfg.physical.to_params()
    N = p.N
    chi = derive_params(p).chi
    t_max = float(_upa.time_from_nbar(cfg.sweep.nbar_max_factor * math.sqrt(N), N, chi))
    t_grid = tuple(np.linspace(0.0, t_max, cfg.sweep.n_t))
    ed_m = _ed.ed_time_series(N, chi, p.zeeman_splitting, t_grid)
    cols = ["t", "nchit", "nbar_ed", "xi2_ed"]
    for m in cfg.twa.models:
        cols += [f"nbar_{m}", f"nbar_{m}_se", f"leak_ratio_{m}", f"vardn_ratio_{m}",
                 f"xi2_{m}", f"xi2_{m}_se"]
    table = Table("twa_benchmark", cols, "TWA versus ED; ratios are relative to nbar")
    status, obs = [], {}
    for m in cfg.twa.models:
        tcfg = _twa.TWAConfig(n_traj=cfg.twa.n_traj, t_grid=t_grid, seed=seed, model=m,
                              rel_tol=cfg.twa.rel_tol, abs_tol=cfg.twa.abs_tol,
                              chunk_size=cfg.twa.chunk_size)
        st, res, err = _safe_call(lambda c: _twa.evolve_ensemble(p, c, workers=cfg.workers), tcfg)
        status.append({"point": f"model={m}", "status": st, "error": err,
                       "n_failed": None if res is None else res.n_failed})
        obs[m] = res
    if any(s["status"] != "ok" for s in status):
        return [], status
    with np.errstate(divide="ignore", invalid="ignore"):
        for k, t in enumerate(t_grid):
            row = [t, N * chi * t, ed_m[k].n_bar, ed_m[k].xi2]
            for m in cfg.twa.models:
                o = obs[m]
                nb = o.n_bar[k]
                row += [nb, o.n_bar_se[k], o.n_tilde[k] / nb if nb > 0 else math.nan,
                        o.var_dn[k] / nb if nb > 0 else math.nan, o.xi2[k], o.xi2_se[k]]
            table.add(*row)
    return [table], status


def _exp_upa_table(cfg, seed):
    s = cfg.sweep
    sens = Table("upa_sensitivity", ["N", "n_bar", "phi", "dphi2_ideal", "dphi2_beyond_upa",
                                     "beyond_upa_in_domain"],
                 "ideal and beyond-UPA phase variances")
    opt = Table("upa_decoherence_optimum", ["N", "C", "Delta_opt_over_kappa",
                                            "Delta_opt_alt_over_kappa", "dphi2_min"],
                "analytic optimum over time and detuning")
    pump = Table("upa_pump_fluctuation", ["N", "nchit", "sigma_scaled", "dphi2"],
                 "pump-fluctuation penalty with sigma_tot = sigma_AB = sigma_scaled sqrt(N)")
    for N in s.N:
        for nb in s.n_bar:
            for phi in s.phi:
                a = _upa.sensitivity_ideal(phi, nb, N)
                b = _upa.sensitivity_beyond_upa(phi, nb, N)
                sens.add(N, nb, phi, a.variance_phi, b.variance_phi, b.flags["in_domain"])
        for C in s.cooperativity:
            o = _upa.optimal_detuning_and_best_sensitivity(N, C, 1.0)
            opt.add(N, C, o.Delta_opt, o.Delta_opt_alt, o.variance_min)
        for tau in s.nchit:
            for sg in s.sigma_scaled:
                sig = sg * math.sqrt(N)
                pump.add(N, tau, sg, _upa.sensitivity_with_pump_fluctuations(
                    tau / N, N, 1.0, sig, sig).variance_phi)
    status = [{"point": "grid", "status": "ok", "error": None}]
    return [sens, opt, pump], status


def _pump_point(args):
    N, gain, sg, n_samples, seed, idx = args
    t = math.log(gain) / N
    sig = sg * math.sqrt(N)
    formula = _upa.sensitivity_with_pump_fluctuations(t, N, 1.0, sig, sig).variance_phi
    ss = np.random.SeedSequence(seed, spawn_key=(idx,))
    mc, se = _upa.pump_fluctuation_monte_carlo(t, N, 1.0, sig, sig, n_samples=n_samples, seed=ss)
    return (N, gain, sg, formula, mc, se, mc / formula)


def _exp_pump_fluctuation(cfg, seed):
    s = cfg.sweep
    table = Table("pump_fluctuation", ["N", "exp_nchit", "sigma_scaled", "dphi2_formula",
                                       "dphi2_monte_carlo", "monte_carlo_se", "ratio"],
                  "Gaussian pump imbalances with sigma_tot = sigma_AB = sigma_scaled sqrt(N)")
    items, k = [], 0
    for N in s.N:
        for g in s.exp_nchit:
            for sg in s.sigma_scaled:
                items.append((N, g, sg, s.n_samples, seed, k))
                k += 1
    status = []
    for it, (st, res, err) in zip(items, _pool_map(_pump_point, items, cfg.workers)):
        status.append({"point": f"N={it[0]},exp_nchit={it[1]!r},sigma_scaled={it[2]!r}",
                       "status": st, "error": err})
        if st == "ok":
            table.add(*res)
    return [table], status


_RUNNERS = {
    "squeeze_sweep": _exp_squeeze_sweep,
    "sensitivity_time": _exp_sensitivity_time,
    "sensitivity_detuning": _exp_sensitivity_detuning,
    "twa_benchmark": _exp_twa_benchmark,
    "upa_table": _exp_upa_table,
    "pump_fluctuation": _exp_pump_fluctuation,
}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def run_experiment(cfg) -> Tuple[int, Path]:
    """Run ``cfg``; writes outputs plus manifest.json and returns (exit code, dir)."""
    out = Path(cfg.output_dir)
    started = _now()
    tables, status = _RUNNERS[cfg.experiment](cfg, cfg.seed)
    files = []
    cfg_bytes = config_to_json(cfg).encode()
    _atomic_write(out / "config.json", cfg_bytes)
    files.append(("config.json", cfg_bytes))
    for t in tables:
        name = f"{t.name}.{cfg.format}"
        data = t.encode(cfg.format)
        _atomic_write(out / name, data)
        files.append((name, data))
    ok = all(s["status"] == "ok" for s in status)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "config_hash": config_hash(cfg),
        "code_version": __version__,
        "started": started,
        "finished": _now(),
        "status": "ok" if ok else "partial_failure",
        "points": status,
        "files": [{"path": n, "sha256": hashlib.sha256(d).hexdigest(), "bytes": len(d)}
                  for n, d in files],
        "columns": {f"{t.name}.{cfg.format}": {"columns": t.columns, "description": t.description}
                    for t in tables},
    }
    _atomic_write(out / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode())
    return (EXIT_OK if ok else EXIT_RUNTIME), out


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pairsqueeze", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--output-dir")
    v = sub.add_parser("validate", help="validate a config without running it")
    v.add_argument("config")
    sub.add_parser("list-experiments", help="list available experiments")
    return ap


def _load(path: str, overrides=None):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, overrides)


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "list-experiments":
        for name, desc in EXPERIMENTS.items():
            print(f"{name:22s} {desc}")
        return EXIT_OK
    overrides = {}
    if args.command == "run":
        overrides = {"seed": args.seed, "workers": args.workers, "output_dir": args.output_dir}
    try:
        cfg = _load(args.config, overrides)
    except ConfigError as exc:
        print(f"{args.config}: configuration error\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.experiment}, hash {config_hash(cfg)[:12]})")
        return EXIT_OK
    try:
        code, out = run_experiment(cfg)
    except OSError as exc:
        print(f"I/O error at {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME
    msg = "completed" if code == EXIT_OK else "completed with failed points"
    print(f"{cfg.experiment}: {msg}; outputs in {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
