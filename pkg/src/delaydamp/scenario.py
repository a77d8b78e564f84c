"""Scenario configs: parsing, validation, runs, and file emission."""
from __future__ import annotations

import copy
import csv
import io
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

from .certify import CertificateReport, build_certificate, fit_decay_rate
from .errors import ConfigurationError, InsufficientDataError, SimulationRefused
from .modal import ModalState, ModalSystem, Trace, simulate
from .observability import estimate_boundary_alphas
from .schedule import FeedbackProfile, SwitchingSchedule, ValidationMode, build_schedule, make_profile, validate
from .wave import DampingRegion, Grid1D, WaveState, WaveSystem, boundary_system, cfl_check, internal_system, mode_sum

SCHEMA_VERSION = 1
MODELS = ("MODAL", "WAVE_INTERNAL", "WAVE_BOUNDARY")
SWEEP_PARAMS = ("tau", "T_star", "T_tilde", "M_odd_scale", "m_scale")
MAX_SWEEP_POINTS = 100_000
MAX_CERT_MODES = 64  # wave models: constants use at most this many modes unless certify.K says otherwise

_number = {"type": "number"}
_tail = {
    "oneOf": [
        _number,
        {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["constant", "geometric", "power", "mixed", "explicit"]},
                "value": _number,
                "ratio": _number,
                "exponent": _number,
                "values": {"type": "array", "items": _number},
            },
            "additionalProperties": False,
        },
    ]
}
_lengths = {"anyOf": [{"type": "array", "items": _number}, _tail]}
_matrix = {
    "oneOf": [
        {"enum": ["identity", "zero"]},
        {"type": "array", "items": {"type": "array", "items": _number}},
        {"type": "object", "required": ["diag"], "properties": {"diag": {"type": "array", "items": _number}}},
    ]
}
_poly = {"oneOf": [_number, {"type": "array", "items": {"oneOf": [_number, {"type": "array", "items": _number}]}}]}
_region = {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "model", "system", "schedule", "profile", "initial", "numerics"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "model": {"enum": list(MODELS)},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda": {
                    "oneOf": [
                        {"type": "array", "items": _number, "minItems": 1},
                        {"type": "object", "required": ["squares"], "properties": {"squares": {"type": "integer", "minimum": 1}}},
                    ]
                },
                "D1": _matrix,
                "D2": _matrix,
                "obsW": _matrix,
                "obsW2": _matrix,
                "L": {"type": "number", "exclusiveMinimum": 0},
                "J": {"type": "integer", "minimum": 3},
                "omega1": _region,
                "omega2": _region,
                "omega": _region,
            },
        },
        "schedule": {
            "type": "object",
            "required": ["T_even", "T_odd", "tau", "n_cycles"],
            "additionalProperties": False,
            "properties": {
                "T_even": _lengths,
                "T_odd": _lengths,
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "n_cycles": {"type": "integer", "minimum": 1},
            },
        },
        "profile": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "b1": _poly,
                "b2": _poly,
                "bounds": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"m": _tail, "M_even": _tail, "M_odd": _tail},
                },
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "a0": {"type": "array", "items": _number},
                "a1": {"type": "array", "items": _number},
                "u0_modes": {"type": "array", "items": _number},
                "u1_modes": {"type": "array", "items": _number},
                "u0": {"type": "array", "items": _number},
                "u1": {"type": "array", "items": _number},
                "prehistory": {"oneOf": [{"type": "null"}, {"type": "array", "items": _number}]},
            },
        },
        "numerics": {
            "type": "object",
            "required": ["dt"],
            "additionalProperties": False,
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "sample_stride": {"type": "integer", "minimum": 1},
                "t_end": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "certify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": [m.value for m in ValidationMode]},
                "T_bar": {"type": "number", "exclusiveMinimum": 0},
                "chains": {"type": "array", "items": {"enum": ["augmented", "standard", "damped", "boundary"]}},
                "c": {"type": "number", "exclusiveMinimum": 0},
                "xi": {"type": "number", "exclusiveMinimum": 0},
                "xi_rule": {"enum": ["half", "near_one"]},
                "K": {"type": "integer", "minimum": 1},
                "alphas": {
                    "oneOf": [
                        {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 3, "maxItems": 3},
                        {
                            "type": "object",
                            "required": ["estimate"],
                            "properties": {
                                "estimate": {
                                    "type": "object",
                                    "properties": {
                                        "T": _number,
                                        "samples": {"type": "integer", "minimum": 100},
                                        "seed": {"type": "integer"},
                                    },
                                }
                            },
                        },
                    ]
                },
                "tol_cycle": {"type": "number", "minimum": 0},
                "n_steps": {"type": "integer", "minimum": 2},
                "observability_times": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "sweep": {
            "type": "object",
            "required": ["grid"],
            "additionalProperties": False,
            "properties": {
                "grid": {
                    "type": "object",
                    "minProperties": 1,
                    "maxProperties": 3,
                    "propertyNames": {"enum": list(SWEEP_PARAMS)},
                    "additionalProperties": {"type": "array", "items": _number, "minItems": 1},
                },
                "simulate": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"trace": {"type": "string"}, "summary": {"type": "string"}, "report": {"type": "string"}},
        },
    },
}


def check_schema(cfg: dict) -> None:
    """Raise ConfigurationError listing every schema violation with its field path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"  at {'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors]
        raise ConfigurationError("config does not match the schema:\n" + "\n".join(lines))


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    check_schema(cfg)
    return cfg


def _matrix_of(decl, K: int, default: str) -> np.ndarray:
    decl = default if decl is None else decl
    if decl == "identity":
        return np.eye(K)
    if decl == "zero":
        return np.zeros((K, K))
    if isinstance(decl, dict):
        d = np.asarray(decl["diag"], dtype=float)
        if d.size != K:
            raise ConfigurationError(f"diagonal has {d.size} entries, expected {K}")
        return np.diag(d)
    return np.asarray(decl, dtype=float)


@dataclass
class Scenario:
    model: str
    system: ModalSystem
    schedule: SwitchingSchedule
    profile: FeedbackProfile
    initial: ModalState
    dt: float
    sample_stride: int = 1
    t_end: float | None = None
    prehistory: np.ndarray | None = None
    wave: WaveSystem | None = None
    certify: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def mode(self) -> ValidationMode | None:
        m = self.certify.get("mode")
        return None if m is None else ValidationMode(m)

    @property
    def T_bar(self) -> float | None:
        return self.certify.get("T_bar")

    def validate(self):
        if self.mode is None:
            return None
        if self.T_bar is None:
            raise ConfigurationError("certify.T_bar is required with a validation mode")
        return validate(self.schedule, self.profile, self.mode, self.T_bar)


def build_scenario(cfg: dict) -> Scenario:
    """Turn a schema-valid config into runnable objects."""
    check_schema(cfg)
    model = cfg["model"]
    sc = cfg["schedule"]
    schedule = build_schedule(sc["T_even"], sc["T_odd"], sc["tau"], sc["n_cycles"])
    pc = cfg["profile"]
    bd = pc.get("bounds", {})
    profile = make_profile(
        sc["n_cycles"], pc.get("b1", 1.0), pc.get("b2", 0.0), bd.get("m"), bd.get("M_even"), bd.get("M_odd"), schedule
    )
    syscfg = cfg["system"]
    ini = cfg["initial"]
    wave = None
    if model == "MODAL":
        lam = syscfg.get("lambda")
        if lam is None:
            raise ConfigurationError("system.lambda is required for MODAL")
        lam = (np.arange(1, lam["squares"] + 1) ** 2.0) if isinstance(lam, dict) else np.asarray(lam, dtype=float)
        K = lam.size
        mats = {k: _matrix_of(syscfg.get(k), K, "identity") for k in ("D1", "D2", "obsW")}
        W2 = None if syscfg.get("obsW2") is None else _matrix_of(syscfg["obsW2"], K, "identity")
        system = ModalSystem(lam, mats["D1"], mats["D2"], mats["obsW"], W2)
        a0 = np.zeros(K) if "a0" not in ini else np.asarray(ini["a0"], float)
        a1 = np.zeros(K) if "a1" not in ini else np.asarray(ini["a1"], float)
        if a0.shape != (K,) or a1.shape != (K,):
            raise ConfigurationError(f"initial.a0/a1 must have {K} entries")
        initial = ModalState(0.0, a0, a1)
    else:
        for key in ("L", "J"):
            if key not in syscfg:
                raise ConfigurationError(f"system.{key} is required for {model}")
        grid = Grid1D(float(syscfg["L"]), int(syscfg["J"]))
        if model == "WAVE_INTERNAL":
            w1 = syscfg.get("omega1", [0.0, grid.L])
            w2 = syscfg.get("omega2", w1)
            wave = internal_system(grid, DampingRegion.from_interval(grid, *w1), DampingRegion.from_interval(grid, *w2))
        else:
            w = syscfg.get("omega", [0.0, grid.L])
            wave = boundary_system(grid, DampingRegion.from_interval(grid, *w, n_nodes=grid.J + 1))
        if not cfl_check(grid, cfg["numerics"]["dt"]):
            from .errors import CFLError

            raise CFLError(f"dt={cfg['numerics']['dt']} exceeds the grid spacing h={grid.h}")
        system = wave.modal
        n = wave.n_nodes
        if "u0" in ini or "u1" in ini:
            u0 = np.asarray(ini.get("u0", np.zeros(n)), float)
            u1 = np.asarray(ini.get("u1", np.zeros(n)), float)
        else:
            u0 = mode_sum(wave, ini.get("u0_modes", [0.0]))
            u1 = mode_sum(wave, ini.get("u1_modes", [0.0]))
        initial = wave.to_modal(WaveState(0.0, u0, u1))
    pre = ini.get("prehistory")
    if pre is not None:
        if model != "MODAL":
            raise ConfigurationError("a nonzero prehistory is only supported for MODAL")
        pre = np.asarray(pre, dtype=float)
    num = cfg["numerics"]
    return Scenario(
        model,
        system,
        schedule,
        profile,
        initial,
        float(num["dt"]),
        int(num.get("sample_stride", 1)),
        num.get("t_end"),
        pre,
        wave,
        dict(cfg.get("certify", {})),
        dict(cfg.get("output", {})),
        cfg,
    )


def run_trace(sc: Scenario, xi: float | None = None) -> Trace:
    rep = sc.validate()
    if rep is not None and not rep.valid:
        raise SimulationRefused(rep)
    return simulate(
        sc.system,
        sc.schedule,
        sc.profile,
        sc.initial,
        sc.dt,
        sc.sample_stride,
        prehistory=sc.prehistory,
        xi=xi if xi is not None else sc.certify.get("xi"),
        t_end=sc.t_end,
    )


def trace_csv(trace: Trace, metadata: str | None = None) -> str:
    """CSV text with columns t, E_S, E, interval_index, parity, switch (17 significant digits)."""
    buf = io.StringIO()
    if metadata:
        buf.write(f"# {metadata}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "E_S", "E", "interval_index", "parity", "switch"])
    sw = np.zeros(trace.t.size, dtype=bool)
    sw[trace.switch_index] = True
    E = trace.E
    for i in range(trace.t.size):
        k = int(trace.interval[i])
        w.writerow(["%.17g" % trace.t[i], "%.17g" % trace.E_S[i], "%.17g" % E[i], k, "even" if k % 2 == 0 else "odd", int(sw[i])])
    return buf.getvalue()


def summarize(sc: Scenario, trace: Trace) -> dict:
    out = {
        "model": sc.model,
        "name": sc.config.get("name", ""),
        "xi": trace.xi,
        "E_S_initial": float(trace.E_S[0]),
        "E_S_final": float(trace.E_S[-1]),
        "E_initial": float(trace.E[0]),
        "E_final": float(trace.E[-1]),
        "switch_times": [float(x) for x in trace.switch_times],
        "switch_E_S": [float(x) for x in trace.switch_energy("E_S")],
        "switch_E": [float(x) for x in trace.switch_energy("E")],
        "samples": int(trace.t.size),
    }
    try:
        fit = fit_decay_rate(trace, which="E_S")
        out.update(mu_hat=fit.mu, gamma_hat=fit.gamma, fit_residual=fit.residual)
    except InsufficientDataError:
        out.update(mu_hat=None, gamma_hat=None, fit_residual=None)
    return out


def metadata_line(config_path) -> str:
    from . import __version__

    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return f"delaydamp {__version__} config={config_path} generated={stamp}"


def certificate_for(sc: Scenario, trace: Trace | None) -> CertificateReport:
    """Certificate with the scenario's options; constants of wave models use a modal truncation."""
    cc = sc.certify
    if cc.get("T_bar") is None:
        raise ConfigurationError("certify.T_bar is required")
    default = ("damped", "boundary") if sc.model == "WAVE_BOUNDARY" else ("augmented", "standard", "damped")
    chains = tuple(cc.get("chains", default))
    system = sc.system
    K = cc.get("K", system.K if sc.model == "MODAL" else min(system.K, MAX_CERT_MODES))
    if K < system.K:
        system = system.truncate(K)
    alphas = cc.get("alphas")
    fit_info = None
    if isinstance(alphas, dict):
        est = alphas["estimate"]
        T = float(est.get("T", float(sc.schedule.T_even.min())))
        fit_info = estimate_boundary_alphas(system, T, cc["T_bar"], int(est.get("samples", 200)), int(est.get("seed", 0)))
        alphas = fit_info.alphas if fit_info.feasible else None
    rep = build_certificate(
        system,
        sc.schedule,
        sc.profile,
        T_bar=float(cc["T_bar"]),
        trace=trace,
        chains=chains,
        c=cc.get("c"),
        xi=cc.get("xi"),
        xi_rule=cc.get("xi_rule", "half"),
        alphas=None if alphas is None else tuple(alphas),
        n_steps=int(cc.get("n_steps", 4096)),
        tol_cycle=float(cc.get("tol_cycle", 0.02)),
    )
    vr = sc.validate()
    rep.validation = None if vr is None else vr.to_dict()
    if K < sc.system.K:
        rep.notes.append(f"constants computed on the first {K} of {sc.system.K} modes")
    if sc.prehistory is not None and np.any(sc.prehistory):
        rep.notes.append("nonzero prehistory: the certified bounds assume a zero history")
    if fit_info is not None:
        rep.constants["alpha_fit"] = fit_info.to_dict()
    return rep


# ---------------------------------------------------------------- sweeps


def apply_point(cfg: dict, point: dict) -> dict:
    """Config with sweep parameters substituted."""
    cfg = copy.deepcopy(cfg)
    cfg.pop("sweep", None)
    sc, pc = cfg["schedule"], cfg["profile"]
    bd = pc.get("bounds", {})

    def scale_poly(p, s):
        return (np.asarray(p, dtype=float) * s).tolist() if not isinstance(p, (int, float)) else p * s

    def scale_tail(t, s):
        if isinstance(t, (int, float)):
            return t * s
        t = dict(t)
        if "values" in t:
            t["values"] = [v * s for v in t["values"]]
        else:
            t["value"] = t.get("value", 0.0) * s
        return t

    for key, val in point.items():
        if key == "tau":
            sc["tau"] = val
        elif key == "T_star":
            sc["T_even"] = val
        elif key == "T_tilde":
            sc["T_odd"] = val
        elif key == "M_odd_scale":
            pc["b2"] = scale_poly(pc.get("b2", 0.0), val)
            if "M_odd" in bd:
                bd["M_odd"] = scale_tail(bd["M_odd"], abs(val))
        elif key == "m_scale":
            pc["b1"] = scale_poly(pc.get("b1", 1.0), val)
            for b in ("m", "M_even"):
                if b in bd:
                    bd[b] = scale_tail(bd[b], val)
    return cfg


def sweep_points(cfg: dict) -> list[dict]:
    grid = cfg.get("sweep", {}).get("grid")
    if not grid:
        raise ConfigurationError("config has no sweep.grid")
    if len(grid) > 3:
        raise ConfigurationError("sweeps cover at most 3 parameters")
    names = list(grid)
    total = int(np.prod([len(grid[n]) for n in names]))
    if total > MAX_SWEEP_POINTS:
        raise ConfigurationError(f"sweep grid has {total} points, limit {MAX_SWEEP_POINTS}")
    return [dict(zip(names, vals)) for vals in itertools.product(*(grid[n] for n in names))]


def sweep_row(cfg: dict, point: dict) -> dict:
    """Certify one grid point; failures become rows with an error note."""
    row = dict(point)
    try:
        sc = build_scenario(apply_point(cfg, point))
        simulate_too = cfg.get("sweep", {}).get("simulate", True)
        tr = run_trace(sc) if simulate_too else None
        rep = certificate_for(sc, tr)
        row["verdict"] = rep.verdict
        row["chains"] = ";".join(f"{k}={v.stability}" for k, v in rep.chains.items())
        if tr is not None:
            e = tr.switch_energy("E_S")
            rho = [e[k + 2] / e[k] for k in range(0, len(e) - 2, 2) if e[k] > 1e-14 * max(e[0], 0)]
            row["rho_max"] = max(rho) if rho else float("nan")
            try:
                row["mu_hat"] = fit_decay_rate(tr, which="E_S").mu
            except InsufficientDataError:
                row["mu_hat"] = float("nan")
        else:
            row["rho_max"] = row["mu_hat"] = float("nan")
        row["error"] = ""
    except (ConfigurationError, SimulationRefused) as exc:
        row.update(verdict="ERROR", chains="", rho_max=float("nan"), mu_hat=float("nan"), error=str(exc).replace("\n", " "))
    return row


def _sweep_task(args):
    return sweep_row(*args)


def run_sweep(cfg: dict, workers: int = 1) -> list[dict]:
    """Rows in grid order (cross product in declared order), computed in parallel."""
    points = sweep_points(cfg)
    tasks = [(cfg, p) for p in points]
    if workers <= 1 or len(points) == 1:
        return [sweep_row(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_sweep_task, tasks))


def sweep_csv(rows: list[dict], names: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = names + ["verdict", "rho_max", "mu_hat", "chains", "error"]
    w.writerow(cols)
    for r in rows:
        w.writerow([("%.17g" % r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    return buf.getvalue()


def worker_count(flag: int | None) -> int:
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get("DELAYDAMP_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigurationError(f"DELAYDAMP_WORKERS must be an integer, got {env!r}") from exc
    return 1


# ---------------------------------------------------------------- plot scripts

_PLOT_HEAD = '''"""{title}"""
import csv
import json
import os

import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
TRACE = os.path.join(HERE, {trace!r})
SUMMARY = os.path.join(HERE, {summary!r})


def load():
    with open(TRACE) as fh:
        rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
    return rows

'''

_PLOT_BODY = {
    "energy_vs_time.py": '''
rows = load()
t = [float(r["t"]) for r in rows]
plt.plot(t, [float(r["E"]) for r in rows], label="E")
plt.plot(t, [float(r["E_S"]) for r in rows], "--", label="E_S")
plt.xlabel("t")
plt.ylabel("energy")
plt.legend()
plt.savefig(os.path.join(HERE, "energy_vs_time.png"), dpi=120)
''',
    "log_energy_fit.py": '''
import math

rows = load()
with open(SUMMARY) as fh:
    summary = json.load(fh)
mu_hat, gamma_hat = summary["mu_hat"], summary["gamma_hat"]
t = [float(r["t"]) for r in rows]
e = [float(r["E_S"]) for r in rows]
plt.semilogy(t, e, label="E_S")
if mu_hat is not None:
    t0, e0 = summary["switch_times"][0], summary["switch_E_S"][0]
    plt.semilogy(t, [gamma_hat * e0 * math.exp(-mu_hat * (x - t0)) for x in t], ":", label=f"fit, mu={mu_hat:.4g}")
plt.xlabel("t")
plt.ylabel("E_S")
plt.legend()
plt.savefig(os.path.join(HERE, "log_energy_fit.png"), dpi=120)
''',
    "cycle_ratios.py": '''
rows = [r for r in load() if r["switch"] == "1"]
e = [float(r["E_S"]) for r in rows]
ratios = [e[k + 2] / e[k] for k in range(0, len(e) - 2, 2) if e[k] > 0]
plt.bar(range(len(ratios)), ratios)
plt.axhline(1.0, color="k", lw=0.5)
plt.xlabel("cycle n")
plt.ylabel("E_S(t_2n+2) / E_S(t_2n)")
plt.savefig(os.path.join(HERE, "cycle_ratios.png"), dpi=120)
''',
}


def emit_plots(trace_path, out_dir, summary_path=None) -> list[Path]:
    """Write three standalone matplotlib scripts reading the trace (and the summary for the fit)."""
    trace_path = Path(trace_path)
    if not trace_path.exists():
        raise ConfigurationError(f"trace {trace_path} does not exist")
    lines = [ln for ln in trace_path.read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise ConfigurationError("trace is empty")
    header = lines[0].split(",")
    missing = [c for c in ("t", "E_S", "E", "interval_index", "parity", "switch") if c not in header]
    if missing:
        raise ConfigurationError(f"trace lacks columns {missing}")
    if len(lines) < 2:
        raise ConfigurationError("trace has no rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_path = Path(summary_path) if summary_path else trace_path.with_name("summary.json")
    written = []
    for name, body in _PLOT_BODY.items():
        head = _PLOT_HEAD.format(
            title=name[:-3].replace("_", " "),
            trace=os.path.relpath(trace_path.resolve(), out_dir.resolve()),
            summary=os.path.relpath(summary_path.resolve(), out_dir.resolve()),
        )
        p = out_dir / name
        p.write_text(head + body)
        written.append(p)
    return written
