"""Command-line orchestration: config parsing, dispatch, reproducible CSV/JSON outputs."""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from ._parallel import WORKERS_ENV
from .errors import ClusterLCLTError, ConfigError

ARTIFACT = "clusterlclt"

DEFAULT_TOLERANCES = {
    "gaussian_cf": 1e-8,
    "gaussian_lclt": 1e-6,
    "lclt_final": 0.05,
    "oracle": 1e-6,
    "expansion": 1e-3,
    "markov": 1e-12,
    "band_slack": 1e-12,
    "compare_rtol": 1e-12,
    "compare_atol": 0.0,
}

COMMANDS = ("lclt", "gibbs", "expand", "bounds", "ursell", "verify-all")


class OperationError(Exception):
    def __init__(self, operation: str, exc: BaseException):
        super().__init__(f"{operation}: {type(exc).__name__}: {exc}")
        self.operation = operation


def _op(name: str, fn: Callable, *args, **kwargs):
    """Call a module operation, tagging any failure with its name."""
    try:
        return fn(*args, **kwargs)
    except (ClusterLCLTError, ValueError, ArithmeticError, RuntimeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise OperationError(name, exc) from exc


# ---------------------------------------------------------------------------
# Output formatting
# ---------------------------------------------------------------------------


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def _jsonable(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dump_json(obj: Any) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


class Outputs:
    """Files are assembled in memory and only written once the whole command succeeded."""

    def __init__(self, digest: str, seed: int, tolerances: dict):
        self.digest = digest
        self.seed = seed
        self.tolerances = tolerances
        self.files: dict[str, str] = {}

    def header(self) -> dict:
        return {"config_digest": self.digest, "seed": self.seed, "tolerances": self.tolerances}

    def csv(self, name: str, columns: list[str], rows) -> None:
        lines = [f"# config_digest={self.digest}", f"# seed={self.seed}",
                 "# tolerances=" + json.dumps(self.tolerances, sort_keys=True), ",".join(columns)]
        for r in rows:
            lines.append(",".join(fmt(v) for v in r))
        self.files[name] = "\n".join(lines) + "\n"

    def json(self, name: str, payload: dict) -> None:
        self.files[name] = dump_json({**self.header(), **payload})

    def commit(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in sorted(self.files):
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.")
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(self.files[name])
            os.replace(tmp, out_dir / name)

    def digests(self) -> dict:
        return {n: hashlib.sha256(t.encode()).hexdigest() for n, t in sorted(self.files.items())}


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def bundled_config_names() -> list[str]:
    root = resources.files(__package__) / "configs"
    return sorted(p.name for p in root.iterdir() if p.name.endswith((".json", ".txt")))


def resolve_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    root = resources.files(__package__) / "configs"
    for cand in (name, name + ".json"):
        q = root / cand
        if q.is_file():
            return Path(str(q))
    raise ConfigError(f"config file '{name}' not found (bundled: {', '.join(bundled_config_names())})")


def load_config(name: str) -> dict:
    path = resolve_path(name)
    text = path.read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    cfg.setdefault("_source", str(path))
    return cfg


def _merge(base: dict, override: dict | None) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def model_block(cfg: dict) -> dict:
    if "model" in cfg:
        if not isinstance(cfg["model"], dict):
            raise ConfigError("key 'model' must be an object")
        return cfg["model"]
    return {k: v for k, v in cfg.items() if k not in ("command", "output", "seed", "caps", "tolerances", "_source")}


def build_model(block: dict):
    from .model import model_from_config

    return model_from_config(block)


def digest_of(cfg: dict) -> str:
    from .model import config_digest

    return config_digest({k: v for k, v in cfg.items() if k != "_source"})


def _tolerances(cfg: dict) -> dict:
    tol = dict(DEFAULT_TOLERANCES)
    extra = cfg.get("tolerances", {})
    if not isinstance(extra, dict):
        raise ConfigError("key 'tolerances' must be an object")
    for k, v in extra.items():
        if not isinstance(v, (int, float)) or v < 0:
            raise ConfigError(f"key 'tolerances.{k}' must be a nonnegative number")
        tol[k] = float(v)
    return tol


def _validate_caps(cfg: dict) -> dict:
    caps = cfg.get("caps", {})
    if not isinstance(caps, dict):
        raise ConfigError("key 'caps' must be an object")
    for k, v in caps.items():
        if not isinstance(v, (int, float)) or v <= 0:
            raise ConfigError(f"key 'caps.{k}' must be positive")
    return caps


def _grid(spec, default: tuple) -> np.ndarray:
    if spec is None:
        lo, hi, n = default
    elif isinstance(spec, str):
        try:
            lo, hi, n = (float(v) for v in spec.split(","))
        except ValueError:
            raise ConfigError(f"grid '{spec}' must read lo,hi,points") from None
    else:
        try:
            lo, hi, n = spec
        except (TypeError, ValueError):
            raise ConfigError(f"grid {spec!r} must be [lo, hi, points]") from None
    n = int(n)
    if n < 1 or not hi >= lo:
        raise ConfigError(f"grid {spec!r} needs hi >= lo and at least one point")
    return np.linspace(float(lo), float(hi), n)


def _floats(spec: str, count: int, flag: str) -> list[float]:
    try:
        vals = [float(v) for v in spec.split(",")]
    except ValueError:
        raise ConfigError(f"{flag} expects {count} comma-separated numbers") from None
    if len(vals) != count:
        raise ConfigError(f"{flag} expects {count} comma-separated numbers")
    return vals


# ---------------------------------------------------------------------------
# Assertions shared by verify-all and the single commands
# ---------------------------------------------------------------------------


def assertion(name: str, value, tolerance, passed: bool, **details) -> dict:
    return {"name": name, "value": value, "tolerance": tolerance, "passed": bool(passed), **details}


def check_gaussian_cf(model, params, tol, out: Outputs) -> list[dict]:
    from .gibbs import char_fn

    t = _grid(params.get("t_grid"), (-10.0, 10.0, 2001))
    tr = _op("char_fn", char_fn, model, t)
    err = float(np.max(np.abs(tr.values - np.exp(-0.5 * t**2))))
    limit = params.get("tol", tol["gaussian_cf"])
    return [assertion("gaussian_cf_deviation", err, limit, err <= limit)]


def check_lclt(model, params, tol, out: Outputs) -> list[dict]:
    from .gibbs import density

    x = _grid(params.get("x_grid"), (-4.0, 4.0, 161))
    rep = _op("density", density, model, x, float(params.get("t_max", 40.0)), float(params.get("t_step", 0.01)))
    out.csv("density.csv", ["x", "p", "gauss", "abs_err"],
            zip(x, rep.p_values, rep.gauss, np.abs(rep.p_values - rep.gauss)))
    limit = params.get("tol", tol["gaussian_lclt"])
    return [assertion("lclt_sup_error", rep.sup_error, limit, rep.sup_error <= limit,
                      truncation_warning=rep.truncation_warning)]


def check_lclt_trend(model, params, tol, out: Outputs) -> list[dict]:
    from .gibbs import density
    from .model import build_volume
    from .oracles import uniform_sum_density

    ks = [int(k) for k in params.get("ks", [2, 4, 8])]
    x = _grid(params.get("x_grid"), (-4.0, 4.0, 161))
    t_max, t_step = float(params.get("t_max", 40.0)), float(params.get("t_step", 0.01))
    errs, rows, oracle_gaps = [], [], []
    m = model.site_measure
    oracle_ok = model.couplings.is_zero and m.bounded and not m.is_discrete and m.description.get("kind") == "uniform"
    for k in ks:
        mk = model.with_volume(build_volume(model.volume.dimension, k, model.volume.r0))
        rep = _op("density", density, mk, x, t_max, t_step)
        errs.append(rep.sup_error)
        gap = math.nan
        if oracle_ok and model.volume.dimension == 1:
            exact = uniform_sum_density(x, len(mk.volume.sites), m.R)
            gap = float(np.max(np.abs(rep.p_values - exact)))
            oracle_gaps.append(gap)
        rows.append((k, len(mk.volume.sites), rep.sup_error, gap))
    out.csv("lclt_trend.csv", ["k", "sites", "sup_error", "oracle_gap"], rows)
    res = [
        assertion("lclt_strictly_decreasing", errs, None, all(a > b for a, b in zip(errs, errs[1:]))),
        assertion("lclt_final_sup_error", errs[-1], params.get("tol", tol["lclt_final"]),
                  errs[-1] <= params.get("tol", tol["lclt_final"])),
    ]
    if oracle_gaps:
        g = max(oracle_gaps)
        res.append(assertion("lclt_oracle_gap", g, tol["oracle"], g <= tol["oracle"]))
    return res


def check_expansion(model, params, tol, out: Outputs) -> list[dict]:
    from .expansion import reconstruct_cf

    t = _grid(params.get("t_grid"), (-5.0, 5.0, 201))
    n_max = int(params.get("order", 3))
    rep = _op("reconstruct_cf", reconstruct_cf, model, t, n_max, params.get("support_cap"))
    s = rep.series
    out.csv("expansion.csv", ["t", "re_U1", "im_U1", "re_dU", "im_dU", "abs_err"],
            zip(t, s.U1.real, s.U1.imag, s.delta_U.real, s.delta_U.imag, rep.deviation))
    limit = params.get("tol", tol["expansion"])
    mags = list(s.magnitudes)
    worst = float(t[int(np.argmax(rep.deviation))])
    return [
        assertion("expansion_max_deviation", rep.max_deviation, limit, rep.max_deviation <= limit, worst_t=worst),
        assertion("expansion_magnitudes_decreasing", mags, None, all(a > b for a, b in zip(mags, mags[1:]))),
    ]


def check_markov(model, params, tol, out: Outputs) -> list[dict]:
    from .gibbs import markov_dilution_check

    t = _grid(params.get("t_grid"), (0.0, 6.0, 121))
    rep = _op("markov_dilution_check", markov_dilution_check, model, int(params.get("r0", 2)), t,
              params.get("boundary_grid"), tol["markov"])
    out.csv("markov.csv", ["t", "lhs", "rhs"], zip(t, rep.lhs, rep.rhs))
    return [assertion("markov_violations", rep.violations, 0, rep.violations == 0, worst_slack=rep.worst_slack)]


def check_gruber_kunz(model, params, tol, out: Outputs) -> list[dict]:
    from .bounds import gruber_kunz
    from .model import effective_beta

    a = float(params.get("a", 1.0))
    cap = int(params.get("support_cap", 6))
    unit = effective_beta(model.with_beta(1.0), model.volume.r0)
    res = []
    if "beta_hat" in params:
        cert = _op("gruber_kunz", gruber_kunz, model.with_beta(float(params["beta_hat"]) / unit), a, cap)
        res.append(assertion("gruber_kunz_margin", cert.margin, 0.0, cert.passes, certificate=cert.to_dict()))
    points = int(params.get("scan_points", 10))
    hi = float(params.get("scan_beta_max", model.beta))
    betas = [hi * (i + 1) / points for i in range(points)]
    margins = [_op("gruber_kunz", gruber_kunz, model.with_beta(b), a, cap).margin for b in betas]
    out.csv("gruber_kunz_scan.csv", ["beta", "margin"], zip(betas, margins))
    res.append(assertion("gruber_kunz_margin_monotone", margins, None,
                         all(x > y for x, y in zip(margins, margins[1:]))))
    return res


def check_dilution(model, params, tol, out: Outputs) -> list[dict]:
    from .bounds import select_beta, select_dilution

    eps = float(params.get("epsilon", 0.1))
    if model.site_measure.bounded:
        r, cert = _op("select_dilution", select_dilution, model, eps)
        name, value = "dilution_r_epsilon", r
    else:
        b, cert = _op("select_beta", select_beta, model, eps)
        name, value = "beta_epsilon", b
    flags = cert.dil1 and cert.dil2 and cert.dil3
    return [assertion(name, value, None, flags, certificate=cert.to_dict())]


def check_bands(model, params, tol, out: Outputs) -> list[dict]:
    from .bounds import band_report

    delta, T = float(params.get("delta", 0.5)), float(params.get("T", 1.0))
    rep = _op("band_report", band_report, model, delta, T, points=int(params.get("points", 1000)))
    res = [assertion(f"band_{s.name}_violations", s.violations, 0, s.violations == 0,
                     worst_slack=s.worst_slack, domain=list(s.domain)) for s in rep.scans]
    c = rep.constants
    res.append(assertion("band_eta_positive", c.eta, 0.0, c.eta is not None and c.eta > 0))
    for key in ("c1", "gamma"):
        if key in params:
            val = getattr(c, key)
            ok = val is not None and abs(val - float(params[key])) <= float(params.get(f"{key}_tol", 1e-4))
            res.append(assertion(f"band_{key}", val, params[key], ok))
    out.json("bands.json", rep.to_dict())
    return res


def check_ursell(model, params, tol, out: Outputs) -> list[dict]:
    from .polymer import parse_edge_list, ursell_direct, ursell_penrose

    text = resolve_path(params["graph"]).read_text(encoding="utf-8")
    g = _op("parse_edge_list", parse_edge_list, text)
    d, p = _op("ursell_direct", ursell_direct, g), _op("ursell_penrose", ursell_penrose, g)
    res = [assertion("ursell_agreement", [d, p], None, d == p)]
    if "expected" in params:
        res.append(assertion("ursell_value", d, params["expected"], d == int(params["expected"])))
    return res


CHECKS: dict[str, Callable] = {
    "gaussian_cf": check_gaussian_cf,
    "lclt": check_lclt,
    "lclt_trend": check_lclt_trend,
    "expansion": check_expansion,
    "markov": check_markov,
    "gruber_kunz": check_gruber_kunz,
    "dilution": check_dilution,
    "bands": check_bands,
    "ursell": check_ursell,
}

MODEL_FREE_CHECKS = {"ursell"}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _context(cfg: dict) -> tuple[Outputs, dict]:
    tol = _tolerances(cfg)
    _validate_caps(cfg)
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("key 'seed' must be an integer")
    return Outputs(digest_of(cfg), seed, tol), tol


def _prepare_checks(cfg: dict, checks: list) -> list[tuple[str, Callable, Any, dict]]:
    """Validate every check and build its model up front so bad configs fail before any work."""
    if not isinstance(checks, list) or not checks:
        raise ConfigError("key 'command.checks' must be a nonempty list")
    base = model_block(cfg)
    plan = []
    for i, item in enumerate(checks):
        if not isinstance(item, dict) or "check" not in item:
            raise ConfigError(f"command.checks[{i}] needs a 'check' key")
        kind = item["check"]
        if kind not in CHECKS:
            raise ConfigError(f"command.checks[{i}].check: unknown value '{kind}' (known: {', '.join(CHECKS)})")
        model = None
        if kind not in MODEL_FREE_CHECKS:
            model = build_model(_merge(base, item.get("model")))
        elif "graph" not in item:
            raise ConfigError(f"command.checks[{i}] needs a 'graph' key")
        plan.append((item.get("label", kind), CHECKS[kind], model, item))
    return plan


def manifest(out: Outputs, command: str, results: list[dict], extra: dict | None = None) -> dict:
    passed = all(r["passed"] for r in results)
    return {
        "artifact": ARTIFACT,
        "version": __version__,
        "command": command,
        "results": results,
        "passed": passed,
        "files": out.digests(),
        **(extra or {}),
    }


def _finish(out: Outputs, out_dir: Path, command: str, results: list[dict], started: float,
            extra: dict | None = None) -> int:
    man = manifest(out, command, results, extra)
    out.json("manifest.json", man)
    out.commit(out_dir)
    log = (f"started={datetime.fromtimestamp(started, timezone.utc).isoformat()}\n"
           f"finished={datetime.now(timezone.utc).isoformat()}\n"
           f"elapsed_s={time.time() - started:.3f}\nworkers={os.environ.get(WORKERS_ENV, '')}\n")
    (out_dir / "run_log.txt").write_text(log, encoding="utf-8")
    for r in results:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['name']}: {_short(r['value'])}")
    return 0 if man["passed"] else 1


def _short(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def _out_dir(cfg: dict, args_out: str | None, default: str) -> Path:
    return Path(args_out or cfg.get("output") or default)


def cmd_verify_all(cfg: dict, out_dir: Path) -> int:
    started = time.time()
    out, tol = _context(cfg)
    command = cfg.get("command", {})
    plan = _prepare_checks(cfg, command.get("checks", []))
    results = []
    for label, fn, model, params in plan:
        for r in fn(model, params, tol, out):
            r["check"] = label
            results.append(r)
    return _finish(out, out_dir, "verify-all", results, started)


def cmd_gibbs(cfg: dict, out_dir: Path, t_max: float, t_step: float, x_max: float, x_step: float,
              bands: str | None) -> int:
    from .gibbs import char_fn, density, moments, region_integrals

    started = time.time()
    out, tol = _context(cfg)
    model = build_model(model_block(cfg))
    band_vals = _floats(bands, 3, "--bands") if bands else None
    if t_max <= 0 or t_step <= 0 or x_max <= 0 or x_step <= 0:
        raise ConfigError("grid extents and steps must be positive")
    stats = _op("moments", moments, model)
    n = int(round(t_max / t_step))
    t = np.linspace(-n * t_step, n * t_step, 2 * n + 1)
    tr = _op("char_fn", char_fn, model, t, stats)
    out.csv("trace.csv", ["t", "re", "im"], zip(t, tr.values.real, tr.values.imag))
    summary: dict = {"statistics": stats.to_dict(), "model": model.to_dict()}
    results = [assertion("trace_bounded", float(np.max(np.abs(tr.values))), 1.0 + 1e-12,
                         float(np.max(np.abs(tr.values))) <= 1.0 + 1e-12)]
    if not model.site_measure.is_discrete:
        m = int(round(x_max / x_step))
        x = np.linspace(-m * x_step, m * x_step, 2 * m + 1)
        rep = _op("density", density, model, x, t_max, t_step, stats)
        out.csv("density.csv", ["x", "p", "gauss", "abs_err"],
                zip(x, rep.p_values, rep.gauss, np.abs(rep.p_values - rep.gauss)))
        summary["density"] = rep.to_dict()
    if band_vals:
        B, delta, T = band_vals
        summary["regions"] = _op("region_integrals", region_integrals, model, B, delta, T, stats).to_dict()
    out.json("summary.json", summary)
    return _finish(out, out_dir, "gibbs", results, started)


def cmd_expand(cfg: dict, out_dir: Path, order: int, support_cap: int | None, t_grid: str | None,
               tol_override: float | None) -> int:
    started = time.time()
    out, tol = _context(cfg)
    if order < 1:
        raise ConfigError("--order must be positive")
    model = build_model(model_block(cfg))
    params = {"order": order, "support_cap": support_cap, "t_grid": t_grid}
    if tol_override is not None:
        params["tol"] = tol_override
    results = check_expansion(model, params, tol, out)
    return _finish(out, out_dir, "expand", results, started)


def cmd_bounds(cfg: dict, out_dir: Path, a: float, epsilon: float | None, bands: str | None,
               support_cap: int) -> int:
    from .bounds import gruber_kunz, tree_bound

    started = time.time()
    out, tol = _context(cfg)
    if a <= 0:
        raise ConfigError("--a must be positive")
    model = build_model(model_block(cfg))
    results = []
    gk = _op("gruber_kunz", gruber_kunz, model, a, support_cap)
    tb = _op("tree_bound", tree_bound, model, a)
    results.append(assertion("gruber_kunz_margin", gk.margin, 0.0, gk.passes))
    payload = {"gruber_kunz": gk.to_dict(), "tree_bound": tb.to_dict()}
    if bands:
        delta, T = _floats(bands, 2, "--bands")
        results += check_bands(model, {"delta": delta, "T": T}, tol, out)
    if epsilon is not None:
        sel = check_dilution(model, {"epsilon": epsilon}, tol, out)
        payload["selection"] = sel[0]
        results += sel
    out.json("certificate.json", payload)
    return _finish(out, out_dir, "bounds", results, started)


def cmd_ursell(path: str) -> int:
    from .polymer import parse_edge_list, ursell_direct, ursell_penrose

    g = _op("parse_edge_list", parse_edge_list, resolve_path(path).read_text(encoding="utf-8"))
    d = _op("ursell_direct", ursell_direct, g)
    p = _op("ursell_penrose", ursell_penrose, g)
    print(f"direct {d}")
    print(f"penrose {p}")
    return 0 if d == p else 1


def _flatten(obj, prefix: str = "") -> dict:
    if isinstance(obj, dict):
        out = {}
        for k in sorted(obj):
            out.update(_flatten(obj[k], f"{prefix}.{k}" if prefix else str(k)))
        return out
    if isinstance(obj, list):
        if obj and all(isinstance(r, dict) and "name" in r for r in obj):
            out = {}
            for r in obj:
                key = f"{prefix}[{r.get('check', '')}:{r['name']}]"
                out.update(_flatten({k: v for k, v in r.items() if k not in ("name", "check")}, key))
            return out
        out = {}
        for i, v in enumerate(obj):
            out.update(_flatten(v, f"{prefix}[{i}]"))
        return out
    return {prefix: obj}


def compare_manifests(a: dict, b: dict, rtol: float = 1e-12, atol: float = 0.0) -> list[dict]:
    """Field-by-field differences between two manifests (empty when they agree)."""
    if a.get("command") != b.get("command"):
        raise ConfigError(f"cannot compare a '{a.get('command')}' manifest with a '{b.get('command')}' manifest")
    fa, fb = _flatten(a), _flatten(b)
    diffs = []
    for key in sorted(set(fa) | set(fb)):
        va, vb = fa.get(key), fb.get(key)
        if key.startswith("files.") or key == "config_digest":
            continue
        num = (int, float)
        if isinstance(va, num) and isinstance(vb, num) and not isinstance(va, bool) and not isinstance(vb, bool):
            if abs(va - vb) > atol + rtol * max(abs(va), abs(vb)):
                diffs.append({"field": key, "a": va, "b": vb, "abs_diff": abs(va - vb)})
        elif va != vb:
            diffs.append({"field": key, "a": va, "b": vb})
    return diffs


def cmd_compare(path_a: str, path_b: str, rtol: float, atol: float) -> int:
    docs = []
    for p in (path_a, path_b):
        try:
            docs.append(json.loads(Path(p).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{p}: {exc}") from None
    diffs = compare_manifests(docs[0], docs[1], rtol, atol)
    print(dump_json({"differences": diffs, "rtol": rtol, "atol": atol}), end="")
    return 0 if not diffs else 1


def cmd_run(cfg: dict, out: str | None) -> int:
    command = cfg.get("command")
    if not isinstance(command, dict) or "name" not in command:
        raise ConfigError("key 'command.name' is required for run")
    name = command["name"]
    if name not in COMMANDS:
        raise ConfigError(f"unknown value '{name}' for key 'command.name' (known: {', '.join(COMMANDS)})")
    out_dir = _out_dir(cfg, out, f"out/{name}")
    if name == "verify-all":
        return cmd_verify_all(cfg, out_dir)
    if name in ("gibbs", "lclt"):
        return cmd_gibbs(cfg, out_dir, float(command.get("t_max", 40.0)), float(command.get("t_step", 0.01)),
                         float(command.get("x_max", 4.0)), float(command.get("x_step", 0.05)), command.get("bands"))
    if name == "expand":
        return cmd_expand(cfg, out_dir, int(command.get("order", 3)), command.get("support_cap"),
                          command.get("t_grid"), command.get("tol"))
    if name == "bounds":
        return cmd_bounds(cfg, out_dir, float(command.get("a", 1.0)), command.get("epsilon"),
                          command.get("bands"), int(command.get("support_cap", 6)))
    return cmd_ursell(command.get("graph", "k3.txt"))


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clusterlclt", description="Exact Gibbs computations, cluster expansions "
                                "and certified band bounds for lattice spin systems.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--workers", type=int, help=f"worker threads (sets {WORKERS_ENV}; never changes results)")
    sub = p.add_subparsers(dest="cmd", required=True)

    def with_config(sp):
        sp.add_argument("--config", required=True, help="JSON config path or bundled config name")
        sp.add_argument("--out", help="output directory (default: config 'output' key)")

    g = sub.add_parser("gibbs", help="exact characteristic function, density and region integrals")
    with_config(g)
    g.add_argument("--t-max", type=float, default=40.0)
    g.add_argument("--t-step", type=float, default=0.01)
    g.add_argument("--x-max", type=float, default=4.0)
    g.add_argument("--x-step", type=float, default=0.05)
    g.add_argument("--bands", help="B,delta,T")

    e = sub.add_parser("expand", help="cluster-expansion reconstruction of the characteristic function")
    with_config(e)
    e.add_argument("--order", type=int, default=3)
    e.add_argument("--support-cap", type=int)
    e.add_argument("--t-grid", help="lo,hi,points")
    e.add_argument("--tol", type=float)

    b = sub.add_parser("bounds", help="convergence certificates and band constants")
    with_config(b)
    b.add_argument("--a", type=float, default=1.0)
    b.add_argument("--epsilon", type=float)
    b.add_argument("--bands", help="delta,T")
    b.add_argument("--support-cap", type=int, default=6)

    u = sub.add_parser("ursell", help="Ursell coefficient of an edge-list graph by both algorithms")
    u.add_argument("graph", help="edge-list file (one 'i j' pair per line) or bundled name")

    v = sub.add_parser("verify-all", help="run every check listed in a config")
    with_config(v)

    c = sub.add_parser("compare", help="numeric diff of two manifests")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--rtol", type=float, default=DEFAULT_TOLERANCES["compare_rtol"])
    c.add_argument("--atol", type=float, default=DEFAULT_TOLERANCES["compare_atol"])

    r = sub.add_parser("run", help="execute the command block of a config")
    r.add_argument("config")
    r.add_argument("--out")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers is not None:
        if args.workers < 1:
            print("config error: --workers must be positive", file=sys.stderr)
            return 2
        os.environ[WORKERS_ENV] = str(args.workers)
    try:
        if args.cmd == "ursell":
            return cmd_ursell(args.graph)
        if args.cmd == "compare":
            return cmd_compare(args.a, args.b, args.rtol, args.atol)
        if args.cmd == "run":
            return cmd_run(load_config(args.config), args.out)
        cfg = load_config(args.config)
        out_dir = _out_dir(cfg, args.out, f"out/{args.cmd}")
        if args.cmd == "verify-all":
            return cmd_verify_all(cfg, out_dir)
        if args.cmd == "gibbs":
            return cmd_gibbs(cfg, out_dir, args.t_max, args.t_step, args.x_max, args.x_step, args.bands)
        if args.cmd == "expand":
            return cmd_expand(cfg, out_dir, args.order, args.support_cap, args.t_grid, args.tol)
        return cmd_bounds(cfg, out_dir, args.a, args.epsilon, args.bands, args.support_cap)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OperationError as exc:
        print(f"error in {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
