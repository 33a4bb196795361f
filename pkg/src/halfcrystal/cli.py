"""Half-space harmonic crystal experiments driven by JSON configurations.

Usage: ``halfcrystal <command> [--config PATH] [--seed N] [--workers N] [--out DIR]``.

Every command reads a JSON configuration (validated against the shipped
schema), fills in defaults, writes the resolved configuration beside its
outputs and finishes with a manifest of content digests.  Exit codes: 0 on
success, 1 when a scientific check fails, 2 for usage or configuration
errors.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import covariance as cov
from . import dynamics as dyn
from . import experiments as exp
from . import fields
from .lattice import Box, TorusGrid
from .spectral import (
    ConditionViolation,
    InteractionKernel,
    Tolerances,
    band_functions,
    build_nn_kernel,
    build_spectral_table,
    onsite_kernel,
    validate_conditions,
)
from .stencil import BACKEND

log = logging.getLogger("halfcrystal")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

COMMANDS = ("validate", "dispersion", "evolve", "sample", "converge", "gaussianity", "decay", "report")

DEFAULTS = {
    "kernel": {"family": "nearest-neighbor", "d": 1, "n": 1, "gamma": 1.0, "m": 0.5},
    "grid": {"N": None},
    "box": {"L1": 512, "transverse": 64},
    "covariance": {"kind": "triangular", "N0": 2},
    "cutoff": 0,
    "times": [10, 20, 40, 80],
    "probes": None,
    "ensemble": {"M": 10000, "noise": "gaussian", "chunk": 1000, "recipe": None},
    "limit": {"N": None},
    "test_functions": None,
    "decay": {"times": None, "L1": None, "packet_width": None, "center": None},
    "evolve": {"method": "odd-extension", "resume": None},
    "tolerances": {
        "final_error": 0.05,
        "slack": 0.2,
        "refine": 0.01,
        "z_max": 4.0,
        "p_min": 0.01,
        "slope": 0.15,
        "mass": 1e-6,
        "cone_factor": 2.0,
        "group": 1e-9,
        "boundary": 1e-12,
    },
    "seed": 0,
    "workers": 1,
    "out": "runs",
}

# torus resolution per dimension when the config leaves it open
GRID_N = {1: 1024, 2: 128, 3: 32}
LIMIT_N = {1: 8192, 2: 256, 3: 48}
# keys that do not change any payload and are left out of the config hash
UNHASHED = ("workers", "out")


class ConfigError(ValueError):
    """Configuration cannot be parsed, validated or resolved."""


class HorizonError(ConfigError):
    """Requested times exceed the wrap-around horizon of the box."""


# -- configuration -------------------------------------------------------------


def load_schema() -> dict:
    return json.loads(resources.files("halfcrystal").joinpath("config.schema.json").read_text())


def read_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: malformed JSON ({err})") from err
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("kernel", "covariance"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(doc: dict, base_dir=None) -> dict:
    """Validate ``doc`` and return a self-contained configuration with defaults.

    Resolving an already resolved configuration returns it unchanged.
    """
    try:
        jsonschema.validate(doc, load_schema())
    except jsonschema.ValidationError as err:
        where = "/".join(map(str, err.absolute_path)) or "<root>"
        raise ConfigError(f"config invalid at {where}: {err.message}") from err
    cfg = _merge(DEFAULTS, doc)
    kdoc = cfg["kernel"]
    if "file" in kdoc:
        path = Path(kdoc["file"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            kdoc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read kernel file {path}: {err}") from err
    kernel = build_kernel(kdoc)
    if kernel.family == "nearest-neighbor" and "entries" not in kdoc:
        cfg["kernel"] = {"family": "nearest-neighbor", "d": kernel.d, "n": kernel.n,
                         "gamma": kernel.params["gamma"], "m": kernel.params["m"]}
    else:
        cfg["kernel"] = kernel.to_dict()
    d = kernel.d
    if cfg["grid"]["N"] is None:
        cfg["grid"]["N"] = GRID_N[d]
    if cfg["limit"]["N"] is None:
        cfg["limit"]["N"] = LIMIT_N[d]
    if cfg["probes"] is None:
        cfg["probes"] = [[z] + [0] * (d - 1) for z in range(3, 11)]
    if cfg["test_functions"] is None:
        cfg["test_functions"] = [{"sites": [[10] + [0] * (d - 1)], "component": 0}]
    for tf in cfg["test_functions"]:
        tf.setdefault("component", 0)
        tf.setdefault("weights", [1.0] * len(tf["sites"]))
        if len(tf["weights"]) != len(tf["sites"]):
            raise ConfigError("test function weights and sites differ in length")
        if tf["component"] >= 2 * kernel.n:
            raise ConfigError(f"test function component {tf['component']} out of range for n={kernel.n}")
    for p in cfg["probes"] + [z for tf in cfg["test_functions"] for z in tf["sites"]]:
        if len(p) != d:
            raise ConfigError(f"point {p} does not have dimension {d}")
    cfg["times"] = [float(t) for t in cfg["times"]]
    build_covariance(cfg, kernel)  # fail early on inconsistent covariance
    return cfg


def build_kernel(kdoc: dict) -> InteractionKernel:
    try:
        family = kdoc.get("family", "custom")
        if "entries" in kdoc:
            return InteractionKernel.from_dict(kdoc)
        if family == "nearest-neighbor":
            n = int(kdoc.get("n", 1))
            return build_nn_kernel(int(kdoc.get("d", 1)), n, kdoc.get("gamma", 1.0), kdoc.get("m", 0.0))
        if family == "onsite":
            return onsite_kernel(int(kdoc.get("d", 1)), kdoc.get("m", 1.0))
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad kernel specification: {err}") from err
    raise ConfigError(f"kernel family {family!r} needs an explicit entry table")


def build_covariance(cfg: dict, kernel: InteractionKernel) -> fields.CovarianceSpec:
    doc = dict(cfg["covariance"])
    doc.update(d=kernel.d, n=kernel.n, cutoff=cfg["cutoff"])
    if doc["kind"] == "triangular" and kernel.n != 1:
        raise ConfigError("the triangular covariance is defined for n = 1")
    if doc["kind"] == "gibbs":
        doc.setdefault("T", 1.0)
        doc["kernel"] = kernel.to_dict()
    try:
        return fields.CovarianceSpec.from_dict(doc)
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad covariance specification: {err}") from err


def config_hash(cfg: dict) -> str:
    core = {k: v for k, v in cfg.items() if k not in UNHASHED}
    return hashlib.sha256(json.dumps(core, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def half_box(cfg: dict, d: int, L1=None) -> Box:
    L1 = L1 or cfg["box"]["L1"]
    return Box((L1,) + (cfg["box"]["transverse"],) * (d - 1), half=True)


def tolerances(cfg: dict) -> Tolerances:
    keys = Tolerances.__dataclass_fields__
    return Tolerances(**{k: v for k, v in cfg["tolerances"].items() if k in keys})


# -- run directory ---------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Output directory of one command with its manifest."""

    def __init__(self, cfg: dict, command: str):
        self.cfg = cfg
        self.command = command
        self.dir = Path(cfg["out"]) / command
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.start = time.perf_counter()
        self.write_json("config.resolved.json", cfg)

    def path(self, name: str) -> Path:
        p = self.dir / name
        if p not in self.files:
            self.files.append(p)
        return p

    def write_json(self, name: str, doc) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(exp._plain(doc), indent=2, sort_keys=True) + "\n")
        return p

    def write_csv(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
        return p

    def finish(self, passed: bool | None) -> int:
        artifacts = [
            {"path": p.name, "sha256": sha256_file(p), "bytes": p.stat().st_size}
            for p in sorted(set(self.files)) if p.exists()
        ]
        manifest = {
            "command": self.command,
            "config_hash": config_hash(self.cfg),
            "version": __version__,
            "backend": BACKEND,
            "workers": self.cfg["workers"],
            "wall_time_s": time.perf_counter() - self.start,
            "passed": passed,
            "artifacts": artifacts,
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return EXIT_OK if passed is not False else EXIT_FAILED


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17e}"
    return v


def verify_manifest(directory) -> list[str]:
    """Artifacts whose digest or size no longer matches the manifest."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    bad = []
    for a in manifest["artifacts"]:
        p = directory / a["path"]
        if not p.exists() or p.stat().st_size != a["bytes"] or sha256_file(p) != a["sha256"]:
            bad.append(a["path"])
    return bad


def _tag(t: float) -> str:
    return f"t{t:g}"


# -- commands ------------------------------------------------------------------------


def cmd_validate(cfg: dict) -> int:
    kernel = build_kernel(cfg["kernel"])
    run = Run(cfg, "validate")
    grid = TorusGrid(kernel.d, cfg["grid"]["N"])
    report = validate_conditions(kernel, grid, tolerances(cfg))
    run.path("report.json").write_text(report.to_json() + "\n")
    run.path("summary.txt").write_text(report.summary() + "\n")
    print(report.summary())
    return run.finish(report.ok)


def cmd_dispersion(cfg: dict) -> int:
    """Bands along each coordinate axis through the origin."""
    kernel = build_kernel(cfg["kernel"])
    run = Run(cfg, "dispersion")
    N = cfg["grid"]["N"]
    s = np.linspace(0.0, 2 * np.pi, N + 1)
    rows = []
    for a in range(kernel.d):
        th = np.zeros((N + 1, kernel.d))
        th[:, a] = s
        omega, dw = band_functions(kernel, th)
        for i in range(N + 1):
            for k in range(kernel.n):
                rows.append([a, i, *th[i], k, omega[i, k], dw[i, k, 0]])
    header = ["axis", "step"] + [f"theta{j + 1}" for j in range(kernel.d)] + ["index", "omega", "group_velocity"]
    run.write_csv("dispersion.csv", header, rows)
    print(f"wrote {len(rows)} rows to {run.dir / 'dispersion.csv'}")
    return run.finish(None)


def _initial_state(cfg, kernel, spec, box) -> dyn.FieldState:
    X = fields.sample_field(spec, box.doubled(), fields.NoiseLaw(cfg["ensemble"]["noise"]), cfg["seed"], 0,
                            recipe=cfg["ensemble"]["recipe"])
    return fields.cutoff_halfspace(X, spec.cutoff, box.L[0])


def cmd_evolve(cfg: dict) -> int:
    """Snapshots of one sampled initial state at every scheduled time.

    With ``evolve.resume`` the run starts from a saved snapshot and evolves
    by the remaining time differences.  Without it, the last snapshot is
    recomputed from the first one to check the group property.
    """
    kernel = build_kernel(cfg["kernel"])
    spec = build_covariance(cfg, kernel)
    method = cfg["evolve"]["method"]
    resume = cfg["evolve"]["resume"]
    if resume:
        try:
            Y0, meta = dyn.load_snapshot(resume)
        except (OSError, ValueError) as err:
            raise ConfigError(f"cannot resume from {resume}: {err}") from err
        t0 = float(meta.get("t", 0.0))
        box = Y0.box
        if not box.half or box.d != kernel.d or Y0.n != kernel.n:
            raise ConfigError(f"snapshot {resume} does not match the configured kernel")
    else:
        box = half_box(cfg, kernel.d)
        Y0, t0 = _initial_state(cfg, kernel, spec, box), 0.0
    table = build_spectral_table(kernel, box.grid())
    run = Run(cfg, "evolve")
    times = sorted(t for t in cfg["times"] if t >= t0)
    states, rows = {}, []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", dyn.GuardWarning)
        if not resume:
            dyn.save_snapshot(run.path("state_t0.bin"), Y0, {"t": 0.0, "seed": cfg["seed"]})
            run.path("state_t0.bin.json")
        for t in times:
            Y = dyn.evolve_half(Y0, table, t - t0, method=method) if t > t0 else Y0
            states[t] = Y
            name = f"state_{_tag(t)}.bin"
            dyn.save_snapshot(run.path(name), Y, {"t": t, "seed": cfg["seed"], "resumed_from": t0 if resume else None})
            run.path(name + ".json")
            dyn.export_slice_csv(run.path(f"slice_{_tag(t)}.csv"), Y)
            rows.append([t, Y.boundary_max(), float(np.abs(Y.stacked()).max())])
        group = 0.0
        if not resume and len(times) >= 2:
            ta, tb = times[0], times[-1]
            chained = dyn.evolve_half(states[ta], table, tb - ta, method=method).stacked()
            direct = states[tb].stacked()
            group = float(np.abs(chained - direct).max() / max(1.0, np.abs(direct).max()))
    tol = cfg["tolerances"]
    boundary = max([r[1] for r in rows] + [0.0])
    passed = boundary <= tol["boundary"] and group <= tol["group"]
    run.write_csv("evolve.csv", ["t", "boundary_max", "sup_abs"], rows)
    summary = {"start_t": t0, "times": times, "boundary_max": boundary, "group_defect": group,
               "horizon_warnings": len(caught), "passed": passed}
    run.write_json("summary.json", summary)
    print(f"{'PASS' if passed else 'FAIL'}  evolve: boundary_max={boundary:.3g}, group_defect={group:.3g}")
    return run.finish(passed)


def _check_horizon(cfg, box, table, spec, times):
    r_obs = max(abs(p[0]) for p in cfg["probes"])
    h = dyn.horizon(box, table.max_group_velocity(), r_obs, spec.range or 0)
    if max(times) > h:
        raise HorizonError(f"t={max(times):g} exceeds the horizon {h:.4g} of a box with L1={box.L[0]}")


def _observation_matrix(cfg, kernel, box, table, t) -> np.ndarray:
    """Rows ``Phi_{z,c}(t)`` restricted to the half box, shape ``(P m, S m)``."""
    m = 2 * kernel.n
    W = []
    for p in cfg["probes"]:
        for c in range(m):
            Psi = exp.site_functional(box, kernel.n, [p], component=c)
            W.append(dyn.adjoint_evolve(Psi, table, t).stacked()[: box.L[0]].reshape(-1))
    return np.array(W)


_WORKER_CACHE: dict = {}


def _sample_chunk(args):
    """Per-time probe sums for sample indices ``[start, stop)``."""
    cfg, start, stop = args
    key = config_hash(cfg)
    if key not in _WORKER_CACHE:
        kernel = build_kernel(cfg["kernel"])
        spec = build_covariance(cfg, kernel)
        box = half_box(cfg, kernel.d)
        table = build_spectral_table(kernel, box.grid())
        Ws = {t: _observation_matrix(cfg, kernel, box, table, t) for t in cfg["times"]}
        _WORKER_CACHE.clear()
        _WORKER_CACHE[key] = (kernel, spec, box, Ws)
    kernel, spec, box, Ws = _WORKER_CACHE[key]
    law = fields.NoiseLaw(cfg["ensemble"]["noise"])
    X = fields.sample_batch(spec, box.doubled(), law, cfg["seed"], range(start, stop), recipe=cfg["ensemble"]["recipe"])
    Y0 = fields.cutoff_batch(X, a=spec.cutoff).reshape(stop - start, -1)
    P, m = len(cfg["probes"]), 2 * kernel.n
    out = {}
    for t, W in Ws.items():
        acc = fields.EnsembleAccumulator(cfg["probes"], box, m)
        acc.add_values((Y0 @ W.T).reshape(-1, P, m))
        out[t] = acc
    return out


def cmd_sample(cfg: dict) -> int:
    """Resumable Monte Carlo ensemble of ``Y(t)`` on the probes.

    Chunks of ``ensemble.chunk`` samples are processed by the worker pool
    and merged in chunk order, so the checkpoints do not depend on the
    number of workers or on interruptions.
    """
    kernel = build_kernel(cfg["kernel"])
    spec = build_covariance(cfg, kernel)
    box = half_box(cfg, kernel.d)
    table = build_spectral_table(kernel, box.grid())
    _check_horizon(cfg, box, table, spec, cfg["times"])
    run = Run(cfg, "sample")
    M, chunk, m = cfg["ensemble"]["M"], cfg["ensemble"]["chunk"], 2 * kernel.n
    times = cfg["times"]
    accs = {t: fields.EnsembleAccumulator(cfg["probes"], box, m) for t in times}
    progress = run.dir / "progress.json"
    done = 0
    if progress.exists():
        state = json.loads(progress.read_text())
        if state.get("config_hash") == config_hash(cfg):
            done = int(state["done"])
            accs = {t: fields.EnsembleAccumulator.load(run.dir / f"acc_{_tag(t)}.bin") for t in times}
            log.info("resuming ensemble at sample %d", done)
    bounds = [(s, min(M, s + chunk)) for s in range(done, M, chunk)]
    workers = cfg["workers"]
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for r in range(0, len(bounds), workers):
            batch = [(cfg, a, b) for a, b in bounds[r : r + workers]]
            parts = list(pool.map(_sample_chunk, batch)) if pool else [_sample_chunk(x) for x in batch]
            for part in parts:
                accs = {t: accs[t].merge(part[t]) for t in times}
            done = batch[-1][2]
            for t in times:
                accs[t].save(run.dir / f"acc_{_tag(t)}.bin")
            progress.write_text(json.dumps({"config_hash": config_hash(cfg), "done": done}) + "\n")
    finally:
        if pool:
            pool.shutdown()
    rows = []
    for t in times:
        run.path(f"acc_{_tag(t)}.bin")
        emp = cov.empirical_covariance(accs[t])
        emp.to_csv(run.path(f"covariance_{_tag(t)}.csv"))
        exact = cov.propagate_covariance(spec, table, t, box, cfg["probes"])
        se = emp.stderr
        resolved = se > 1e-12 * max(1.0, float(np.abs(exact.Q).max()))
        z = np.abs(emp.Q - exact.Q)[resolved] / se[resolved]
        rows.append({"t": t, "M": accs[t].count, "max_z_vs_exact": float(z.max()) if z.size else 0.0,
                     "max_stderr": float(se.max())})
    run.path("progress.json")
    run.write_json("summary.json", {"M": M, "rows": rows})
    for r in rows:
        print(f"t={r['t']:g}  M={r['M']}  max|emp-exact|/stderr={r['max_z_vs_exact']:.3g}")
    return run.finish(None)


def cmd_converge(cfg: dict) -> int:
    kernel = build_kernel(cfg["kernel"])
    spec = build_covariance(cfg, kernel)
    box = half_box(cfg, kernel.d)
    table = build_spectral_table(kernel, box.grid())
    times = cfg["times"]
    _check_horizon(cfg, box, table, spec, times)
    run = Run(cfg, "converge")
    probes = [tuple(p) for p in cfg["probes"]]
    N = cfg["limit"]["N"]
    Qinf = cov.limit_covariance_field(cov.limit_field(spec, kernel, N), probes)
    refine = cov.limit_covariance_field(cov.limit_field(spec, kernel, 2 * N), probes).error_vs(Qinf)
    Qinf.to_csv(run.path("Q_inf.csv"))
    rows = []
    for t in times:
        Qt = cov.propagate_covariance(spec, table, t, box, probes)
        Qt.to_csv(run.path(f"Q_{_tag(t)}.csv"))
        rows.append([t, Qt.error_vs(Qinf)])
    run.write_csv("errors.csv", ["t", "relative_error"], rows)
    tol = cfg["tolerances"]
    errs = [r[1] for r in rows]
    mono = all(b <= (1 + tol["slack"]) * a for a, b in zip(errs, errs[1:]))
    passed = mono and errs[-1] <= tol["final_error"] and refine <= tol["refine"]
    run.write_json("summary.json", {"times": times, "errors": errs, "monotone": mono, "final_error": errs[-1],
                                    "refinement": refine, "passed": passed})
    print(f"{'PASS' if passed else 'FAIL'}  converge: errors={[round(e, 4) for e in errs]}, refinement={refine:.3g}")
    return run.finish(passed)


def cmd_gaussianity(cfg: dict) -> int:
    """Normality of ``<Y(t), Psi>`` for each test function; judged at the last time."""
    kernel = build_kernel(cfg["kernel"])
    spec = build_covariance(cfg, kernel)
    box = half_box(cfg, kernel.d)
    ens, tol = cfg["ensemble"], cfg["tolerances"]
    if spec.gaussian_only and ens["noise"] != "gaussian":
        raise ConfigError("this covariance has no finite-range recipe; use Gaussian noise")
    run = Run(cfg, "gaussianity")
    lim = cov.limit_field(spec, kernel, cfg["limit"]["N"])
    psis, variances = [], []
    for tf in cfg["test_functions"]:
        sites = [tuple(z) for z in tf["sites"]]
        psis.append(exp.site_functional(box, kernel.n, sites, tf["weights"], tf["component"]))
        variances.append(exp.limit_quadratic_form(lim, sites, tf["weights"], tf["component"]))
    times = cfg["times"]
    reports = exp.normality_series(kernel, spec, box, psis, variances, times, ens["M"], cfg["seed"], ens["noise"],
                                   ens["chunk"], tol["z_max"], tol["p_min"], ens["recipe"])
    rows = []
    for j, reps in enumerate(reports):
        for t in times:
            rows.append({"psi": j, "t": t, **reps[t].to_dict()})
    keys = list(rows[0])
    run.write_csv("normality.csv", keys, [[r[k] for k in keys] for r in rows])
    passed = all(reps[times[-1]].verdict != "fail" for reps in reports)
    run.write_json("summary.json", {"variances": variances, "rows": rows, "passed": passed})
    for r in rows:
        print(f"psi={r['psi']} t={r['t']:g}: {r['verdict']}  skew_z={r['skew_z']:.3g} "
              f"kurtosis_z={r['kurtosis_z']:.3g} ks_p={r['ks_p']:.3g}")
    return run.finish(passed)


def cmd_decay(cfg: dict) -> int:
    kd = cfg["kernel"]
    if kd.get("family") != "nearest-neighbor" or kd.get("n") != 1 or "entries" in kd:
        raise ConfigError("the decay study needs a scalar nearest-neighbor kernel")
    gamma = kd["gamma"][0] if isinstance(kd["gamma"], list) else kd["gamma"]
    m = kd["m"][0] if isinstance(kd["m"], list) else kd["m"]
    dc, tol = cfg["decay"], cfg["tolerances"]
    times = np.array(dc["times"]) if dc["times"] else None
    try:
        res = exp.decay_study(kd["d"], times, m=m, gamma=gamma, L1=dc["L1"], packet_width=dc["packet_width"],
                              center=dc["center"], cone_factor=tol["cone_factor"], slope_tol=tol["slope"],
                              mass_tol=tol["mass"])
    except ValueError as err:
        raise HorizonError(str(err)) from err
    run = Run(cfg, "decay")
    run.write_csv("decay.csv", ["t", "sup", "outside_mass"], [[r["t"], r["sup"], r["outside_mass"]] for r in res.rows])
    run.write_json("summary.json", {**res.metrics, "passed": res.passed})
    print(res.line())
    return run.finish(res.passed)


def cmd_report(cfg: dict) -> int:
    """Verify every manifest under the output directory and collect verdicts."""
    root = Path(cfg["out"])
    entries, ok = [], True
    for mpath in sorted(root.glob("*/manifest.json")):
        if mpath.parent.name == "report":
            continue
        manifest = json.loads(mpath.read_text())
        bad = verify_manifest(mpath.parent)
        ok &= not bad and manifest.get("passed") is not False
        entries.append({"command": manifest["command"], "passed": manifest.get("passed"),
                        "artifacts": len(manifest["artifacts"]), "corrupted": bad,
                        "config_hash": manifest["config_hash"]})
    if not entries:
        raise ConfigError(f"no runs found under {root}")
    run = Run(cfg, "report")
    run.write_json("report.json", {"runs": entries, "ok": ok})
    for e in entries:
        state = {True: "PASS", False: "FAIL", None: "DONE"}[e["passed"]]
        extra = f"  corrupted: {', '.join(e['corrupted'])}" if e["corrupted"] else ""
        print(f"{state:5s} {e['command']}: {e['artifacts']} artifacts verified{extra}")
    return run.finish(ok)


HANDLERS = {
    "validate": cmd_validate,
    "dispersion": cmd_dispersion,
    "evolve": cmd_evolve,
    "sample": cmd_sample,
    "converge": cmd_converge,
    "gaussianity": cmd_gaussianity,
    "decay": cmd_decay,
    "report": cmd_report,
}


# -- entry point ------------------------------------------------------------------


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON experiment configuration")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (overrides the config)")
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="worker processes for sampling")
    p.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="halfcrystal", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "validate": "check kernel conditions on a torus grid",
        "dispersion": "tabulate band frequencies and group velocities along axes",
        "evolve": "evolve one sampled initial state and write snapshots",
        "sample": "resumable ensemble of evolved fields on probe points",
        "converge": "exact covariance on probes versus the limit covariance",
        "gaussianity": "normality tests of linear functionals of the evolved field",
        "decay": "decay rate and light-cone confinement of transposed evolutions",
        "report": "verify manifests of previous runs and collect verdicts",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "evolve":
            sp.add_argument("--resume", type=Path, default=argparse.SUPPRESS, help="snapshot to continue from")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_CONFIG if err.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        path = getattr(args, "config", None)
        doc = read_config(path)
        for key in ("seed", "workers", "out"):
            if hasattr(args, key):
                doc[key] = str(getattr(args, key)) if key == "out" else getattr(args, key)
        if hasattr(args, "resume"):
            doc.setdefault("evolve", {})["resume"] = str(args.resume)
        cfg = resolve_config(doc, base_dir=Path(path).parent if path else None)
        return HANDLERS[args.command](cfg)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ConditionViolation as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
