"""``qttgp`` command line: run, validate and benchmark from JSON configs."""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import math
import os
import re
import sys
import time
import tracemalloc
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .dense import DenseCapError, DenseState, dense_evolve, memory_report
from .operators import CalibrationError, KineticSpec, PotentialTerm, PotentialWarning, calibrate_kcut
from .quantics import QuanticsGrid
from .solver import (
    EvolutionConfig,
    GPState,
    IntegrationError,
    ObservableRecord,
    build_operators,
    evolve,
    forward_backward_error,
    gaussian_state,
    sample_density,
    trotter_step,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
WORKERS_ENV = "QTTGP_WORKERS"
MODES = ("evolve", "forward_backward", "oracle_compare", "memory_bench")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_sweepable = lambda s: {"anyOf": [s, {"type": "array", "items": s, "minItems": 1}]}  # noqa: E731

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["grid", "h_t", "T"],
    "properties": {
        "mode": {"enum": list(MODES)},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dim", "R", "W"],
            "properties": {
                "dim": {"enum": [1, 2]},
                "R": _sweepable({"type": "integer", "minimum": 1, "maximum": 60}),
                "W": _pos,
                "ordering": {"enum": ["interleaved", "serial"]},
            },
        },
        "h_t": _pos,
        "T": _sweepable({"type": "number", "minimum": 0}),
        "g": _sweepable(_num),
        "chi_max": _sweepable({"anyOf": [{"type": "integer", "minimum": 1}, {"type": "null"}]}),
        "tol_nl": _pos,
        "tol_build": _pos,
        "tol_trunc": {"type": "number", "minimum": 0},
        "record_every": {"type": "integer", "minimum": 1},
        "calibrate": {"type": "boolean"},
        "fit_sweeps": {"type": "integer", "minimum": 1},
        "rng_seed": {"type": "integer", "minimum": 0},
        "kinetic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"mass": _pos, "k_cut": {"type": "integer", "minimum": 1}, "beta": _pos, "tol": _pos},
        },
        "potential": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind", "amplitude"],
                "properties": {
                    "kind": {"enum": ["harmonic_x", "harmonic_y", "cross_xy", "sine_mod"]},
                    "amplitude": _num,
                    "q": {"type": "array", "items": _num, "minItems": 1, "maxItems": 2},
                },
            },
        },
        "initial_state": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gaussian": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "center": {"type": "array", "items": _num, "minItems": 1, "maxItems": 2},
                        "width": _pos,
                        "k": {"anyOf": [_num, {"type": "array", "items": _num, "minItems": 1, "maxItems": 2}]},
                    },
                }
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "observables_csv": {"type": "string"},
                "summary_csv": {"type": "string"},
                "density_dumps": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["time", "window", "n_points", "path"],
                        "properties": {
                            "time": {"type": "number", "minimum": 0},
                            "window": {"type": "array", "items": _num, "minItems": 2, "maxItems": 4},
                            "n_points": {"type": "integer", "minimum": 1},
                            "path": {"type": "string"},
                        },
                    },
                },
            },
        },
        "bench": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rmin": {"type": "integer", "minimum": 2},
                "rmax": {"type": "integer", "minimum": 2},
                "chi": {"type": "integer", "minimum": 1},
                "time_steps": {"type": "boolean"},
            },
        },
    },
}

SWEEP_KEYS = ("T", "g", "chi_max")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# loading


_WS = re.compile(r"\s*")


def _line_of(text: str, path) -> int:
    """1-based line of the JSON value at ``path`` (keys and list indices)."""
    dec = json.JSONDecoder()
    skip = lambda p: _WS.match(text, p).end()  # noqa: E731
    pos = skip(0)
    try:
        for key in path:
            opener = text[pos]
            pos = skip(pos + 1)
            i = 0
            while text[pos] not in "}]":
                if opener == "{":
                    k, pos = dec.raw_decode(text, pos)
                    pos = skip(skip(pos) + 1)  # past the colon
                    hit = k == key
                else:
                    hit = i == key
                if hit:
                    break
                _, pos = dec.raw_decode(text, pos)
                pos = skip(pos)
                if text[pos] == ",":
                    pos = skip(pos + 1)
                i += 1
    except (IndexError, ValueError):
        pass
    return text.count("\n", 0, pos) + 1


def load_config(path: str | os.PathLike) -> dict:
    """Parse and schema-check a run file; errors name file and line."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            msgs.append(f"{path}:{_line_of(text, e.absolute_path)}: {where}: {e.message}")
        raise ConfigError("\n".join(msgs))
    _anchor_outputs(raw, Path(path).resolve().parent)
    _semantic_checks(raw, text, path)
    return raw


def _anchor_outputs(raw: dict, base: Path) -> None:
    """Relative output paths are taken relative to the config file."""
    outs = raw.get("outputs", {})
    for key in ("observables_csv", "summary_csv"):
        if key in outs:
            outs[key] = str(base / Path(outs[key]).expanduser())
    for d in outs.get("density_dumps", []):
        d["path"] = str(base / Path(d["path"]).expanduser())


def _semantic_checks(raw: dict, text: str, path) -> None:
    def fail(keys, msg):
        raise ConfigError(f"{path}:{_line_of(text, keys)}: {msg}")

    dim = raw["grid"]["dim"]
    every = raw.get("record_every", 1)
    step = raw["h_t"] * every
    for T in _as_list(raw["T"]):
        r = T / raw["h_t"]
        if abs(r - round(r)) > 1e-9 * max(1.0, r):
            fail(["T"], f"T={T} is not a multiple of h_t={raw['h_t']}")
    for i, term in enumerate(raw.get("potential", [])):
        if term["kind"] in ("harmonic_y", "cross_xy") and dim == 1:
            fail(["potential", i, "kind"], f"{term['kind']} needs dim 2")
        if term["kind"] == "sine_mod" and "q" not in term:
            fail(["potential", i, "kind"], "sine_mod needs q")
    for i, dump in enumerate(raw.get("outputs", {}).get("density_dumps", [])):
        r = dump["time"] / step
        if abs(r - round(r)) > 1e-9 * max(1.0, r):
            msg = f"time {dump['time']} is not a multiple of h_t*record_every={step}"
            fail(["outputs", "density_dumps", i, "time"], msg)
        if len(dump["window"]) not in (2, 2 * dim):
            fail(["outputs", "density_dumps", i, "window"], f"window needs 2 or {2 * dim} numbers")
    outs = raw.get("outputs", {})
    paths = [outs.get("observables_csv"), outs.get("summary_csv")] + [d["path"] for d in outs.get("density_dumps", [])]
    for p in filter(None, paths):
        parent = Path(p).expanduser().resolve().parent
        parent.mkdir(parents=True, exist_ok=True)
        if not os.access(parent, os.W_OK):
            fail(["outputs"], f"output directory {parent} is not writable")


def _as_list(v):
    return v if isinstance(v, list) else [v]


def expand_sweeps(raw: dict) -> list[dict]:
    """One config per point of the Cartesian product of list-valued fields."""
    axes = [(k, _as_list(raw[k])) for k in SWEEP_KEYS if k in raw]
    r_axis = _as_list(raw["grid"]["R"])
    runs = []
    for R in r_axis:
        for combo in itertools.product(*[v for _, v in axes]):
            cfg = copy.deepcopy(raw)
            cfg["grid"]["R"] = R
            cfg.update(dict(zip([k for k, _ in axes], combo)))
            runs.append(cfg)
    return runs


@dataclass
class Run:
    """A single expanded configuration, ready to execute."""

    raw: dict
    cfg: EvolutionConfig

    @property
    def grid(self) -> QuanticsGrid:
        return self.cfg.grid

    def initial_state(self):
        gauss = self.raw.get("initial_state", {}).get("gaussian", {})
        d = self.grid.dim
        center = gauss.get("center", [0.0] * d)
        k = gauss.get("k", 0.0)
        if len(center) != d or (isinstance(k, list) and len(k) != d):
            raise ConfigError(f"initial_state vectors need {d} components")
        return gaussian_state(self.grid, center, gauss.get("width", 1.0), k)


def build_run(raw: dict) -> Run:
    g = raw["grid"]
    grid = QuanticsGrid(g["dim"], g["R"], float(g["W"]), g.get("ordering", "interleaved"))
    kin = raw.get("kinetic", {})
    spec = KineticSpec(
        h_t=raw["h_t"],
        mass=kin.get("mass", 1.0),
        k_cut=min(kin.get("k_cut", 256), grid.L // 2),
        beta=kin.get("beta", 2.0),
        tol=kin.get("tol", raw.get("tol_build", 1e-10)),
    )
    terms = tuple(
        PotentialTerm(t["kind"], float(t["amplitude"]), tuple(t["q"]) if "q" in t else None)
        for t in raw.get("potential", [])
    )
    cfg = EvolutionConfig(
        grid=grid,
        h_t=float(raw["h_t"]),
        T=float(raw["T"]),
        g=float(raw.get("g", 0.0)),
        chi_max=raw.get("chi_max", 10),
        tol_nl=raw.get("tol_nl", 1e-10),
        tol_build=raw.get("tol_build", 1e-10),
        tol_trunc=raw.get("tol_trunc", 1e-12),
        kinetic=spec,
        potential=terms,
        record_every=raw.get("record_every", 1),
        calibrate=raw.get("calibrate", False),
        fit_sweeps=raw.get("fit_sweeps", 2),
        rng_seed=raw.get("rng_seed", 0),
    )
    return Run(raw, cfg)


# --------------------------------------------------------------------------
# CSV


def observable_header(dim: int) -> list[str]:
    cols = ["t", "norm", "max_bond", "nl_max_bond", "mean_x", "width_x"]
    return cols + (["mean_y", "width_y"] if dim == 2 else [])


def _fmt(v) -> str:
    # repr round-trips floats exactly
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def record_row(rec: ObservableRecord, dim: int) -> list[str]:
    row = [rec.t, rec.norm_before_renorm, rec.max_bond, rec.nl_max_bond, rec.mean_x, rec.width_x]
    if dim == 2:
        row += [rec.mean_y, rec.width_y]
    return [_fmt(v) for v in row]


def read_observables(path) -> list[ObservableRecord]:
    """Inverse of the observables writer."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                ObservableRecord(
                    t=float(row["t"]),
                    norm_before_renorm=float(row["norm"]),
                    max_bond=int(row["max_bond"]),
                    nl_max_bond=int(row["nl_max_bond"]),
                    mean_x=float(row["mean_x"]),
                    width_x=float(row["width_x"]),
                    mean_y=float(row["mean_y"]) if "mean_y" in row else None,
                    width_y=float(row["width_y"]) if "width_y" in row else None,
                )
            )
    return out


def write_density(path, grid: QuanticsGrid, coords: np.ndarray, dens: np.ndarray, t: float) -> None:
    names = ["x", "y"][: grid.dim]
    with open(path, "w", newline="") as fh:
        fh.write(f"# t={_fmt(t)} h_r={_fmt(grid.h_r)}\n")
        w = csv.writer(fh)
        w.writerow(names + ["density"])
        for c, v in zip(coords, dens):
            w.writerow([_fmt(x) for x in np.atleast_1d(c)] + [_fmt(v)])


def read_density(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    body = np.array(rows[1:], dtype=float)
    return body[:, :-1], body[:, -1]


def _suffixed(path: str, run: Run, multi: bool) -> str:
    if not multi:
        return path
    p = Path(path)
    c = run.cfg
    tag = f"R{c.grid.R}_T{c.T:g}_g{c.g:g}_chi{c.chi_max}"
    return str(p.with_name(f"{p.stem}_{tag}{p.suffix}"))


# --------------------------------------------------------------------------
# modes


def _mode_evolve(run: Run, multi: bool) -> dict:
    cfg, grid = run.cfg, run.grid
    outs = run.raw.get("outputs", {})
    dumps = {round(d["time"] / cfg.h_t): d for d in outs.get("density_dumps", [])}
    psi0 = run.initial_state()
    obs_path = outs.get("observables_csv")
    fh = open(_suffixed(obs_path, run, multi), "w", newline="") if obs_path else None
    writer = csv.writer(fh) if fh else None
    if writer:
        writer.writerow(observable_header(grid.dim))

    def dump(psi, step):
        d = dumps.get(step)
        if d is None:
            return
        win = d["window"]
        coords, dens = sample_density(psi, grid, [win[i : i + 2] for i in range(0, len(win), 2)], d["n_points"])
        write_density(_suffixed(d["path"], run, multi), grid, coords, dens, step * cfg.h_t)

    records = []

    def on_record(rec, state):
        records.append(rec)
        if writer:
            writer.writerow(record_row(rec, grid.dim))
            fh.flush()
        dump(state.psi, round(state.t / cfg.h_t))

    try:
        dump(psi0, 0)
        state, _ = evolve(psi0, cfg, callback=on_record)
    finally:
        if fh:
            fh.close()
    return {"t": state.t, "records": len(records)}


def _mode_forward_backward(run: Run, multi: bool) -> dict:
    psi0 = run.initial_state()
    eps, _ = forward_backward_error(psi0, run.cfg)
    c = run.cfg
    return {"T": c.T, "g": c.g, "chi": c.chi_max if c.chi_max is not None else "", "epsilon": eps}


def _mode_oracle_compare(run: Run, multi: bool) -> dict:
    cfg, grid = run.cfg, run.grid
    psi0 = run.initial_state()
    state, _ = evolve(psi0, cfg)
    dense = dense_evolve(DenseState.from_tt(psi0, grid), cfg)
    err = float(np.max(np.abs(DenseState.from_tt(state.psi, grid).density - dense.density)))
    chi = cfg.chi_max if cfg.chi_max is not None else ""
    return {"R": grid.R, "T": cfg.T, "g": cfg.g, "chi": chi, "max_density_error": err}


def bench_rows(rmin: int, rmax: int, chi: int, d: int = 1, time_steps: bool = False) -> list[dict]:
    """Memory of one state, dense vs train, over R; optionally a timed step."""
    rows = []
    for R in range(rmin, rmax + 1):
        dense_b, qtt_b = memory_report(R, d, chi)
        row = {"R": R, "d": d, "chi": chi, "dense_bytes": dense_b, "qtt_bytes": qtt_b, "wall_ms_per_step": ""}
        if time_steps:
            row["wall_ms_per_step"], row["peak_alloc_bytes"] = _time_step(R, d, chi)
        rows.append(row)
    return rows


def _time_step(R: int, d: int, chi: int) -> tuple[float, int]:
    """(wall ms, peak traced bytes) of one step on the benchmark trap at W=200."""
    grid = QuanticsGrid(d, R, 200.0)
    pot = (PotentialTerm("harmonic_x", 0.01 * 200.0**2), PotentialTerm("sine_mod", 10.0, (1e4,) + (0.0,) * (d - 1)))
    cfg = EvolutionConfig(grid=grid, h_t=0.01, T=0.02, g=5.0, chi_max=chi, potential=pot)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PotentialWarning)
        ops = build_operators(cfg)
    state = GPState(gaussian_state(grid), peak=None)
    state, _ = trotter_step(state, ops, cfg, trailing=False)
    t0 = time.perf_counter()
    trotter_step(state, ops, cfg, leading=False, trailing=False)
    ms = (time.perf_counter() - t0) * 1e3
    tracemalloc.start()
    trotter_step(state, ops, cfg, leading=False, trailing=False)
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    return round(ms, 3), peak


def _mode_memory_bench(run: Run, multi: bool) -> dict:
    b = run.raw.get("bench", {})
    rows = bench_rows(b.get("rmin", 10), b.get("rmax", 30), b.get("chi", 10), run.grid.dim, b.get("time_steps", False))
    return {"rows": rows}


_MODES = {
    "evolve": _mode_evolve,
    "forward_backward": _mode_forward_backward,
    "oracle_compare": _mode_oracle_compare,
    "memory_bench": _mode_memory_bench,
}


def _execute(args) -> tuple[str, dict | None, str | None, float | None]:
    raw, multi = args
    mode = raw.get("mode", "evolve")
    try:
        run = build_run(raw)
        return mode, _MODES[mode](run, multi), None, None
    except IntegrationError as exc:
        return mode, None, str(exc), exc.last_good_time if exc.last_good_time is not None else 0.0
    except (DenseCapError, CalibrationError) as exc:
        return mode, None, str(exc), 0.0


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _write_summary(path, results: list[dict]) -> None:
    if path is None:
        w = csv.DictWriter(sys.stdout, fieldnames=list(results[0]), lineterminator="\n")
        w.writeheader()
        w.writerows({k: _fmt(v) for k, v in r.items()} for r in results)
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(results[0]))
        w.writeheader()
        w.writerows({k: _fmt(v) for k, v in r.items()} for r in results)


# --------------------------------------------------------------------------
# commands


def cmd_run(config_path) -> int:
    try:
        raw = load_config(config_path)
        runs = expand_sweeps(raw)
        for r in runs:
            build_run(r)  # surface value errors before any work starts
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    jobs = [(r, len(runs) > 1) for r in runs]
    n = _workers()
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_execute, jobs))
    else:
        results = [_execute(j) for j in jobs]
    summary, failed = [], None
    for mode, res, err, last_good in results:
        if err is not None:
            failed = failed or (err, last_good)
            continue
        if mode == "memory_bench":
            summary.extend(res["rows"])
        elif mode != "evolve":
            summary.append(res)
    if summary:
        _write_summary(raw.get("outputs", {}).get("summary_csv"), summary)
    if failed:
        print(f"error: {failed[0]} (last good record t={failed[1]:g})", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def validation_warnings(run: Run) -> list[str]:
    """Physics sanity checks for one expanded run."""
    cfg, grid = run.cfg, run.grid
    out = []
    for term in cfg.potential:
        if term.kind == "sine_mod":
            lam = math.pi / float(np.linalg.norm(term.q))  # period of sin^2
            if grid.h_r > 1e-2 * lam:
                out.append(
                    f"h_r={grid.h_r:.3g} is not << lambda={lam:.3g} of the q={term.q} modulation "
                    f"(rule of thumb h_r <= 1e-2 lambda; need R >= {math.ceil(math.log2(2 * grid.W / (1e-2 * lam)))})"
                )
    vmax = _max_abs_potential(cfg.potential, grid)
    if vmax * cfg.h_t > 1:
        out.append(f"|V h_t| reaches {vmax * cfg.h_t:.3g} > 1; reduce h_t")
    return out


def _max_abs_potential(terms, grid: QuanticsGrid) -> float:
    # every term is bounded by |A| on [-W, W)^d
    return float(sum(abs(t.amplitude) for t in terms))


def kcut_preview(run: Run) -> str:
    cfg, grid = run.cfg, run.grid
    if grid.n_sites > 24:
        return f"k_cut={cfg.kinetic.k_cut} (calibration preview skipped above 2^24 points)"
    try:
        k = calibrate_kcut(grid, cfg.kinetic, run.initial_state(), start=min(cfg.kinetic.k_cut, grid.L // 2))
    except CalibrationError as exc:
        return f"k_cut calibration failed: {exc}"
    return f"k_cut calibrated to {k} (configured {cfg.kinetic.k_cut})"


def cmd_validate(config_path, preview: bool = True) -> int:
    try:
        raw = load_config(config_path)
        runs = [build_run(r) for r in expand_sweeps(raw)]
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seen = set()
    for run in runs:
        for w in validation_warnings(run):
            if w not in seen:
                seen.add(w)
                print(f"warning: {w}", file=sys.stderr)
    if preview and raw.get("mode", "evolve") != "memory_bench":
        print(kcut_preview(runs[0]))
    print(f"ok: {len(runs)} run(s)")
    return EXIT_OK


def cmd_bench_memory(rmin: int, rmax: int, chi: int, d: int = 1, time_steps: bool = False, out=None) -> int:
    if rmin > rmax:
        print("error: rmin > rmax", file=sys.stderr)
        return EXIT_CONFIG
    rows = bench_rows(rmin, rmax, chi, d, time_steps)
    _write_summary(out, rows)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qttgp", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="execute a JSON run file")
    p.add_argument("config")
    p = sub.add_parser("validate", help="schema and physics checks")
    p.add_argument("config")
    p.add_argument("--no-preview", action="store_true", help="skip the k_cut calibration preview")
    p = sub.add_parser("bench", help="benchmarks")
    bsub = p.add_subparsers(dest="bench", required=True)
    m = bsub.add_parser("memory", help="dense vs train memory per state")
    m.add_argument("--rmin", type=int, default=10)
    m.add_argument("--rmax", type=int, default=30)
    m.add_argument("--chi", type=int, default=10)
    m.add_argument("--dim", type=int, choices=(1, 2), default=1)
    m.add_argument("--time", action="store_true", help="also time one step and record peak allocation")
    m.add_argument("-o", "--output")
    args = parser.parse_args(argv)
    with warnings.catch_warnings():
        warnings.simplefilter("default", PotentialWarning)
        if args.cmd == "run":
            return cmd_run(args.config)
        if args.cmd == "validate":
            return cmd_validate(args.config, preview=not args.no_preview)
        return cmd_bench_memory(args.rmin, args.rmax, args.chi, args.dim, args.time, args.output)


if __name__ == "__main__":
    sys.exit(main())
