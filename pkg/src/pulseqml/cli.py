"""Command-line entry point.

Subcommands::

    pulseqml lie      --model builtin:4 --n 3
    pulseqml express  --model builtin:eq13 --initial 00 --cutoff 8
    pulseqml train    --model builtin:eq13 --target eq14 --T 20 --iters 5000
    pulseqml sweep    fig4a --models 2,4 --n-range 2:3
    pulseqml export   --model builtin:3 --n 4 --out model3.json

Every command writes its outputs plus ``manifest.json`` into a run directory
``<outdir>/<command>-<config hash>``; the output root defaults to
``$PULSEQML_OUTDIR`` or ``./runs``. Exit status: 0 success/pass, 1 error,
2 diagnostic failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, express, lie, model, sim, train
from .model import ModelSpec

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAIL = 2

OUTDIR_ENV = "PULSEQML_OUTDIR"

log = logging.getLogger("pulseqml")


class CLIError(Exception):
    pass


# ---------------------------------------------------------------------------
# run bookkeeping


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: Optional[int]
    version: str = __version__
    started: str = ""
    finished: str = ""
    outputs: list[str] = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        return config_hash({"command": self.command, **self.config})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config_hash"] = self.config_hash
        return d


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Run:
    """Run directory plus manifest; files are written atomically."""

    def __init__(self, command: str, config: dict, seed: Optional[int], outdir: Optional[str]):
        self.manifest = RunManifest(command, config, seed, started=_now())
        root = Path(outdir or os.environ.get(OUTDIR_ENV) or "runs")
        self.dir = root / f"{command}-{self.manifest.config_hash[:12]}"
        self.dir.mkdir(parents=True, exist_ok=True)

    def write_text(self, name: str, text: str) -> Path:
        path = self.dir / name
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=f".{name}.")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
        if name not in self.manifest.outputs:
            self.manifest.outputs.append(name)
        return path

    def write_csv(self, name: str, header: Sequence[str], rows) -> Path:
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_fmt(v) for v in row))
        return self.write_text(name, "\n".join(lines) + "\n")

    def close(self) -> Path:
        self.manifest.finished = _now()
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(self.manifest.to_dict(), indent=2, default=str) + "\n")
        return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return "" if v is None else str(v)


# ---------------------------------------------------------------------------
# model and dataset arguments


def load_model(ref: str, n: Optional[int] = None, initial: str = "paper", T: Optional[float] = None,
               dt: float = 0.1, free_encoding: Optional[bool] = None) -> ModelSpec:
    """``builtin:<id>`` or a path to a model file."""
    if ref.startswith("builtin:") or ref in ("eq13", "eq15", "1", "2", "3", "4"):
        spec = model.paper_model(ref, n=n, T=T if T is not None else 1.0, dt=dt, initial=initial,
                                 free_encoding=free_encoding)
    else:
        path = Path(ref)
        if not path.exists():
            raise CLIError(f"model file {ref} not found")
        spec = model.load(path)
        if T is not None:
            spec = spec.with_duration(T, dt)
    return spec


def parse_freeze(text: Optional[str], spec: ModelSpec) -> ModelSpec:
    """``"0,1=1"`` (channel indices) or ``"theta1,theta2=1"`` (1-based names) -> frozen pulses."""
    if not text:
        return spec
    names, _, value = text.partition("=")
    val = float(value) if value else None
    chans = []
    for tok in names.split(","):
        tok = tok.strip()
        low = tok.lower()
        for prefix in ("theta", "θ"):
            if low.startswith(prefix):
                chans.append(int(low[len(prefix):]) - 1)
                break
        else:
            chans.append(int(tok))
    sched = spec.schedule
    amps = sched.amplitudes.copy()
    tun = np.array(np.broadcast_to(sched.tunable, amps.shape))
    for c in chans:
        if not 0 <= c < spec.n_channels:
            raise CLIError(f"cannot freeze channel {c}: model has {spec.n_channels}")
        if val is not None:
            amps[c] = val
        tun[c] = False
    return spec.with_schedule(model.PulseSchedule(sched.dt, amps, tun, sched.bounds))


def load_dataset(target: str, points: Optional[list[int]]) -> train.Dataset:
    if Path(target).suffix == ".csv" or Path(target).exists():
        return train.Dataset.from_csv(target)
    if points is None:
        points = [200] if target != "eq17" else [50]
    pts = points[0] if len(points) == 1 else points
    return train.make_dataset(target, pts)


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if ":" in part:
            a, b = part.split(":")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


# ---------------------------------------------------------------------------
# lie


def cmd_lie(args) -> int:
    spec = load_model(args.model, args.n)
    run = Run("lie", {"model": args.model, "n": args.n, "max_dim": args.max_dim, "seed": args.seed}, args.seed, args.outdir)
    try:
        basis = lie.algebra_of(spec, max_dim=args.max_dim)
    except lie.MaxDimExceeded as exc:
        print(f"error: {exc}; the algebra is larger than the cap, so the model is likely close to fully "
              f"controllable (su(2^n)) and its variance decays exponentially", file=sys.stderr)
        run.close()
        return EXIT_ERROR
    dec = lie.decompose(basis, seed=args.seed)
    report = lie.variance_exact(spec, dec)
    print(f"model: {spec.name} n={spec.n}")
    print(f"dim: {basis.dim}")
    print(f"decomposition: center={dec.center.dim} ideals={list(dec.dims)}")
    print(report.to_text())
    run.write_text("variance.csv", report.to_text() + "\n")
    run.write_text("summary.json", json.dumps({
        "model": spec.name, "n": spec.n, "dim": basis.dim, "center_dim": dec.center.dim,
        "ideal_dims": list(dec.dims), "variance": report.total,
        "rho_in_algebra": report.rho_in_algebra, "observable_in_algebra": report.obs_in_algebra,
    }, indent=2) + "\n")
    run.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# express


def cmd_express(args) -> int:
    if args.cutoff < 0:
        raise CLIError("--cutoff must be non-negative")
    spec = load_model(args.model, args.n, initial=args.initial)
    cfg = {"model": args.model, "n": args.n, "initial": args.initial, "cutoff": args.cutoff, "tol": args.tol,
           "literal": args.literal, "dyson_crosscheck": args.dyson_crosscheck, "seed": args.seed}
    run = Run("express", cfg, args.seed, args.outdir)
    report = express.check(spec, cutoff=args.cutoff, tol=args.tol, literal=args.literal,
                           dyson_crosscheck=args.dyson_crosscheck, seed=args.seed)
    print(report.to_table())
    run.write_text("report.json", json.dumps(report.to_dict(), indent=2) + "\n")
    run.close()
    return EXIT_OK if report.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    data = load_dataset(args.target, args.points)
    if data.N == 0:
        raise CLIError("dataset is empty")
    free = None if not args.free_encoding else True
    spec = load_model(args.model, args.n, initial=args.initial, T=args.T, dt=args.dt, free_encoding=free)
    spec = parse_freeze(args.freeze, spec)
    cfg = train.TrainConfig(learning_rate=args.lr, max_iters=args.iters, backend=args.backend,
                            target_loss=args.target_loss, seed=args.seed)
    config = {"model": args.model, "n": args.n, "initial": args.initial, "T": args.T, "dt": args.dt,
              "target": args.target, "points": args.points, "freeze": args.freeze,
              "free_encoding": args.free_encoding, **asdict(cfg)}
    run = Run("train", config, args.seed, args.outdir)
    rec = train.fit(spec, data, cfg)
    run.write_csv("loss.csv", ["iteration", "loss"], enumerate(rec.losses))
    fitted = train.fitted_curve(rec.spec, data.inputs)
    head = [f"x{i + 1}" for i in range(data.m)] + ["target", "fitted"]
    run.write_csv("fit.csv", head, (list(x) + [y, f] for x, y, f in zip(data.inputs, data.targets, fitted)))
    amps = rec.spec.schedule.amplitudes
    times = rec.spec.schedule.times[:-1]  # segment start times
    run.write_csv("pulses.csv", ["t"] + [f"channel{c}" for c in range(amps.shape[0])],
                  (np.concatenate([[t], amps[:, k]]) for k, t in enumerate(times)))
    run.write_text("model.json", model.dumps(rec.spec) + "\n")
    print(f"final loss {rec.final_loss:.6g} after {rec.iterations} iterations "
          f"(scale {rec.scale:.6g}); outputs in {run.dir}")
    run.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def t_grid(lo: float = 0.5, hi: float = 40.0, count: int = 12, dt: float = 0.1) -> list[float]:
    """Geometric grid rounded to whole segments."""
    raw = np.geomspace(lo, hi, count)
    ks = sorted({max(1, int(round(t / dt))) for t in raw})
    return [k * dt for k in ks]


def _cell_seed(seed: int, model_id: str, n: int) -> int:
    h = hashlib.sha256(f"{seed}:{model_id}:{n}".encode()).digest()
    return int.from_bytes(h[:4], "little")


def _fig4a_cell(job: dict) -> dict:
    data = train.make_dataset(job["target"], job["points"])
    best_overall = np.inf
    for T in job["grid"]:
        spec = model.paper_model(job["model"], n=job["n"], T=T)
        cfg = train.TrainConfig(max_iters=job["iters"], target_loss=job["threshold"], seed=job["cell_seed"],
                                backend=job["backend"])
        rec = train.fit(spec, data, cfg)
        best = float(min(rec.losses.min(), rec.final_loss))
        best_overall = min(best_overall, best)
        if best <= job["threshold"]:
            return {**_cell_key(job), "min_T": T, "best_loss": best, "reached": True}
    return {**_cell_key(job), "min_T": None, "best_loss": best_overall, "reached": False}


def _cell_key(job: dict) -> dict:
    return {"model": job["model"], "n": job["n"], "seed": job["seed"]}


def _fig4b_cell(job: dict) -> dict:
    data = train.make_dataset(job["target"], job["points"])
    spec = model.paper_model(job["model"], n=job["n"], T=job["T0"])

    def loss_stat(s, _x, amps):
        f = np.stack([sim.measure_schedules(s, xx, amps) for xx in data.inputs], axis=1)
        return np.mean((f - data.targets) ** 2, axis=1)

    res = lie.variance_stationary(spec, draws=job["draws"], T0=job["T0"], T_max=job["T_max"],
                                  seed=job["cell_seed"], statistic=loss_stat)
    trace = ";".join(f"{T:.6g}:{v:.6g}" for T, v in res.trace)
    return {**_cell_key(job), "variance": res.variance, "T": res.T, "stationary": res.stationary, "trace": trace}


def cmd_sweep(args) -> int:
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    ns = _int_list(args.n_range)
    seeds = _int_list(args.seeds)
    grid = _float_list(args.t_grid) if args.t_grid else t_grid(args.t_min, args.t_max, args.t_count)
    cfg = {"experiment": args.experiment, "models": models, "n": ns, "seeds": seeds, "backend": args.backend,
           "target": args.target}
    if args.experiment == "fig4a":
        cfg.update(grid=grid, threshold=args.threshold, iters=args.iters, points=args.points)
    else:
        cfg.update(draws=args.draws, T0=args.T0, T_max=args.variance_T_max, points=args.points)
    run = Run(f"sweep-{args.experiment}", cfg, seeds[0] if seeds else None, args.outdir)
    jobs = []
    for mid in models:
        for n in ns:
            for seed in seeds:
                job = {**cfg, "model": mid, "n": n, "seed": seed, "cell_seed": _cell_seed(seed, mid, n)}
                jobs.append(job)
    work = _fig4a_cell if args.experiment == "fig4a" else _fig4b_cell
    results = _run_cells(work, jobs, args.jobs)
    if args.experiment == "fig4a":
        header = ["model", "n", "seed", "min_T", "best_loss", "reached", "error"]
    else:
        header = ["model", "n", "seed", "variance", "T", "stationary", "trace", "error"]
    rows = [[r[h] for h in header] for r in results]
    run.write_csv("summary.csv", header, rows)
    for r in rows:
        print(",".join(_fmt(v) for v in r))
    run.close()
    return EXIT_OK


def _run_cells(work, jobs: list[dict], workers: int) -> list[dict]:
    def safe(job):
        try:
            return work(job)
        except Exception as exc:  # a failed cell is recorded, not fatal
            log.warning("cell %s failed: %s", _cell_key(job), exc)
            return {**_cell_key(job), "error": str(exc)}

    if workers <= 1:
        results = [safe(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(work, j) for j in jobs]
            results = []
            for j, fut in zip(jobs, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:
                    results.append({**_cell_key(j), "error": str(exc)})
    out = []
    for r in results:
        out.append({k: r.get(k) for k in ("model", "n", "seed", "min_T", "best_loss", "reached", "variance", "T",
                                          "stationary", "trace", "error")})
    return out


# ---------------------------------------------------------------------------
# export


def cmd_export(args) -> int:
    spec = load_model(args.model, args.n, initial=args.initial, T=args.T, dt=args.dt)
    text = model.dumps(spec) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_model_args(p: argparse.ArgumentParser, with_initial: bool = True) -> None:
    p.add_argument("--model", required=True, help="builtin:<eq13|eq15|1|2|3|4> or a model file")
    p.add_argument("--n", type=int, default=None, help="qubit count for builtin models 1-4")
    if with_initial:
        p.add_argument("--initial", choices=sorted(model.EQ13_STATES), default="paper",
                       help="initial state of the eq13 model")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pulseqml", description=__doc__.splitlines()[0])
    parser.add_argument("--outdir", default=None, help=f"output root (default ${OUTDIR_ENV} or ./runs)")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lie", help="dynamical Lie algebra, decomposition and exact variance")
    _add_model_args(p, with_initial=False)
    p.add_argument("--max-dim", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_lie)

    p = sub.add_parser("express", help="check the necessary expressivity condition per monomial")
    _add_model_args(p)
    p.add_argument("--cutoff", type=int, default=express.DEFAULT_CUTOFF)
    p.add_argument("--tol", type=float, default=express.DEFAULT_TOL)
    p.add_argument("--literal", action="store_true", help="require every word to contribute")
    p.add_argument("--dyson-crosscheck", action="store_true", help="add the Dyson coefficient column")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_express)

    p = sub.add_parser("train", help="fit pulses to a target function")
    _add_model_args(p)
    p.add_argument("--target", default="eq14", help="eq14, eq17, an expression in x or x1..xm, or a CSV file")
    p.add_argument("--points", type=_int_list, default=None, help="grid points per input, e.g. 200 or 50,50")
    p.add_argument("--T", type=float, default=None, help="pulse duration")
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--target-loss", type=float, default=0.0)
    p.add_argument("--backend", choices=["exact", "fd"], default="exact")
    p.add_argument("--freeze", default=None, help="freeze channels, e.g. '0,1=1' or 'theta1,theta2=1'")
    p.add_argument("--free-encoding", action="store_true", help="also train the encoding pulses")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="scripted expressivity / trainability sweeps")
    p.add_argument("experiment", choices=["fig4a", "fig4b"])
    p.add_argument("--models", default="1,2,3,4")
    p.add_argument("--n-range", default="2:3", help="e.g. 2:6 or 2,3")
    p.add_argument("--seeds", default="0")
    p.add_argument("--target", default="eq14", help="univariate target (eq14 or an expression in x)")
    p.add_argument("--points", type=int, default=200, help="grid points of the univariate target")
    p.add_argument("--threshold", type=float, default=1e-3)
    p.add_argument("--iters", type=int, default=500, help="Adam iterations per duration")
    p.add_argument("--t-min", type=float, default=0.5)
    p.add_argument("--t-max", type=float, default=40.0)
    p.add_argument("--t-count", type=int, default=12)
    p.add_argument("--t-grid", default=None, help="explicit comma-separated durations")
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--T0", type=float, default=5.0)
    p.add_argument("--variance-T-max", type=float, default=80.0)
    p.add_argument("--backend", choices=["exact", "fd"], default="exact")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export", help="write a builtin model to the model-file format")
    _add_model_args(p)
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CLIError, model.ModelError, ValueError, train.TrainingDiverged, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
