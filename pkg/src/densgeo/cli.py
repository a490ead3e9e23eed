"""Command-line front end.

    densgeo generate --kind random --count 10 --seed 7 --out data/
    densgeo reverse data/targets/random_00000.pgm --method fit --out rec/
    densgeo evaluate data/ --method fit --out eval/
    densgeo compare data/ --out cmp/
    densgeo sweep data/targets/random_00000.pgm --out sweep/
    densgeo render rec/components.json --out rec/render.pgm

Settings come from an INI file (``--config``) with sections ``[projection]``,
``[fit]``, ``[simp]``, ``[run]`` and ``[sweep]``; command-line flags override
it.  Every output directory receives the effective configuration as
``config.ini``.  Log verbosity follows ``DENSGEO_LOG`` (default WARNING).
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import mmc
from .boundary import BoundaryConditions
from .datagen import KINDS, SimpOptions, generate_dataset, read_manifest
from .errors import DensGeoError
from .evaluation import EvalReport, aggregate, evaluate, reports_csv, summary_csv
from .fitter import FitOptions
from .mmc import ProjectionParams
from .pipeline import METHODS, render_binary, reverse_engineer
from .raster import GridSpec, atomic_write, binarize, load_grid, save_grid
from .skeleton import save_skeleton

log = logging.getLogger("densgeo")


class UsageError(Exception):
    """Bad arguments or configuration; exit code 2."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    jobs: int = 1
    threshold: float = 0.5
    grid: int = 128


@dataclasses.dataclass(frozen=True)
class SweepSettings:
    nms_thresholds: tuple = (0.8, 0.9, 0.95)
    prune_tolerances: tuple = (1e-4, 1e-3, 1e-2)


SECTIONS = {
    "projection": ProjectionParams,
    "fit": FitOptions,
    "simp": SimpOptions,
    "run": RunSettings,
    "sweep": SweepSettings,
}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    projection: ProjectionParams = ProjectionParams()
    fit: FitOptions = FitOptions()
    simp: SimpOptions = SimpOptions()
    run: RunSettings = RunSettings()
    sweep: SweepSettings = SweepSettings()


def _coerce(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.replace(" ", "").split(",") if v)
    except ValueError:
        raise UsageError(f"{where}: cannot parse {raw!r}") from None
    return raw


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def load_config(path: str | None) -> RunConfig:
    """Parse an INI file into a :class:`RunConfig`; unknown sections or keys are errors."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for section in parser.sections():
        if section not in SECTIONS:
            raise UsageError(f"{path}: unknown section [{section}]")
        current = getattr(cfg, section)
        fields = {f.name for f in dataclasses.fields(current)}
        updates = {}
        for key, raw in parser.items(section):
            if key not in fields:
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
            updates[key] = _coerce(raw, getattr(current, key), f"{path} [{section}] {key}")
        try:
            cfg = dataclasses.replace(cfg, **{section: dataclasses.replace(current, **updates)})
        except (ValueError, TypeError) as exc:
            raise UsageError(f"{path} [{section}]: {exc}") from None
    return cfg


def config_text(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section in SECTIONS:
        obj = getattr(cfg, section)
        parser[section] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    run = cfg.run
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        updates["jobs"] = args.jobs
    if getattr(args, "threshold", None) is not None:
        if not 0.0 <= args.threshold <= 1.0:
            raise UsageError("--threshold must lie in [0, 1]")
        updates["threshold"] = args.threshold
    return dataclasses.replace(cfg, run=dataclasses.replace(run, **updates))


def _prepare_out(out: Path, cfg: RunConfig) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.ini", config_text(cfg).encode())
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("densgeo").addHandler(handler)
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_generate(args, cfg: RunConfig) -> int:
    if args.kind is None or args.count is None:
        raise UsageError("generate needs --kind and --count")
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    out = _prepare_out(Path(args.out), cfg)
    spec = GridSpec(cfg.run.grid, cfg.run.grid)
    man = generate_dataset(args.kind, args.count, cfg.run.seed, out, jobs=cfg.run.jobs,
                           simp_opts=cfg.simp, spec=spec, p=cfg.projection)
    print(f"{len(man.rows)} samples written to {man.path}")
    if man.failures:
        print(f"{len(man.failures)} samples failed; see {out / 'failures.csv'}", file=sys.stderr)
        return 1
    return 0


def _load_target(path: Path, threshold: float, bc: BoundaryConditions | None = None):
    kw = {} if bc is None else {"w": bc.domain_w, "h": bc.domain_h}
    return binarize(load_grid(path, **kw), threshold)


def cmd_reverse(args, cfg: RunConfig) -> int:
    if args.input is None:
        raise UsageError("reverse needs an input grid")
    method = args.method[0] if args.method else "fit"
    target = _load_target(Path(args.input), cfg.run.threshold)
    out = _prepare_out(Path(args.out), cfg)
    rec = reverse_engineer(target, method, cfg.projection, cfg.fit)
    p = cfg.projection
    mmc.save_components(out / "components.json", rec.components, p,
                        {"method": rec.method, "dice": rec.dice, "source": str(args.input)})
    save_skeleton(out / "skeleton.json", rec.skeleton)
    save_grid(render_binary(rec.components, p, target.spec), out / "reconstruction.pgm", "pgm")
    if rec.fit is not None:
        atomic_write(out / "fit.json", (json.dumps(rec.fit.to_dict(p), indent=2) + "\n").encode())
    print(f"{method}: {len(rec.components)} components, dice {rec.dice:.4f}")
    return 0


def _evaluate_sample(task):
    root, row, methods, cfg = task
    bc = None
    if row["bc_path"] != "-":
        with open(root / row["bc_path"]) as fh:
            bc = BoundaryConditions.from_dict(json.load(fh))
    target = _load_target(root / row["target_path"], cfg.run.threshold, bc)
    out = []
    for method in methods:
        rec = reverse_engineer(target, method, cfg.projection, cfg.fit)
        rep = evaluate(target, rec.components, bc, cfg.projection)
        out.append((method, rep))
    return out


def _run_evaluation(args, cfg: RunConfig, methods) -> int:
    root = Path(args.dataset)
    try:
        rows = read_manifest(root / "manifest.csv")
    except OSError as exc:
        raise DensGeoError(f"cannot read manifest: {exc}") from None
    if not rows:
        raise DensGeoError(f"{root / 'manifest.csv'} lists no samples")
    out = _prepare_out(Path(args.out), cfg)
    tasks = [(root, row, methods, cfg) for row in rows]
    results = []
    if cfg.run.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.jobs) as pool:
            futures = [pool.submit(_evaluate_sample, t) for t in tasks]
            for f in futures:
                try:
                    results.append(f.result())
                except (DensGeoError, OSError, ValueError) as exc:
                    results.append(exc)
    else:
        for t in tasks:
            try:
                results.append(_evaluate_sample(t))
            except (DensGeoError, OSError, ValueError) as exc:
                results.append(exc)
    report_rows, per_method = [], {m: [] for m in methods}
    nan = math.nan
    for row, res in zip(rows, results):
        if isinstance(res, Exception):
            log.warning("sample %s failed: %s", row["id"], res)
            for m in methods:
                report_rows.append(EvalReport(nan, nan, nan, nan, {}).row(row["id"], m)
                                   | {"connected_support": "", "connected_load": ""})
            continue
        for m, rep in res:
            per_method[m].append(rep)
            report_rows.append(rep.row(row["id"], m))
    atomic_write(out / "reports.csv", reports_csv(report_rows))
    summaries = []
    for m in methods:
        if per_method[m]:
            summaries.append(aggregate(per_method[m]).row(m))
    if not summaries:
        raise DensGeoError("every sample failed; no summary produced")
    atomic_write(out / "summary.csv", summary_csv(summaries))
    for s in summaries:
        print(f"{s['method']}: n={s['count']} mean dice {float(s['mean_dice']):.4f} "
              f"mean dV {float(s['mean_vol_delta_pct']):.2f}% "
              f"median dC {float(s['median_comp_delta_pct']):.2f}%")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    if args.dataset is None:
        raise UsageError("evaluate needs a dataset directory")
    return _run_evaluation(args, cfg, [args.method[0] if args.method else "fit"])


def cmd_compare(args, cfg: RunConfig) -> int:
    if args.dataset is None:
        raise UsageError("compare needs a dataset directory")
    methods = list(dict.fromkeys(args.method)) if args.method else ["skeleton", "fit"]
    return _run_evaluation(args, cfg, methods)


def cmd_sweep(args, cfg: RunConfig) -> int:
    if args.input is None:
        raise UsageError("sweep needs an input grid")
    target = _load_target(Path(args.input), cfg.run.threshold)
    out = _prepare_out(Path(args.out), cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["nms_dice_threshold", "prune_tolerance", "components", "dice", "status"])
    for nms in cfg.sweep.nms_thresholds:
        for tol in cfg.sweep.prune_tolerances:
            try:
                opts = dataclasses.replace(cfg.fit, nms_dice_threshold=nms, prune_tolerance=tol)
                rec = reverse_engineer(target, "fit", cfg.projection, opts)
                w.writerow([repr(nms), repr(tol), len(rec.components), repr(rec.dice), "ok"])
            except (DensGeoError, ValueError) as exc:
                log.warning("sweep cell (%g, %g) failed: %s", nms, tol, exc)
                w.writerow([repr(nms), repr(tol), "", "", "failed"])
    atomic_write(out / "sweep.csv", buf.getvalue().encode())
    print(f"sweep written to {out / 'sweep.csv'}")
    return 0


def cmd_render(args, cfg: RunConfig) -> int:
    if args.input is None:
        raise UsageError("render needs a component-set JSON file")
    try:
        s, p = mmc.load_components(args.input)
    except (OSError, json.JSONDecodeError) as exc:
        raise DensGeoError(f"cannot read {args.input}: {exc}") from None
    grid = mmc.render_set(s, p)
    if args.threshold is not None:
        grid = binarize(grid, cfg.run.threshold)
    out = Path(args.out)
    if out.suffix.lower() not in (".pgm", ".csv"):
        _prepare_out(out, cfg)
        out = out / "render.pgm"
    else:
        _prepare_out(out.parent if str(out.parent) else Path("."), cfg)
    save_grid(grid, out)
    print(f"rendered {len(s)} components to {out}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "reverse": cmd_reverse,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "render": cmd_render,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="densgeo", description="Density grids to parametric components.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="INI file with [projection], [fit], [simp], [run], [sweep]")
        p.add_argument("--out", required=out_required, help="output directory (or file for render)")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--threshold", type=float, help="binarization level (default 0.5)")
        return p

    g = common(sub.add_parser("generate", help="write a dataset of targets"))
    g.add_argument("--kind", choices=KINDS)
    g.add_argument("--count", type=int)
    for name, helptext in (("reverse", "reverse engineer one grid"),
                           ("sweep", "fit one grid over a threshold grid"),
                           ("render", "rasterize a component-set JSON file")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("input")
        if name == "reverse":
            p.add_argument("--method", action="append", choices=METHODS)
    for name, helptext in (("evaluate", "evaluate one method on a dataset"),
                           ("compare", "evaluate several methods on a dataset")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("dataset")
        p.add_argument("--method", action="append", choices=METHODS)
    return ap


def _setup_logging() -> None:
    level = os.environ.get("DENSGEO_LOG", "WARNING").upper()
    root = logging.getLogger("densgeo")
    root.setLevel(getattr(logging, level, logging.WARNING))
    if not any(isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
               for h in root.handlers):
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(h)


def _error_line(kind: str, exc: BaseException) -> None:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        cfg = _apply_flags(load_config(args.config), args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _error_line("usage", exc)
        return 2
    except (DensGeoError, OSError, ValueError) as exc:
        _error_line("runtime", exc)
        return 1
    finally:
        for h in list(logging.getLogger("densgeo").handlers):
            if isinstance(h, logging.FileHandler):
                h.close()
                logging.getLogger("densgeo").removeHandler(h)


if __name__ == "__main__":
    sys.exit(main())
