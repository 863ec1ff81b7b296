"""Command-line driver: ``adacoarse {run,verify,stats,dump-map}``."""
import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import verify as verify_mod
from .coarsen import write_map_csv
from .config import ConfigError, load_scene
from .errors import InfeasibleStateError, MeshError, NewtonConvergenceError, SolverError
from .stepper import MODES, Simulator

STATS_COLUMNS = ["step", "iter", "n3", "n12", "coarse_dof", "active_ratio",
                 "pcg_iters", "post_iters", "energy", "‖d‖∞"]

log = logging.getLogger("adacoarse")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(int(v))


def stats_row(s):
    return [_fmt(v) for v in (s.step, s.iter, s.n3, s.n12, s.coarse_dof, s.active_ratio,
                              s.pcg_iters, s.post_iters, s.energy, s.dinf)]


def write_frame(path, mesh, x):
    with open(path, "w") as fh:
        for p in np.asarray(x, dtype=float).tolist():
            fh.write(f"v {p[0]!r} {p[1]!r} {p[2]!r}\n")
        if mesh.kind == "edge":
            for a, b in (mesh.elements + 1).tolist():
                fh.write(f"l {a} {b}\n")
        else:
            faces = mesh.surface if mesh.kind == "tet" else mesh.elements
            for a, b, c in (faces + 1).tolist():
                fh.write(f"f {a} {b} {c}\n")


def _load(args):
    return load_scene(args.config, mode=args.mode, workers=args.workers, output_dir=args.out)


def _simulator(scene):
    sim = Simulator(scene.mesh, scene.materials, scene.barrier, scene.step_config,
                    element_material=scene.element_material)
    state = sim.initial_state(scene.x0, scene.v0, scene.pinned)
    return sim, state


def summarize(rows):
    """Table-style summary from stats rows (dicts of strings or numbers)."""
    if not rows:
        return {"newton_iters": 0, "pcg_iters": 0, "post_iters": 0,
                "mean_n3": float("nan"), "mean_n12": float("nan"), "mean_active_ratio": float("nan")}
    col = lambda k: np.array([float(r[k]) for r in rows])
    return {
        "newton_iters": len(rows),
        "pcg_iters": int(col("pcg_iters").sum()),
        "post_iters": int(col("post_iters").sum()),
        "mean_n3": float(col("n3").mean()),
        "mean_n12": float(col("n12").mean()),
        "mean_active_ratio": float(col("active_ratio").mean()),
    }


def format_summary(summary):
    head = f"{'avg#3DoF':>10} {'avg#12DoF':>10} {'ratio':>7} {'TotalNewtonIter':>16} {'TotalPCGIter':>13}"
    row = (f"{summary['mean_n3']:>10.1f} {summary['mean_n12']:>10.1f} {summary['mean_active_ratio']:>7.3f} "
           f"{summary['newton_iters']:>16d} {summary['pcg_iters']:>13d}")
    return head + "\n" + row


def cmd_run(args):
    scene = _load(args)
    out = scene.output_dir
    out.mkdir(parents=True, exist_ok=True)
    sim, state = _simulator(scene)
    write_frame(out / "frame_0000.obj", scene.mesh, state.x)
    rows = []
    with open(out / "stats.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_COLUMNS)

        def record(stats):
            for s in stats:
                writer.writerow(stats_row(s))
                rows.append(dict(zip(STATS_COLUMNS, stats_row(s))))
            fh.flush()

        for frame in range(1, scene.frames + 1):
            try:
                state, stats = sim.newton_solve(state)
            except NewtonConvergenceError as exc:
                record(exc.stats)
                raise
            record(stats)
            write_frame(out / f"frame_{frame:04d}.obj", scene.mesh, state.x)
    text = format_summary(summarize(rows))
    (out / "summary.txt").write_text(text + "\n")
    print(text)
    return 0


def read_stats(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != STATS_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = list(reader)
    for k, r in enumerate(rows, start=2):
        try:
            [float(r[c]) for c in STATS_COLUMNS]
        except (TypeError, ValueError):
            raise ValueError(f"{path}: malformed row at line {k}") from None
    return rows


def cmd_stats(args):
    print(format_summary(summarize(read_stats(args.csv))))
    return 0


def cmd_verify(args):
    ok, _ = verify_mod.run_checks(seed=args.seed)
    return 0 if ok else 1


def cmd_dump_map(args):
    scene = _load(args)
    sim, state = _simulator(scene)
    state, _ = sim.run(state, args.steps)
    cls = sim.last_classification
    if cls is None:
        G = sim.model.strains(state.x)
        cls = sim.classify(G, G, state.pinned, skip=False)
    target = Path(args.map_out) if args.map_out else scene.output_dir / "coarse_map.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_map_csv(target, cls)
    print(f"wrote {target} ({cls.n3} 3-DoF, {cls.n12} 12-DoF coarse nodes)")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="adacoarse", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scene_args(sp):
        sp.add_argument("--config", required=True, help="scene JSON file")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--workers", type=int, default=1, help="worker threads (1 = sequential)")
        sp.add_argument("--mode", choices=MODES, help="override the config mode")

    sp = sub.add_parser("run", help="simulate a scene")
    scene_args(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("verify", help="run the oracle-backed property suite")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("stats", help="summarize a stats CSV")
    sp.add_argument("csv")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("dump-map", help="write the per-vertex coarse index after some steps")
    scene_args(sp)
    sp.add_argument("--steps", type=int, default=1)
    sp.add_argument("--map-out", help="CSV path (default: <out>/coarse_map.csv)")
    sp.set_defaults(func=cmd_dump_map)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MeshError, InfeasibleStateError) as exc:
        print(f"scene error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
