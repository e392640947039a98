"""``vioinit`` command line: sweeps, single runs, dataset dumps and Jacobian checks."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import bench, config, diagnostics
from .errors import VioInitError
from .simulator import dump_dataset, synthesize, to_up_to_scale

log = logging.getLogger("vioinit")

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2
JACOBIAN_TOL = 1e-5


def _overrides(args) -> dict[str, str]:
    out = {}
    if getattr(args, "axis", None):
        out["sweep.axis"] = args.axis
    if getattr(args, "multipliers", None):
        out["sweep.multipliers"] = args.multipliers
    if getattr(args, "offset_ms", None) is not None and args.command == "sweep":
        out["sweep.offsets_ms"] = args.offset_ms
    if getattr(args, "seed", None) is not None and args.command == "sweep":
        out["sweep.seed_base"] = str(args.seed)
    return out


def _single_offset(text: str | None) -> float:
    if text is None:
        return 0.0
    vals = [float(x) for x in text.split(",") if x.strip()]
    if len(vals) != 1:
        raise config.ConfigError("single runs take exactly one --offset-ms value")
    return vals[0]


def cmd_sweep(cfg, args) -> int:
    threads = args.threads or bench.default_threads()
    total = len(cfg.sweep.multipliers) * len(cfg.sweep.offsets_ms) * cfg.sweep.seeds
    log.info("sweeping %s: %d runs on %d workers", cfg.sweep.axis, total, threads)
    summaries = bench.sweep(cfg, threads)
    paths = bench.write_sweep(args.out, cfg, summaries)
    for p in paths:
        print(p)
    failed = sum(s.n_failed for s in summaries)
    if failed:
        log.warning("%d of %d runs failed", failed, total)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_single(cfg, args) -> int:
    td_ms = _single_offset(args.offset_ms)
    rig = dataclasses.replace(cfg.rig, td=td_ms * 1e-3)
    cfg = dataclasses.replace(cfg, rig=rig)
    row = bench.run_cell(cfg, None, args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "single.csv"
    names = [*bench.METRIC_FIELDS, "wall_time", "ok", "reason"]
    vals = [bench._g9(v) for v in row.values()] + [bench._g9(row.wall_time), str(row.ok), row.reason]
    path.write_text(",".join(names) + "\n" + ",".join(vals) + "\n", encoding="utf-8")
    (out / "single.manifest").write_text(config.dump(cfg, {"run.seed": str(args.seed or 0)}), encoding="utf-8")
    for n, v in zip(names, vals):
        print(f"{n:>22s}  {v}")
    return EXIT_OK if row.ok else EXIT_PARTIAL


def cmd_dump_dataset(cfg, args) -> int:
    rig = dataclasses.replace(cfg.rig, td=_single_offset(args.offset_ms) * 1e-3)
    ds = to_up_to_scale(synthesize(cfg.traj, rig, args.seed or 0), cfg.pipeline.scale_applied)
    for p in dump_dataset(ds, args.out):
        print(p)
    return EXIT_OK


def cmd_jacobian_check(cfg, args) -> int:
    report = diagnostics.jacobian_report(args.seed or 0, args.points)
    worst = 0.0
    for name, err in report.items():
        print(f"{name:>16s}  max relative error {err:.3e}")
        worst = max(worst, err)
    return EXIT_OK if worst < JACOBIAN_TOL else EXIT_ERROR


COMMANDS = {"sweep": cmd_sweep, "single": cmd_single, "dump-dataset": cmd_dump_dataset,
            "jacobian-check": cmd_jacobian_check}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vioinit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="flat key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")
        p.add_argument("--seed", type=int, help="run seed (sweep: seed base)")
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--threads", type=int, default=0)
        p.add_argument("--offset-ms", help="injected offset(s) in ms, comma separated for sweeps")
        p.add_argument("--axis", choices=config.NOISE_AXES)
        p.add_argument("--multipliers", help="comma separated noise multipliers")
        if name == "jacobian-check":
            p.add_argument("--points", type=int, default=100)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        extra = _overrides(args)
        for item in args.set:
            if "=" not in item:
                raise config.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            extra[k.strip()] = v.strip()
        cfg = config.load(args.config, extra)
        return COMMANDS[args.command](cfg, args)
    except (VioInitError, ValueError, OSError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
