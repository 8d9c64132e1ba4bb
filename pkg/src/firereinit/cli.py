"""Command-line entry point (``firereinit``)."""

from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from firereinit import metrics
from firereinit.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from firereinit.config import ConfigError, apply_overrides, load_config
from firereinit.orthogonalize import NsCoefficients, fire_network


def _cmd_orthogonalize(args) -> int:
    params, manifest = load_checkpoint(args.checkpoint)
    before = params.copy()
    out = fire_network(params, args.iters, NsCoefficients.from_name(args.coeffs))
    extra = dict(manifest.get("extra", {}))
    extra["orthogonalized"] = {"iters": args.iters, "coeffs": args.coeffs}
    save_checkpoint(args.checkpoint, out, manifest.get("seed", 0), manifest.get("step", 0), extra)
    print(f"orthogonalized {len(out.layers)} layers; SFE = {metrics.sfe_network(before, out)!r}")
    return 0


def _cmd_metrics(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    batch = None
    if args.probe > 0:
        rng = np.random.default_rng(args.seed)
        batch = rng.standard_normal((args.probe, params.layers[0].weight.shape[1]))
    rep = metrics.plasticity_report(params, batch, delta=args.delta, tau=args.tau)
    rows = rep.rows()
    if args.format == "csv":
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    else:
        print(f"{'layer':>5}  {'dfi':>12}  {'srank':>5}  {'dormant':>7}  {'min_score':>9}  {'max_score':>9}")
        for r in rows:
            print(f"{r['layer']:>5}  {r['dfi']:>12.6g}  {r['srank']:>5}  {r['dormant']:>7}  "
                  f"{r['min_score']:>9.4f}  {r['max_score']:>9.4f}")
    return 0


def _cmd_verify(args) -> int:
    from firereinit.verify import run_all

    ok = True
    for res in run_all(seed=args.seed, scale=args.scale):
        print(res.line())
        for label, measured, bound, details in res.failures:
            print(f"    {label}: measured={measured!r} bound={bound!r} {details}")
        ok = ok and res.passed
    return 0 if ok else 1


def _load(args):
    return apply_overrides(load_config(args.config), seed=args.seed, output_dir=args.output_dir)


def _cmd_run(args) -> int:
    from firereinit.runner import run_experiment

    cfg = _load(args)
    records = run_experiment(cfg, resume=args.resume, workers=args.workers)
    print(f"wrote {len(records)} records under {cfg.output_dir}/{cfg.name}")
    return 0


def _cmd_ablate(args) -> int:
    from firereinit.runner import run_ablation_iters

    try:
        iters = [int(k) for k in args.iters.split(",") if k.strip()]
    except ValueError:
        raise ConfigError(f"--iters must be a comma-separated list of integers, got {args.iters!r}")
    cfg = _load(args)
    records, traj = run_ablation_iters(cfg, iters, resume=args.resume, workers=args.workers)
    print(f"wrote {len(records)} records and {len(traj)} trajectory points under "
          f"{cfg.output_dir}/{cfg.name}")
    return 0


def _cmd_report(args) -> int:
    from firereinit.report import report

    _, text = report(args.directory)
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="firereinit",
                                description="Orthogonalizing reinitialization toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    o = sub.add_parser("orthogonalize", help="apply FIRE in place to a saved checkpoint")
    o.add_argument("checkpoint")
    o.add_argument("--iters", type=int, default=10)
    o.add_argument("--coeffs", choices=("cubic", "quintic", "muon"), default="cubic")
    o.set_defaults(func=_cmd_orthogonalize)

    m = sub.add_parser("metrics", help="plasticity report for a checkpoint")
    m.add_argument("checkpoint")
    m.add_argument("--format", choices=("text", "csv"), default="text")
    m.add_argument("--probe", type=int, default=1000,
                   help="size of the Gaussian probe batch (0: weight-only report)")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--delta", type=float, default=metrics.DEFAULT_DELTA)
    m.add_argument("--tau", type=float, default=metrics.DEFAULT_TAU)
    m.set_defaults(func=_cmd_metrics)

    v = sub.add_parser("verify", help="run every bound verifier; exit 0 iff all hold")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--scale", type=float, default=1.0, help="fraction of the default case counts")
    v.set_defaults(func=_cmd_verify)

    for name, fn, helptext in (("run", _cmd_run, "run an experiment from a TOML config"),
                               ("ablate", _cmd_ablate, "Newton-Schulz iteration-count ablation")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("config")
        r.add_argument("--seed", type=int, default=None, help="run only this seed")
        r.add_argument("--output-dir", default=None,
                       help="output root (overrides $FIRE_OUTPUT_DIR and the config)")
        r.add_argument("--resume", action="store_true", help="continue from existing checkpoints")
        r.add_argument("--workers", type=int, default=1, help="parallel seed workers")
        if name == "ablate":
            r.add_argument("--iters", default="1,5,10,30")
        r.set_defaults(func=fn)

    rp = sub.add_parser("report", help="summarize a run directory")
    rp.add_argument("directory")
    rp.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
