"""Command-line entry point: ``hsdpasim --policies FIFO,TSP,ETSP --users 1,5,10 --seeds 1,2 --out results``."""
from __future__ import annotations

import argparse
import sys
import time

from . import config as config_mod
from .config import POLICIES, ConfigError, RunConfig
from .experiment import (DEFAULT_SEEDS, DEFAULT_USERS, FAIL, OutputDirError, emit_plot_scripts,
                         run_matrix, summarize)


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _policy_list(text: str) -> list[str]:
    out = [s.strip().upper() for s in text.split(",") if s.strip()]
    bad = [p for p in out if p not in POLICIES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown policies {bad}; choose from {','.join(POLICIES)}")
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hsdpasim", description="HSDPA buffer management and flow control sweeps.")
    ap.add_argument("--config", metavar="PATH", help="key = value file overriding RunConfig defaults")
    ap.add_argument("--policies", type=_policy_list, default=list(POLICIES), help="default: FIFO,TSP,ETSP")
    ap.add_argument("--users", type=_int_list, default=list(DEFAULT_USERS), help="default: 1,5,10,20,30")
    ap.add_argument("--seeds", type=_int_list, default=list(DEFAULT_SEEDS), help="default: 1,2,3,4,5")
    ap.add_argument("--duration", type=float, help="session length in seconds (overrides the config)")
    ap.add_argument("--out", metavar="DIR", default="results", help="output directory for the sweep")
    ap.add_argument("--summarize", metavar="DIR", help="only summarize an existing output directory")
    ap.add_argument("--emit-plots", action="store_true", help="write gnuplot scripts next to the CSVs")
    ap.add_argument("--check", action="store_true", help="exit 2 when an ordering verdict fails")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for the sweep")
    ap.add_argument("-q", "--quiet", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_mod.load(args.config) if args.config else RunConfig()
        if args.duration is not None:
            cfg = cfg.replace(sim_duration_s=args.duration)
    except (ConfigError, OSError) as exc:
        print(f"hsdpasim: {exc}", file=sys.stderr)
        return 1

    out_dir = args.summarize
    if out_dir is None:
        out_dir = args.out
        t0 = time.monotonic()

        def progress(s):
            if not args.quiet:
                print(f"{s.policy:>4} n={s.n_users:<3} seed={s.seed:<3} "
                      f"thr={s.nrt_throughput_bps / 1e3:8.1f} kb/s  voip={s.voip_delay_mean_ms:7.1f} ms",
                      file=sys.stderr, flush=True)
        try:
            run_matrix(cfg, args.policies, args.users, args.seeds, out_dir, jobs=args.jobs, progress=progress)
        except OutputDirError as exc:
            print(f"hsdpasim: {exc}", file=sys.stderr)
            return 1
        if not args.quiet:
            print(f"sweep finished in {time.monotonic() - t0:.1f} s", file=sys.stderr)

    try:
        text, vs = summarize(out_dir)
    except FileNotFoundError as exc:
        print(f"hsdpasim: {exc}", file=sys.stderr)
        return 1
    print(text, end="")
    if args.emit_plots:
        for p in emit_plot_scripts(out_dir):
            print(f"wrote {p}")
    if args.check and any(v.status == FAIL for v in vs):
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
