"""Policy x user-count x seed sweeps, CSV output, and comparison tables with ordering verdicts.

Output layout of :func:`run_matrix`::

    <out>/summary.csv                       one row per run, columns SUMMARY_COLUMNS
    <out>/series/<policy>_n<users>_s<seed>.csv   columns SERIES_COLUMNS, one row per 1 s window

``summary.csv`` holds the RunSummary fields, then ``series_file`` (path
relative to ``<out>``) and ``ledger_balanced`` (1 when every packet
conservation line of the run balanced, else 0).

Floats are written with ``repr`` so reruns are byte-identical.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from statistics import mean, stdev
from typing import Iterable, Sequence

from .config import POLICIES, RunConfig
from .simulation import SUMMARY_FIELDS, RunSummary, run

SUMMARY_COLUMNS = SUMMARY_FIELDS + ["series_file", "ledger_balanced"]
SERIES_COLUMNS = ["t_s", "window_throughput_bps", "cum_voip_delay_mean_ms"]
DEFAULT_USERS = (1, 5, 10, 20, 30)
DEFAULT_SEEDS = (1, 2, 3, 4, 5)

PASS, FAIL, INSUFFICIENT = "pass", "fail", "insufficient data"


class OutputDirError(OSError):
    pass


def series_name(policy: str, n_users: int, seed: int) -> str:
    return f"{policy}_n{n_users}_s{seed}.csv"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _prepare_out(out: Path) -> None:
    try:
        (out / "series").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputDirError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK) or not os.access(out / "series", os.W_OK):
        raise OutputDirError(f"output directory {out} is not writable")


def _one(cfg: RunConfig):
    res = run(cfg)
    balanced = all(line.balanced for line in res.ledger.values())
    return res.summary, res.series, balanced


def write_series(path: Path, series: Iterable[tuple[float, float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for row in series:
            w.writerow([_fmt(float(x)) for x in row])


def run_matrix(config: RunConfig, policies: Sequence[str] = POLICIES,
               user_counts: Sequence[int] = DEFAULT_USERS, seeds: Sequence[int] = DEFAULT_SEEDS,
               out: str | Path = "results", jobs: int = 1, progress=None) -> list[RunSummary]:
    """Run every (policy, n_users, seed) combination and write the CSVs under ``out``.

    Rows come out in policy, user-count, seed order regardless of ``jobs``.
    """
    out = Path(out)
    for p in policies:
        if p not in POLICIES:
            raise ValueError(f"unknown policy {p!r}")
    _prepare_out(out)
    cfgs = [config.replace(policy=p, n_users=n, master_seed=s)
            for p in policies for n in user_counts for s in seeds]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = ex.map(_one, cfgs)
            return _write_all(out, cfgs, results, progress)
    return _write_all(out, cfgs, map(_one, cfgs), progress)


def _write_all(out: Path, cfgs, results, progress) -> list[RunSummary]:
    summaries = []
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for cfg, (summary, series, balanced) in zip(cfgs, results):
            name = series_name(cfg.policy, cfg.n_users, cfg.master_seed)
            write_series(out / "series" / name, series)
            row = asdict(summary)
            w.writerow([_fmt(row[c]) for c in SUMMARY_FIELDS] + [f"series/{name}", int(balanced)])
            fh.flush()
            summaries.append(summary)
            if progress is not None:
                progress(summary)
    return summaries


# ---- summarizing ------------------------------------------------------------------------------

_INT_FIELDS = {"n_users", "seed", "machs_nrt_drops", "machs_rt_drops", "rlc_retx_count",
               "rlc_giveups", "tcp_timeouts", "tcp_fast_retx"}


def read_summaries(csv_dir: str | Path) -> list[RunSummary]:
    """Load every ``summary*.csv`` found directly under ``csv_dir``."""
    rows = []
    files = sorted(Path(csv_dir).glob("summary*.csv"))
    if not files:
        raise FileNotFoundError(f"no summary CSV in {csv_dir}")
    for path in files:
        with open(path, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                kw = {}
                for k in SUMMARY_FIELDS:
                    v = rec[k]
                    kw[k] = v if k == "policy" else int(v) if k in _INT_FIELDS else float(v)
                rows.append(RunSummary(**kw))
    return rows


@dataclass
class PointStats:
    """Seed statistics for one (policy, n_users) point."""
    policy: str
    n_users: int
    n: int
    thr_mean: float
    thr_std: float
    delay_mean: float
    delay_std: float
    cov_mean: float

    @property
    def thr_se(self) -> float:
        return self.thr_std / math.sqrt(self.n) if self.n > 1 else float("nan")


@dataclass
class Verdict:
    name: str
    status: str
    detail: str

    def line(self) -> str:
        return f"[{self.status.upper():>4}] {self.name}: {self.detail}"


def _sd(xs: list[float]) -> float:
    return stdev(xs) if len(xs) > 1 else 0.0


def aggregate(rows: Iterable[RunSummary]) -> dict[tuple[str, int], PointStats]:
    groups: dict[tuple[str, int], list[RunSummary]] = {}
    for r in rows:
        groups.setdefault((r.policy, r.n_users), []).append(r)
    table = {}
    for key in sorted(groups, key=lambda k: (POLICIES.index(k[0]) if k[0] in POLICIES else 99, k[1])):
        g = groups[key]
        thr = [r.nrt_throughput_bps for r in g]
        dly = [r.voip_delay_mean_ms for r in g if not math.isnan(r.voip_delay_mean_ms)]
        cov = [r.nrt_throughput_cov for r in g if not math.isnan(r.nrt_throughput_cov)]
        table[key] = PointStats(key[0], key[1], len(g), mean(thr), _sd(thr),
                                mean(dly) if dly else float("nan"), _sd(dly),
                                mean(cov) if cov else float("nan"))
    return table


def _have(table, policies, users) -> bool:
    return all((p, n) in table for p in policies for n in users)


def verdicts(table: dict[tuple[str, int], PointStats], min_seeds: int = 5) -> list[Verdict]:
    """Evaluate the throughput, VoIP-delay and variation orderings on seed-averaged results."""
    out = []

    def enough(keys) -> bool:
        return all(table[k].n >= min_seeds for k in keys)

    # high-load throughput ordering
    users = (20, 30)
    name = "high-load throughput ETSP > TSP, FIFO"
    if not _have(table, POLICIES, users) or not enough([(p, n) for p in POLICIES for n in users]):
        out.append(Verdict(name, INSUFFICIENT, f"need all policies at n_users {users} with >= {min_seeds} seeds"))
    else:
        ok, parts = True, []
        for n in users:
            e, t, f = table["ETSP", n], table["TSP", n], table["FIFO", n]
            diff = e.thr_mean - t.thr_mean
            se = math.hypot(e.thr_se, t.thr_se)
            good = e.thr_mean > t.thr_mean and e.thr_mean > f.thr_mean and diff > se
            ok &= good
            parts.append(f"n={n}: ETSP-TSP={diff / 1e3:+.1f} kb/s (SE {se / 1e3:.1f}), "
                         f"ETSP-FIFO={(e.thr_mean - f.thr_mean) / 1e3:+.1f} kb/s")
        out.append(Verdict(name, PASS if ok else FAIL, "; ".join(parts)))

    # single-user inversion
    name = "single-user throughput lowest for ETSP"
    if not _have(table, POLICIES, (1,)):
        out.append(Verdict(name, INSUFFICIENT, "need all policies at n_users 1"))
    else:
        e = table["ETSP", 1].thr_mean
        others = min(table["TSP", 1].thr_mean, table["FIFO", 1].thr_mean)
        out.append(Verdict(name, PASS if e < others else FAIL,
                           f"ETSP {e / 1e3:.1f} kb/s vs lowest other {others / 1e3:.1f} kb/s"))

    # VoIP equivalence TSP vs ETSP, and both below FIFO at >= 10 users
    name = "VoIP delay TSP ~ ETSP (<=10%), both < FIFO for n>=10"
    present = sorted(n for (p, n) in table if p == "ETSP" and ("TSP", n) in table)
    if not present:
        out.append(Verdict(name, INSUFFICIENT, "need TSP and ETSP at a common n_users"))
    else:
        ok, parts = True, []
        for n in present:
            t, e = table["TSP", n].delay_mean, table["ETSP", n].delay_mean
            rel = abs(e - t) / t
            good = rel <= 0.10
            extra = ""
            if n >= 10:
                if ("FIFO", n) in table:
                    f = table["FIFO", n].delay_mean
                    good &= t < f and e < f
                    extra = f", FIFO {f:.1f}"
                else:
                    extra = ", FIFO missing"
            ok &= good
            parts.append(f"n={n}: ETSP/TSP={e / t:.3f}{extra}")
        out.append(Verdict(name, PASS if ok else FAIL, "; ".join(parts)))

    # FIFO delay monotone
    name = "FIFO VoIP delay non-decreasing over n=5,10,20,30"
    users = (5, 10, 20, 30)
    if not _have(table, ("FIFO",), users):
        out.append(Verdict(name, INSUFFICIENT, f"need FIFO at n_users {users}"))
    else:
        d = [table["FIFO", n].delay_mean for n in users]
        ok = all(b >= a for a, b in zip(d, d[1:]))
        out.append(Verdict(name, PASS if ok else FAIL, " -> ".join(f"{x:.1f}" for x in d) + " ms"))

    # throughput coefficient of variation
    name = "throughput CoV lowest for ETSP at n>=10"
    users = sorted(n for (p, n) in table if p == "ETSP" and n >= 10)
    if not users or not _have(table, POLICIES, users):
        out.append(Verdict(name, INSUFFICIENT, "need all policies at some n_users >= 10"))
    else:
        ok, parts = True, []
        for n in users:
            c = {p: table[p, n].cov_mean for p in POLICIES}
            good = c["ETSP"] < c["TSP"] and c["ETSP"] < c["FIFO"]
            ok &= good
            parts.append(f"n={n}: " + "/".join(f"{c[p]:.3f}" for p in POLICIES))
        out.append(Verdict(name, PASS if ok else FAIL, "; ".join(parts) + " (FIFO/TSP/ETSP)"))
    return out


def format_table(table: dict[tuple[str, int], PointStats]) -> str:
    lines = [f"{'policy':<6} {'users':>5} {'seeds':>5} {'throughput kb/s':>22} {'VoIP delay ms':>20} {'CoV':>7}"]
    for c in table.values():
        lines.append(f"{c.policy:<6} {c.n_users:>5} {c.n:>5} "
                     f"{c.thr_mean / 1e3:>11.1f} ± {c.thr_std / 1e3:>8.1f} "
                     f"{c.delay_mean:>9.1f} ± {c.delay_std:>7.1f} {c.cov_mean:>7.3f}")
    return "\n".join(lines)


def summarize(csv_dir: str | Path, min_seeds: int = 5) -> tuple[str, list[Verdict]]:
    """Comparison table text plus the ordering verdicts for the runs under ``csv_dir``."""
    table = aggregate(read_summaries(csv_dir))
    vs = verdicts(table, min_seeds)
    text = format_table(table) + "\n\n" + "\n".join(v.line() for v in vs) + "\n"
    return text, vs


def emit_plot_scripts(csv_dir: str | Path) -> list[Path]:
    """Write gnuplot scripts for throughput and VoIP delay against user count, plus series plots."""
    csv_dir = Path(csv_dir)
    table = aggregate(read_summaries(csv_dir))
    data = csv_dir / "by_users.dat"
    with open(data, "w", encoding="utf-8") as fh:
        for p in POLICIES:
            rows = [c for c in table.values() if c.policy == p]
            if not rows:
                continue
            fh.write(f'"{p}"\n')
            for c in rows:
                fh.write(f"{c.n_users} {c.thr_mean / 1e3:.3f} {c.thr_std / 1e3:.3f} "
                         f"{c.delay_mean:.3f} {c.delay_std:.3f}\n")
            fh.write("\n\n")
    written = []
    for fname, col, ylabel in (("throughput_vs_users.gp", "2:3", "NRT throughput (kb/s)"),
                               ("voip_delay_vs_users.gp", "4:5", "VoIP delay (ms)")):
        path = csv_dir / fname
        path.write_text(
            "set terminal pngcairo size 800,500\n"
            f"set output '{path.stem}.png'\n"
            "set xlabel 'users in cell'\n"
            f"set ylabel '{ylabel}'\n"
            "set key top right\n"
            f"plot for [i=0:*] 'by_users.dat' index i using 1:{col} with yerrorlines title columnheader(1)\n",
            encoding="utf-8")
        written.append(path)
    series = sorted((csv_dir / "series").glob("*.csv"))
    if series:
        path = csv_dir / "series.gp"
        body = ["set terminal pngcairo size 800,500", "set datafile separator ','",
                "set xlabel 'time (s)'", "set ylabel 'throughput (b/s)'"]
        for s in series:
            body += [f"set output '{s.stem}.png'",
                     f"plot 'series/{s.name}' every ::1 using 1:2 with lines title '{s.stem}'"]
        path.write_text("\n".join(body) + "\n", encoding="utf-8")
        written.append(path)
    return [data] + written
