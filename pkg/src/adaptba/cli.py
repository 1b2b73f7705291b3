"""Command line: ``run``, ``sweep``, ``check-expander`` and ``audit``.

Exit codes: 0 ok, 2 configuration error, 3 safety violation, 4 liveness
violation, 5 complexity bound breached (sweep with ``bound`` set).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .audit import AuditReport, audit_jsonl, audit_trace
from .core import ConfigError, count_words
from .expander import EXHAUSTIVE_LIMIT, build_graph, verify_expansion
from .simnet import HorizonExceeded, ScenarioConfig, Trace, run as run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_SAFETY, EXIT_LIVENESS, EXIT_BOUND = 0, 2, 3, 4, 5


@dataclass
class MetricsRow:
    protocol: str
    n: int
    t: int
    f: int
    seed: int
    words_total: int
    words_after_gst: int
    views_to_global_decision: int | None
    rounds: int | None
    decided_value: int | None
    safety_ok: bool
    liveness_ok: bool

    FIELDS = ()  # filled below

    def as_csv_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: ("" if v is None else v) for k, v in d.items()}


MetricsRow.FIELDS = tuple(f.name for f in dataclasses.fields(MetricsRow))


def views_to_decision(trace: Trace) -> int | None:
    meta = trace.meta
    length = meta.get("view_length")
    if length is None or meta.get("first_view_after_gst") is None:
        return None
    honest_times = [d.time for i, d in trace.decisions.items() if i not in trace.corrupted]
    if not honest_times:
        return None
    return max(0, max(honest_times) // length - meta["first_view_after_gst"] + 1)


def inner_rounds(trace: Trace) -> int | None:
    if trace.meta.get("protocol") == "quorum_ba":
        rs = [d.extra.get("round") for i, d in trace.decisions.items() if i not in trace.corrupted]
    else:
        inner = trace.meta.get("inner_decisions", {})
        rs = [rec.get("round") for i, rec in inner.items() if i not in trace.corrupted]
    rs = [r for r in rs if r is not None]
    return max(rs) if rs else None


def metrics_row(cfg: ScenarioConfig, trace: Trace, report: AuditReport) -> MetricsRow:
    vals = {d.value for i, d in trace.decisions.items() if i not in trace.corrupted}
    return MetricsRow(cfg.protocol, cfg.n, cfg.t, cfg.f, cfg.seed,
                      count_words(trace), count_words(trace, after=cfg.gst),
                      views_to_decision(trace), inner_rounds(trace),
                      vals.pop() if len(vals) == 1 else None,
                      report.safety_ok, report.liveness_ok)


def execute(cfg: ScenarioConfig) -> tuple[Trace, AuditReport]:
    """Run and audit one scenario.  A run that hits its horizon is returned
    with a liveness violation instead of raising."""
    try:
        trace = run_scenario(cfg)
    except HorizonExceeded as e:
        report = audit_trace(e.trace)
        report.liveness.insert(0, str(e))
        return e.trace, report
    return trace, audit_trace(trace)


def run_cell(cfg: ScenarioConfig) -> MetricsRow:
    trace, report = execute(cfg)
    return metrics_row(cfg, trace, report)


def write_rows(rows, fh) -> None:
    w = csv.DictWriter(fh, fieldnames=MetricsRow.FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.as_csv_dict())


def read_rows(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


# --- sweep --------------------------------------------------------------------

PREDICTORS = {
    "n+tf": lambda n, t, f: n + t * f,
    "n+nf": lambda n, t, f: n + n * f,
    "(n+t2)logn": lambda n, t, f: (n + t * t) * math.log2(n),
}


@dataclass
class SweepSpec:
    base: ScenarioConfig
    ns: list[int]
    ts: list[str]
    fs: list[str]
    seeds: int = 10
    seed_base: int = 0
    predictor: str = "n+tf"
    bound: float | None = None

    def cells(self) -> list[ScenarioConfig]:
        out = []
        for n in self.ns:
            for t_tok in self.ts:
                t = resolve(t_tok, n=n)
                for f_tok in self.fs:
                    f = resolve(f_tok, n=n, t=t)
                    if f > t:
                        continue
                    for s in range(self.seed_base, self.seed_base + self.seeds):
                        out.append(dataclasses.replace(self.base, n=n, t=t, f=f, seed=s))
        return out


def resolve(token: str, **env) -> int:
    """Integer, or an expression over ``n``/``t`` such as ``t/2`` or
    ``(n-1)/3``; division floors."""
    token = token.strip()
    if token == "max":
        token = "(n-1)/3"
    if token.lstrip("-").isdigit():
        return int(token)
    allowed = set("nt0123456789+-*/() ")
    if not set(token) <= allowed:
        raise ConfigError(f"bad range token {token!r}")
    try:
        return int(eval(token.replace("/", "//"), {"__builtins__": {}}, env))  # noqa: S307
    except Exception as e:  # noqa: BLE001
        raise ConfigError(f"cannot evaluate {token!r}") from e


def expand(value: str) -> list[str]:
    """``a..b`` (inclusive integers) or a comma separated list."""
    value = value.strip()
    if ".." in value and "," not in value:
        lo, hi = value.split("..")
        return [str(i) for i in range(int(lo), int(hi) + 1)]
    return [v.strip() for v in value.split(",") if v.strip()]


def parse_sweep(text: str) -> SweepSpec:
    base_lines, extra = [], {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = (s.strip() for s in line.partition("="))
        if key in ("n", "t", "f", "seeds", "seed_base", "predictor", "bound"):
            extra[key] = val
        else:
            base_lines.append(line)
    base = ScenarioConfig.from_text("\n".join(base_lines))
    try:
        spec = SweepSpec(base, [int(x) for x in expand(extra.get("n", str(base.n)))],
                         expand(extra.get("t", str(base.t))), expand(extra.get("f", str(base.f))),
                         int(extra.get("seeds", 10)), int(extra.get("seed_base", 0)),
                         extra.get("predictor", "n+tf"),
                         float(extra["bound"]) if "bound" in extra else None)
    except ValueError as e:
        raise ConfigError(f"bad sweep value: {e}") from e
    if spec.predictor not in PREDICTORS:
        raise ConfigError(f"unknown predictor {spec.predictor!r}; choose from {sorted(PREDICTORS)}")
    return spec


def fit(rows: list[MetricsRow], predictor: str, column: str = "words_after_gst") -> dict:
    """Least squares ``words ~ a + b * x`` and the worst ratio ``words / x``."""
    pred = PREDICTORS[predictor]
    x = np.array([pred(r.n, r.t, r.f) for r in rows], dtype=float)
    y = np.array([getattr(r, column) for r in rows], dtype=float)
    if len(rows) >= 2 and np.ptp(x) > 0:
        (b, a), *_ = np.linalg.lstsq(np.vstack([x, np.ones_like(x)]).T, y, rcond=None)
    else:
        a, b = 0.0, float(y.mean() / x.mean()) if len(rows) else 0.0
    return {"intercept": float(a), "slope": float(b),
            "max_ratio": float((y / x).max()) if len(rows) else 0.0, "cells": len(rows)}


def run_cells(cells: list[ScenarioConfig], jobs: int = 1) -> list[MetricsRow]:
    if jobs <= 1 or len(cells) < 2:
        return [run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_cell, cells, chunksize=max(1, len(cells) // (4 * jobs))))


# --- commands ---------------------------------------------------------------------

def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_run(args) -> int:
    cfg = ScenarioConfig.from_text(_read(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.horizon is not None:
        cfg.horizon = args.horizon
    if args.scheduler is not None:
        cfg.scheduler = args.scheduler
    cfg.validate()
    trace, report = execute(cfg)
    if args.out:
        _write(args.out, trace.to_jsonl())
    buf = io.StringIO()
    write_rows([metrics_row(cfg, trace, report)], buf)
    _write(args.metrics, buf.getvalue())
    for line in report.safety + report.liveness:
        print(f"violation: {line}", file=sys.stderr)
    return report.exit_code()


def cmd_sweep(args) -> int:
    spec = parse_sweep(_read(args.spec))
    if args.seed is not None:
        spec.seed_base = args.seed
    if args.scheduler is not None:
        spec.base.scheduler = args.scheduler
    if args.horizon is not None:
        spec.base.horizon = args.horizon
    cells = spec.cells()
    for c in cells:
        try:
            c.validate()
        except ConfigError as e:
            raise ConfigError(f"cell n={c.n} t={c.t} f={c.f}: {e}") from e
    rows = run_cells(cells, args.jobs)
    buf = io.StringIO()
    write_rows(rows, buf)
    _write(args.out, buf.getvalue())
    summary = fit(rows, spec.predictor)
    print(f"# fit words_after_gst ~ {summary['intercept']:.3f} + {summary['slope']:.3f} * ({spec.predictor})"
          f"  max ratio {summary['max_ratio']:.3f} over {summary['cells']} rows", file=sys.stderr)
    for r in rows:
        if not r.safety_ok:
            print(f"safety violation in cell n={r.n} t={r.t} f={r.f} seed={r.seed}", file=sys.stderr)
            return EXIT_SAFETY
    for r in rows:
        if not r.liveness_ok:
            print(f"liveness violation in cell n={r.n} t={r.t} f={r.f} seed={r.seed}", file=sys.stderr)
            return EXIT_LIVENESS
    if spec.bound is not None and summary["max_ratio"] > spec.bound:
        print(f"bound {spec.bound} exceeded (max ratio {summary['max_ratio']:.3f})", file=sys.stderr)
        return EXIT_BOUND
    return EXIT_OK


def cmd_check_expander(args) -> int:
    if args.n < 1 or args.t < 0:
        raise ConfigError("need n >= 1 and t >= 0")
    try:
        g = build_graph(args.n, args.t, args.c, args.seed, args.D, args.R)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if math.comb(args.n, 2 * args.t + 1) > EXHAUSTIVE_LIMIT:
        print(f"warning: {math.comb(args.n, 2 * args.t + 1)} subsets exceed the exhaustive limit; "
              f"sampling {args.samples}", file=sys.stderr)
    cert = verify_expansion(g, args.t, samples=args.samples, seed=args.seed)
    print(f"graph n={g.n_left} R={g.n_right} D={g.degree} seed={args.seed}")
    print(f"mode={cert.mode} verified={cert.verified} worst_ratio={cert.worst_ratio:.4f} checked={cert.checked}")
    if cert.counterexample is not None:
        print(f"counterexample={list(cert.counterexample)}")
    return EXIT_OK if cert.verified else EXIT_BOUND


def cmd_audit(args) -> int:
    report = audit_jsonl(_read(args.trace))
    for line in report.safety + report.liveness:
        print(f"violation: {line}")
    print(f"safety_ok={report.safety_ok} liveness_ok={report.liveness_ok}")
    return report.exit_code()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaptba", description="Adaptive Byzantine agreement simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--scheduler", choices=("immediate", "random", "main"))

    r = sub.add_parser("run", help="run one scenario and audit it")
    r.add_argument("config")
    common(r)
    r.add_argument("--out", help="trace JSONL path")
    r.add_argument("--metrics", help="metrics CSV path (default stdout)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter sweep")
    s.add_argument("spec")
    common(s)
    s.add_argument("--out", help="CSV path (default stdout)")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("check-expander", help="build and verify a party/relayer expander")
    e.add_argument("--n", type=int, required=True)
    e.add_argument("--t", type=int, required=True)
    e.add_argument("--c", type=float, default=2.0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--D", type=int)
    e.add_argument("--R", type=int)
    e.add_argument("--samples", type=int, default=20000)
    e.set_defaults(func=cmd_check_expander)

    a = sub.add_parser("audit", help="audit a JSONL trace")
    a.add_argument("trace")
    a.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
