"""Command-line entry point.

Every command writes into ``<out>/<target>/<command>/<timestamp>/`` with a
``manifest.json``; the same manifest is embedded in each artifact (a ``#``
comment line in CSV files, a ``manifest`` key or first line in JSON files,
the PNG description field).

Exit codes: 0 success, 1 input or configuration error, 2 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .errors import CacheBenchError, InputError, InvariantViolation

OUTPUT_ROOT_ENV = "CACHEBENCH_OUTPUT_ROOT"
DEFAULT_ROOT = "results"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _timestamp(arg: str | None) -> str:
    if arg:
        return arg
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y%m%dT%H%M%SZ", time.gmtime(t))


def _root(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ROOT_ENV) or DEFAULT_ROOT)


def _load_target(name: str, seed: int | None):
    from .targets import resolve, serialize

    spec = resolve(name)
    if seed is not None:
        spec = spec.with_seed(seed)
    digest = hashlib.sha256(serialize(spec).encode()).hexdigest()
    return spec, digest


class Run:
    """Output directory plus manifest for one command invocation."""

    def __init__(self, args, command: str, group: str, **fields):
        self.ts = _timestamp(args.timestamp)
        rel = Path(group) / command / self.ts
        self.dir = _root(args.out) / rel
        self.manifest = {
            "command": command,
            "tool": "cachebench",
            "version": __version__,
            "timestamp": self.ts,
            "output_directory": rel.as_posix(),
            **fields,
        }

    def open(self) -> "Run":
        self.dir.mkdir(parents=True, exist_ok=True)
        self.write("manifest.json", json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")
        return self

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.write_text(text)
        return path

    def write_csv(self, name: str, text: str) -> Path:
        return self.write(name, "# manifest: " + json.dumps(self.manifest, sort_keys=True) + "\n" + text)

    def path(self, name: str) -> Path:
        return self.dir / name


# -- commands -------------------------------------------------------------------------

def cmd_timing_types(args) -> int:
    from .plotting import timing_figure
    from .timing import histograms_csv, measure_all, summary_json, summary_rows

    spec, digest = _load_target(args.target, args.seed)
    if args.trials < 1:
        raise InputError("--trials must be >= 1")
    run = Run(args, "timing-types", spec.name, target=args.target, target_sha256=digest,
              seed=spec.seed, trials=args.trials).open()
    hists = measure_all(spec, trials=args.trials, jobs=args.jobs)
    for tt, h in hists.items():
        if h.trials != args.trials:
            raise InvariantViolation(f"{tt.key}: histogram holds {h.trials} samples")
    rows = summary_rows(hists)
    run.write_csv("histograms.csv", histograms_csv(hists))
    run.write("summary.json", summary_json(hists, {"manifest": run.manifest}))
    summary_csv = "label,op,mode,p95_low,p95_high,trials\n" + "".join(
        f"{r['label']},{r['op']},{r['mode']},{r['p95_low']},{r['p95_high']},{r['trials']}\n"
        for r in rows)
    run.write_csv("summary.csv", summary_csv)
    timing_figure(rows, run.path("timing_types.png"), f"{spec.name}: latency per timing type",
                  run.manifest)
    ops = {r["op"] for r in rows}
    print(f"{spec.name}: {len(rows)} timing types ({', '.join(sorted(ops))}) -> {run.dir}")
    return 0


def cmd_enumerate(args) -> int:
    from .threestep import NTRIPLES, STATES, catalog_jsonl, parse_catalog, states_jsonl

    run = Run(args, "enumerate", "taxonomy", states=len(STATES), triples=NTRIPLES).open()
    head = json.dumps({"manifest": run.manifest}, sort_keys=True) + "\n"
    run.write("states.jsonl", head + states_jsonl())
    text = catalog_jsonl()
    run.write("triples.jsonl", head + text)
    if len(parse_catalog(text)) != NTRIPLES:
        raise InvariantViolation("triple catalog does not round-trip")
    print(f"{len(STATES)} states, {NTRIPLES} triples -> {run.dir}")
    return 0


def parse_triples(spec: str) -> list[int]:
    """``reference-strong``, ``classic``, ``all`` or ids/ranges like ``1,5-9``."""
    from .threestep import NTRIPLES, classic_triples, reference_strong_ids

    key = spec.strip()
    if key == "reference-strong":
        return reference_strong_ids()
    if key == "classic":
        return sorted(t.id for t in classic_triples().values())
    if key == "all":
        return list(range(NTRIPLES))
    ids = set()
    for part in key.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                rng = range(lo, hi + 1)
            else:
                rng = [int(part)]
        except ValueError:
            raise InputError(f"bad triple id {part!r}") from None
        for i in rng:
            if not 0 <= i < NTRIPLES:
                raise InputError(f"unknown triple id {i}")
            ids.add(i)
    if not ids:
        raise InputError("no triple ids given")
    return sorted(ids)


def cmd_bench(args) -> int:
    from .benchgen import ALL_CONFIGS, run_benchmark
    from .plotting import matrix_figure

    spec, digest = _load_target(args.target, args.seed)
    ids = parse_triples(args.triples)
    run = Run(args, "bench", spec.name, target=args.target, target_sha256=digest, seed=spec.seed,
              trials=args.trials, delta_min=args.delta_min, triples=args.triples).open()
    matrix = run_benchmark(spec, ids, trials=args.trials, delta_min=args.delta_min, jobs=args.jobs)
    if len(matrix.cells) != len(ids) * len(ALL_CONFIGS):
        raise InvariantViolation("detection matrix is incomplete")
    matrix.manifest = run.manifest
    run.write_csv("matrix.csv", matrix.to_csv())
    run.write("matrix.json", matrix.to_json())
    matrix_figure(matrix, run.path("matrix.png"), run.manifest)
    c = matrix.counts()
    print(f"{spec.name}: {len(ids)} triples x {len(ALL_CONFIGS)} configs: "
          + ", ".join(f"{k}={v}" for k, v in c.items()) + f" -> {run.dir}")
    return 0


def cmd_report(args) -> int:
    from .benchgen import DetectionMatrix
    from .plotting import ctvs_figure
    from .scoring import score

    matrices = {}
    for p in args.matrices:
        try:
            text = Path(p).read_text()
        except OSError as exc:
            raise InputError(f"cannot read {p}: {exc}") from exc
        m = DetectionMatrix.from_json(text)
        name = m.target
        k = 2
        while name in matrices:
            name = f"{m.target}-{k}"
            k += 1
        matrices[name] = m
    report = score(matrices)
    group = "+".join(matrices)
    run = Run(args, "report", group, matrices=[str(p) for p in args.matrices]).open()
    run.write("report.json", report.to_json(run.manifest))
    text = report.text()
    run.write("report.txt", text)
    ctvs_figure(report, run.path("ctvs.png"), run.manifest)
    sys.stdout.write(text)
    print(f"-> {run.dir}")
    return 0


def cmd_sweep(args) -> int:
    from .eviction import default_grid, parameter_sweep, sweep_csv
    from .plotting import sweep_figure

    spec, digest = _load_target(args.target, args.seed)
    if args.level != 1 and args.level not in [lv.level for lv in spec.shared_levels]:
        raise InputError(f"{spec.name} has no L{args.level}")
    if args.seeds < 1:
        raise InputError("--seeds must be >= 1")
    run = Run(args, "sweep", spec.name, target=args.target, target_sha256=digest, seed=spec.seed,
              level=args.level, seeds=args.seeds).open()
    base = spec.seed
    rows = parameter_sweep(spec, args.level, default_grid(spec, args.level),
                           [base * 1_000_003 + s for s in range(args.seeds)])
    run.write_csv("sweep.csv", sweep_csv(rows))
    sweep_figure(rows, run.path("sweep.png"), run.manifest)
    best = max(rows, key=lambda r: (r["eviction_rate"], -r["mean_cycles"]))
    print(f"{spec.name} L{args.level}: best {best['params']} rate={best['eviction_rate']:.3f} -> {run.dir}")
    return 0


# -- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output root (default ${OUTPUT_ROOT_ENV} or ./{DEFAULT_ROOT})")
    common.add_argument("--seed", type=int, default=None, help="override the target spec seed")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="worker processes (default: available CPUs)")
    common.add_argument("--timestamp", help="run directory name (default: $SOURCE_DATE_EPOCH or now)")

    p = _Parser(prog="cachebench", description="Cache timing vulnerability benchmarks on simulated targets.")
    p.add_argument("--version", action="version", version=f"cachebench {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("timing-types", parents=[common], help="latency histograms per timing type")
    s.add_argument("--target", required=True, help="shipped spec name or path to a spec JSON")
    s.add_argument("--trials", type=int, default=10000)
    s.set_defaults(func=cmd_timing_types)

    s = sub.add_parser("enumerate", parents=[common], help="write the state and triple catalogs")
    s.set_defaults(func=cmd_enumerate)

    s = sub.add_parser("bench", parents=[common], help="detection matrix for a set of triples")
    s.add_argument("--target", required=True)
    s.add_argument("--triples", default="reference-strong",
                   help="reference-strong | classic | all | ids such as 1,5-9")
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--delta-min", type=int, default=2)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("report", parents=[common], help="score one or more detection matrices")
    s.add_argument("--matrices", nargs="+", required=True, help="matrix.json files from bench")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("sweep", parents=[common], help="eviction parameter sweep")
    s.add_argument("--target", required=True)
    s.add_argument("--level", type=int, default=1)
    s.add_argument("--seeds", type=int, default=200)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("cachebench: error: --jobs must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"cachebench: invariant violated: {exc}", file=sys.stderr)
        return 2
    except (CacheBenchError, OSError) as exc:
        print(f"cachebench: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
