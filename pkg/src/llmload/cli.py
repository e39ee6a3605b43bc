"""Command-line entry point.

Every option can also come from a JSON ``--config`` file whose keys are the
option names (dashes or underscores); flags given on the command line win.
``--set key=value`` overrides single keys without a file. Exit codes: 0 on
success, 1 on runtime errors, 2 on usage errors, 3 when an SLO check fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import analyzer, composer, replayer
from . import statmodel as sm
from .arrival import CoverageError, RateProfile
from .clientpool import PoolError
from .rng import DEFAULT_SEED

VERBS = ("generate", "fit", "analyze", "compare", "replay", "mock-serve", "slo-search")
EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_SLO = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _latency_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ttft-base", type=float, default=0.05, help="mock fixed first-token delay (s)")
    p.add_argument("--prefill-per-1k", type=float, default=0.0, help="mock prefill seconds per 1000 input tokens")
    p.add_argument("--per-token", type=float, default=0.01, help="mock delay between tokens (s)")
    p.add_argument("--jitter", type=float, default=0.0, help="mock relative jitter in [0, 1)")
    p.add_argument("--max-concurrency", type=int, default=None, help="mock serving slots (default unlimited)")


def _target_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--endpoint", default=None, help="server base URL")
    p.add_argument("--mock", action="store_true", default=False, help="replay against a local mock process")
    p.add_argument("--speedup", type=float, default=1.0, help="divide timestamps by this (0 = no pacing)")
    p.add_argument("--max-in-flight", type=int, default=None, help="client-side concurrency cap")
    p.add_argument("--timeout", type=float, default=60.0, help="per-request timeout (s)")
    p.add_argument("--model", default="mock", help="model name sent with each request")
    p.add_argument("--slo-ttft", type=float, default=replayer.SLO_TTFT, help="P99 TTFT target (s)")
    p.add_argument("--slo-tbt", type=float, default=replayer.SLO_TBT, help="P99 TBT target (s)")
    _latency_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llmload", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", metavar="VERB")
    sub.required = True

    def verb(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=None, help="JSON file of option values")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one option")
        p.add_argument("--format", choices=("text", "json"), default="text", help="output format")
        return p

    p = verb("generate", "Generate a workload file from a client pool (or a naive baseline).")
    p.add_argument("--pool", default="presets/language.pool", help="pool file or preset name")
    p.add_argument("--clients", type=int, default=None, help="number of clients (default: pool's)")
    p.add_argument("--rate", type=float, default=None, help="total mean rate (req/s)")
    p.add_argument("--rate-profile", default=None, help="JSON rate profile file for the total rate")
    p.add_argument("--horizon", type=float, default=600.0, help="seconds")
    p.add_argument("--category", default=None, choices=("language", "multimodal", "reasoning"))
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--naive-from", default=None, help="fit the naive baseline to this workload instead")
    p.add_argument("--naive-window", type=float, default=300.0, help="rate window of the naive baseline (s)")
    p.add_argument("-o", "--output", default=None, help="output path (default stdout)")

    p = verb("fit", "Per-window IAT fits and KS tests.")
    p.add_argument("input")
    p.add_argument("--window", type=float, default=analyzer.FIT_WINDOW)
    p.add_argument("--families", default=",".join(analyzer.FIT_FAMILIES), help="comma-separated")
    p.add_argument("--min-iats", type=int, default=analyzer.MIN_FIT_IATS)

    p = verb("analyze", "Windowed rate, CV and length statistics.")
    p.add_argument("input")
    p.add_argument("--window", type=float, default=analyzer.RATE_WINDOW)
    p.add_argument("--table", default=None, help="also write a CSV table here")

    p = verb("compare", "Divergence between two workloads.")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--window", type=float, default=analyzer.SCATTER_WINDOW, help="scatter window (s)")

    p = verb("replay", "Replay a workload against an endpoint and report latencies.")
    p.add_argument("input")
    _target_flags(p)
    p.add_argument("--slo", action="store_true", default=False, help="exit 3 unless both P99 targets are met")
    p.add_argument("--metrics-out", default=None, help="write per-request metrics as JSON lines")

    p = verb("mock-serve", "Run the mock streaming endpoint.")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0)
    _latency_flags(p)

    p = verb("slo-search", "Bisect the highest rate that meets both P99 targets.")
    p.add_argument("input", help="template workload; its timestamps are rescaled per probe")
    _target_flags(p)
    p.add_argument("--low", type=float, default=0.5)
    p.add_argument("--high", type=float, default=50.0)
    p.add_argument("--rel-tol", type=float, default=0.05)
    p.add_argument("--max-probes", type=int, default=12)
    return parser


def _subparser(parser: argparse.ArgumentParser, verb: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if verb in action.choices:
            return action.choices[verb]
    raise UsageError(f"unknown verb {verb!r}")


def _coerce(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse(argv: Sequence[str]) -> argparse.Namespace:
    """Parse with config-file and ``--set`` values as defaults under the flags."""
    parser = build_parser()
    first = parser.parse_args(argv)
    values: dict[str, Any] = {}
    if first.config:
        try:
            loaded = json.loads(Path(first.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {first.config}: {exc}")
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold an object")
        values.update(loaded)
    for item in first.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        values[key] = _coerce(raw)
    if not values:
        return first
    sub = _subparser(parser, first.verb)
    known = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "set", "help"):
            raise UsageError(f"unknown option {key!r} for {first.verb}")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _fmt(v: Any) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.4g}"
    return str(v)


def _table(rows: list[dict], out=None) -> None:
    out = out or sys.stdout
    if not rows:
        print("(no rows)", file=out)
        return
    cols = list(rows[0])
    cells = [[_fmt(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    print("  ".join(c.rjust(w) for c, w in zip(cols, widths)), file=out)
    for row in cells:
        print("  ".join(v.rjust(w) for v, w in zip(row, widths)), file=out)


def _emit(args, obj: Any, text: Optional[str] = None) -> None:
    if args.format == "json":
        print(json.dumps(obj, default=_json_default))
    elif text is not None:
        print(text)
    elif isinstance(obj, dict):
        for k, v in obj.items():
            print(f"{k}: {_fmt(v) if not isinstance(v, (dict, list)) else json.dumps(v, default=_json_default)}")
    else:
        print(obj)


def _json_default(o):
    if isinstance(o, float) and math.isnan(o):
        return None
    if hasattr(o, "item"):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _clean(obj: Any) -> Any:
    """NaN -> None so JSON output stays standard."""
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.naive_from:
        reference = composer.deserialize(args.naive_from)
        workload = composer.naive_baseline(reference, args.seed, args.naive_window)
    else:
        if args.rate_profile:
            total = RateProfile.from_dict(json.loads(Path(args.rate_profile).read_text()))
        elif args.rate is not None:
            total = float(args.rate)
        else:
            raise UsageError("generate needs --rate or --rate-profile")
        spec = composer.WorkloadSpec(
            pool=args.pool,
            total_rate=total,
            horizon=args.horizon,
            n_clients=args.clients,
            category=args.category,
            seed=args.seed,
            workers=args.workers,
        )
        workload = composer.compose(spec)
    if args.output:
        composer.serialize(workload, args.output)
        info = {
            "records": len(workload),
            "clients": len(workload.by_client()),
            "horizon": workload.horizon,
            "category": workload.category,
            "output": args.output,
        }
        _emit(args, info)
    else:
        sys.stdout.write(composer.dumps(workload))
    return EXIT_OK


def cmd_fit(args) -> int:
    workload = composer.deserialize(args.input)
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    report = analyzer.fit_report(workload, families, args.window, args.min_iats)
    if args.format == "json":
        _emit(args, _clean(report.to_dict()))
        return EXIT_OK
    rows = []
    for w in report.windows:
        row = {"start": w.start, "n_iats": w.n_iats, "best": w.best}
        for fam in w.ks:
            row[f"{fam}_D"] = w.ks[fam].statistic
            row[f"{fam}_p"] = w.ks[fam].p_value
        rows.append(row)
    _table(rows)
    for fam in families:
        print(f"{fam} best in {report.win_fraction(fam):.0%} of fitted windows")
    for note in report.skipped:
        print(f"note: {note}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    workload = composer.deserialize(args.input)
    rows = analyzer.stats_rows(analyzer.summarize(workload, args.window))
    if args.table:
        with open(args.table, "w", newline="") as fh:
            if rows:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
                writer.writeheader()
                writer.writerows(rows)
    if args.format == "json":
        _emit(args, _clean(rows))
    else:
        _table(rows)
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = composer.deserialize(args.a), composer.deserialize(args.b)
    _emit(args, _clean(analyzer.compare(a, b, args.window).to_dict()))
    return EXIT_OK


def _latency(args) -> replayer.LatencyModel:
    return replayer.LatencyModel(
        ttft_base=args.ttft_base,
        prefill_per_1k=args.prefill_per_1k,
        per_token=args.per_token,
        jitter=args.jitter,
        max_concurrency=args.max_concurrency,
        seed=getattr(args, "seed", 0),
    )


def _with_endpoint(args, fn):
    if args.mock == bool(args.endpoint):
        raise UsageError("give exactly one of --endpoint or --mock")
    if args.endpoint:
        return fn(args.endpoint)
    with replayer.mock_process(_latency(args)) as url:
        return fn(url)


def _replay_config(args, endpoint: str) -> replayer.ReplayConfig:
    return replayer.ReplayConfig(
        endpoint=endpoint,
        speedup=args.speedup,
        max_in_flight=args.max_in_flight,
        timeout=args.timeout,
        model=args.model,
    )


def cmd_replay(args) -> int:
    workload = composer.deserialize(args.input)
    metrics, summary = _with_endpoint(args, lambda url: replayer.replay(workload, _replay_config(args, url)))
    if args.metrics_out:
        with open(args.metrics_out, "w") as fh:
            for m in metrics:
                fh.write(json.dumps(_clean(m.to_dict())) + "\n")
    verdict = replayer.slo_verdict(summary, args.slo_ttft, args.slo_tbt)
    _emit(args, _clean({"summary": summary, "slo": verdict}) if args.format == "json" else {**summary, "slo": verdict["reason"]})
    return EXIT_SLO if args.slo and not verdict["pass"] else EXIT_OK


def cmd_mock_serve(args) -> int:
    replayer.mock_serve(_latency(args), args.host, args.port)
    return EXIT_OK


def cmd_slo_search(args) -> int:
    template = composer.deserialize(args.input)

    def search(url):
        return replayer.slo_search(
            template,
            _replay_config(args, url),
            (args.slo_ttft, args.slo_tbt),
            args.low,
            args.high,
            args.rel_tol,
            args.max_probes,
        )

    result = _with_endpoint(args, search)
    _emit(args, _clean(result.to_dict()) if args.format == "json" else {
        "verdict": result.verdict,
        "rate": result.rate,
        "bracket": list(result.bracket),
        "probes": len(result.probes),
    })
    return EXIT_SLO if result.verdict == "unmeetable" else EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "analyze": cmd_analyze,
    "compare": cmd_compare,
    "replay": cmd_replay,
    "mock-serve": cmd_mock_serve,
    "slo-search": cmd_slo_search,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
        return COMMANDS[args.verb](args)
    except SystemExit as exc:
        return int(exc.code or 0) if not isinstance(exc.code, str) else EXIT_USAGE
    except UsageError as exc:
        print(f"llmload: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        OSError,
        composer.WorkloadParseError,
        PoolError,
        CoverageError,
        sm.ParameterError,
        sm.DegenerateDataError,
        ValueError,
        replayer.ReplayError,
    ) as exc:
        print(f"llmload: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
