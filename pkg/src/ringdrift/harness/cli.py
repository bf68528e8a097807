"""Command-line entry point: ``ringdrift <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 calibration divergence.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from ..errors import Diverged, DidNotConverge, IoError, SchemaError, ShapeMismatch
from .config import ScenarioConfig, load_scenario, scenario_from_dict
from .fixture import save_fixture, train_fixture
from .runner import run_scenario
from .trace import emit_trace

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3
log = logging.getLogger("ringdrift")


def bundled_scenario(name: str) -> Path:
    return Path(str(resources.files("ringdrift.scenarios").joinpath(name)))


def resolve_scenario(args) -> ScenarioConfig:
    """Load ``--scenario`` (a path or bundled file name) and apply flag overrides."""
    if args.scenario is None:
        cfg = ScenarioConfig()
    else:
        path = Path(args.scenario)
        if not path.exists() and bundled_scenario(args.scenario).exists():
            path = bundled_scenario(args.scenario)
        cfg = load_scenario(path)
    doc = cfg.model_dump(mode="json")
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "no_remediation", False):
        doc["remediation"] = False
    if getattr(args, "periodic_remap", None) is not None:
        doc["remap"]["periodic_interval"] = args.periodic_remap
        doc["remap"]["enabled"] = True
    # the preset was already expanded into ``noise``
    doc.pop("preset", None)
    return scenario_from_dict(doc)


def _fmt(path: Path, explicit: str | None) -> str:
    if explicit:
        return explicit
    return "json" if path.suffix == ".json" else "csv"


def cmd_train_fixture(args) -> int:
    fx = train_fixture(epochs=args.epochs, seed=args.seed if args.seed is not None else 0)
    save_fixture(fx, args.out)
    log.info("fixture written to %s (clean accuracy %.4f)", args.out, fx.clean_accuracy)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = resolve_scenario(args)
    trace = run_scenario(cfg)
    out = Path(args.out)
    emit_trace(trace, out, _fmt(out, args.format))
    final = trace.final
    print(
        f"{cfg.name}: final accuracy {final['accuracy']:.4f} "
        f"(clean {trace.manifest['clean_accuracy']:.4f}), overhead {trace.overhead:.2%}, "
        f"{len(trace.events)} remediation events -> {out}"
    )
    return EXIT_OK


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


SWEEP_COLUMNS = ("sparsity", "cooling_time", "probes", "method", "final_accuracy", "min_accuracy", "overhead", "events")


def cmd_sweep(args) -> int:
    base = resolve_scenario(args).model_dump(mode="json")
    base.pop("preset", None)
    grid = itertools.product(_floats(args.sparsity), _ints(args.cooling), _ints(args.probes), args.method.split(","))
    rows = []
    for beta, tau, m, method in grid:
        doc = json.loads(json.dumps(base))
        doc["calibration"].update(sparsity=beta, probes=m)
        doc["remap"].update(probes=m, method=method)
        doc["controller"]["cooling_time"] = tau
        doc["controller"]["monitor_period"] = min(doc["controller"]["monitor_period"], tau)
        trace = run_scenario(scenario_from_dict(doc))
        acc = trace.column("accuracy")
        rows.append((beta, tau, m, method, trace.final["accuracy"], min(acc), trace.overhead, len(trace.events)))
        log.info("beta=%s tau=%s m=%s method=%s -> %.4f", beta, tau, m, method, trace.final["accuracy"])
    out = Path(args.out)
    try:
        with out.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SWEEP_COLUMNS)
            writer.writerows(rows)
    except OSError as exc:
        raise IoError(f"cannot write {out}: {exc}") from None
    print(f"{len(rows)} sweep points -> {out}")
    return EXIT_OK


PLOT_COLUMNS = ("mode", "step", "accuracy", "nmae", "mean_temp_K", "overhead", "decision")


def cmd_emit_plots_data(args) -> int:
    """Accuracy-over-time series with remediation off and on, in one long-format CSV."""
    base = resolve_scenario(args).model_dump(mode="json")
    base.pop("preset", None)
    out = Path(args.out)
    lines = []
    for mode, enabled in (("no_remediation", False), ("remediated", True)):
        trace = run_scenario(scenario_from_dict({**base, "remediation": enabled}))
        for row in trace.rows:
            extra = row["probe_cycles"] + row["calibration_cycles"] + row["remap_cycles"]
            ovh = extra / row["inference_cycles"] if row["inference_cycles"] else 0.0
            lines.append((mode, row["step"], row["accuracy"], row["nmae"], row["mean_temp_K"], ovh, row["decision"]))
    try:
        with out.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(PLOT_COLUMNS)
            writer.writerows(lines)
    except OSError as exc:
        raise IoError(f"cannot write {out}: {exc}") from None
    print(f"plot data ({len(lines)} rows) -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ringdrift", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_flags(p, out_default):
        p.add_argument("--scenario", help="scenario file (JSON/YAML) or bundled scenario name")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=out_default)
        p.add_argument("--no-remediation", action="store_true")
        p.add_argument("--periodic-remap", type=int, metavar="N", help="remap every N steps instead of on controller triggers")

    p = sub.add_parser("train-fixture", help="train the MLP fixture and write it as JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--out", default="mlp_fixture.json")
    p.set_defaults(func=cmd_train_fixture)

    p = sub.add_parser("run", help="simulate one scenario and write its trace")
    scenario_flags(p, "trace.csv")
    p.add_argument("--format", choices=("csv", "json"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid over sparsity, cooling time, probes and remap cost method")
    scenario_flags(p, "sweep.csv")
    p.add_argument("--sparsity", default="0.2", help="comma-separated calibration sparsities")
    p.add_argument("--cooling", default="200", help="comma-separated cooling times (steps)")
    p.add_argument("--probes", default="1", help="comma-separated probe counts m")
    p.add_argument("--method", default="first_order", help="comma-separated remap cost methods")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("emit-plots-data", help="accuracy traces with and without remediation")
    scenario_flags(p, "plots.csv")
    p.set_defaults(func=cmd_emit_plots_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (SchemaError, ShapeMismatch, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Diverged as exc:
        print(f"calibration diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DidNotConverge as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return 1
    except (IoError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
