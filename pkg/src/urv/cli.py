"""Command-line front end: single verification runs and strategy benches.

Exit codes: 0 for an Unknown-with-confidence conclusion, 1 when the
property is falsified (Unsafe), 2 for usage, file, or configuration
errors.  `--json` swaps the human-readable report for one that validates
against the schema shipped at urv/report_schema.json.
"""

import argparse
import csv
import io
import json
import re
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import network as network_mod
from . import properties as properties_mod
from . import verifier as verifier_mod
from .errors import ConfigError, ParseError, UrvError
from .underapprox import DimOrder, Pruning, StrategyConfig

_ORDER_BY_NAME = {
    "pure": DimOrder.NATURAL,
    "natural": DimOrder.NATURAL,
    "rf": DimOrder.RANDOM_FIRST,
    "mf": DimOrder.MAXIMAL_FIRST,
}
_PRUNING_BY_NAME = {
    "none": Pruning.NONE,
    "tp": Pruning.TOP_POLYTOPE,
    "ctp": Pruning.COMPLETE_TOP_POLYTOPE,
}
DEFAULT_GRID = "pure,rf+tp,rf+ctp,mf+tp,mf+ctp"


def report_schema() -> dict:
    """The published JSON schema for run reports."""
    text = resources.files("urv").joinpath("report_schema.json").read_text()
    return json.loads(text)


@dataclass
class RunReport:
    """Everything one verification run reports."""

    verdict: str  # unsafe | unknown | config_error
    ve: int
    vt_ms: float
    seed: int
    strategy: str
    epochs_bound: int
    cl: Optional[float] = None
    witness: Optional[List[float]] = None
    witness_input: Optional[List[float]] = None
    source: Optional[str] = None
    epoch: Optional[int] = None
    network: Optional[str] = None
    property: Optional[str] = None
    samples_checked: Optional[int] = None
    error: Optional[str] = None
    epoch_times_ms: Optional[List[float]] = None  # not part of the JSON report

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "cl": self.cl,
            "ve": self.ve,
            "vt_ms": self.vt_ms,
            "seed": self.seed,
            "witness": self.witness,
            "witness_input": self.witness_input,
            "source": self.source,
            "epoch": self.epoch,
            "network": self.network,
            "property": self.property,
            "strategy": self.strategy,
            "epochs_bound": self.epochs_bound,
            "samples_checked": self.samples_checked,
            "error": self.error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"verdict: {self.verdict}"]
        if self.error is not None:
            lines.append(f"error: {self.error}")
        if self.source == "reach_epoch":
            lines.append(f"source: reachability epoch {self.epoch}")
        elif self.source == "sample":
            lines.append("source: sample check")
        if self.witness is not None:
            lines.append(f"witness output: {self.witness}")
        if self.witness_input is not None:
            lines.append(f"witness input: {self.witness_input}")
        if self.cl is not None:
            lines.append(f"confidence: {self.cl:.4f}")
        if self.samples_checked is not None:
            lines.append(f"samples checked: {self.samples_checked}")
        lines.append(f"epochs run: {self.ve} of {self.epochs_bound}")
        lines.append(f"time: {self.vt_ms:.1f} ms")
        lines.append(f"seed: {self.seed}")
        lines.append(f"strategy: {self.strategy}")
        return "\n".join(lines) + "\n"


def _strategy_from_args(args) -> StrategyConfig:
    return StrategyConfig(
        dim_order=_ORDER_BY_NAME[args.strategy],
        pruning=_PRUNING_BY_NAME[args.pruning],
        mua_restarts=args.mua,
    )


def parse_grid_cell(token: str) -> StrategyConfig:
    """Bench grid cell like 'pure', 'rf+tp', 'mf+ctp'."""
    parts = token.strip().lower().split("+")
    if not parts or parts[0] not in _ORDER_BY_NAME:
        raise ConfigError(f"unknown strategy token {token!r}")
    order = _ORDER_BY_NAME[parts[0]]
    pruning = Pruning.NONE
    for extra in parts[1:]:
        if extra not in _PRUNING_BY_NAME:
            raise ConfigError(f"unknown pruning token {extra!r} in {token!r}")
        pruning = _PRUNING_BY_NAME[extra]
    return StrategyConfig(dim_order=order, pruning=pruning)


def _load_network(path: str) -> network_mod.Network:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"network file not found: {path}")
    try:
        return network_mod.parse_network(p.read_text())
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _load_property(args, net: network_mod.Network) -> properties_mod.PropertySpec:
    if args.acas_prop is not None and args.property is not None:
        raise ConfigError("give either a property file or --acas-prop, not both")
    if args.acas_prop is not None:
        prop = properties_mod.acasxu_property(args.acas_prop)
        _warn_if_selector_mismatch(args.network, prop)
        return prop
    if args.property is None:
        raise ConfigError("a property file or --acas-prop is required")
    p = Path(args.property)
    if not p.is_file():
        raise ConfigError(f"property file not found: {args.property}")
    parsed = properties_mod.parse_property(p.read_text())
    return parsed.to_spec(output_dim=net.output_dim, name=p.stem)


def _warn_if_selector_mismatch(network_path: str, prop: properties_mod.PropertySpec):
    match = re.search(r"_(\d)_(\d)", Path(network_path).name)
    if match:
        x, y = int(match.group(1)), int(match.group(2))
        if not prop.applies_to.applies(x, y):
            print(
                f"warning: {prop.name} is defined for {prop.applies_to.describe()}, "
                f"file name suggests network {x},{y}",
                file=sys.stderr,
            )


def _unsafe_report_fields(net, verdict) -> dict:
    witness = verdict.witness
    witness_list = [float(v) for v in witness]
    if net.normalization is not None:
        witness_list = [float(v) for v in network_mod.denormalize_output(net, witness)]
    fields = {"witness": witness_list}
    if isinstance(verdict.source, verifier_mod.ReachEpoch):
        fields["source"] = "reach_epoch"
        fields["epoch"] = verdict.source.epoch
    else:
        fields["source"] = "sample"
        point = verdict.source.input_point
        if net.normalization is not None:
            point = network_mod.denormalize_input(net, point)
        fields["witness_input"] = [float(v) for v in point]
    return fields


def execute_run(
    net: network_mod.Network,
    prop: properties_mod.PropertySpec,
    cfg: verifier_mod.VerifierConfig,
    network_path: Optional[str] = None,
) -> RunReport:
    """Run verify() and package the outcome as a report."""
    epoch_times: List[float] = []

    def on_epoch(_epoch: int, seconds: float):
        epoch_times.append(seconds * 1000.0)

    start = time.perf_counter()
    verdict = verifier_mod.verify(net, prop, cfg, on_epoch=on_epoch)
    vt_ms = (time.perf_counter() - start) * 1000.0

    base = dict(
        seed=cfg.master_seed,
        strategy=cfg.strategy.describe(),
        epochs_bound=cfg.epochs,
        vt_ms=vt_ms,
        network=network_path,
        property=prop.name,
        epoch_times_ms=epoch_times,
    )
    if isinstance(verdict, verifier_mod.Unsafe):
        fields = _unsafe_report_fields(net, verdict)
        if fields["source"] == "sample":
            base["samples_checked"] = cfg.sample_count
        return RunReport(verdict="unsafe", ve=verdict.epochs_run, **fields, **base)
    return RunReport(
        verdict="unknown",
        ve=verdict.epochs_run,
        cl=verdict.cl,
        samples_checked=verdict.samples_checked,
        **base,
    )


def run_single(args) -> int:
    net = _load_network(args.network)
    prop = _load_property(args, net)
    cfg = verifier_mod.VerifierConfig(
        epochs=args.epochs,
        timeout_ms=args.timeout_ms,
        sample_count=args.samples,
        strategy=_strategy_from_args(args),
        master_seed=args.seed,
        parallelism=args.parallel,
    )
    report = execute_run(net, prop, cfg, network_path=args.network)
    sys.stdout.write(report.to_json() if args.json else report.to_text())
    return 1 if report.verdict == "unsafe" else 0


def read_manifest(path: str) -> List[Tuple[str, str]]:
    """(network, property) pairs; paths are relative to the manifest."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"manifest file not found: {path}")
    pairs = []
    base = p.parent
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(
                f"{path}:{lineno}: manifest lines are '<network> <property>'"
            )
        net_path = str((base / parts[0]).resolve()) if not Path(parts[0]).is_absolute() else parts[0]
        prop_ref = parts[1]
        if not prop_ref.startswith("acas:") and not Path(prop_ref).is_absolute():
            prop_ref = str((base / prop_ref).resolve())
        pairs.append((net_path, prop_ref))
    if not pairs:
        raise ConfigError(f"manifest {path} names no (network, property) pairs")
    return pairs


@dataclass
class BenchCell:
    network: str
    property: str
    strategy: str
    trials: int
    unsafe: int
    mean_ve: float
    mean_vt_ms: float


def run_bench_cells(args) -> List[BenchCell]:
    pairs = read_manifest(args.manifest)
    cells = [(token.strip(), parse_grid_cell(token)) for token in args.grid.split(",") if token.strip()]
    if not cells:
        raise ConfigError("empty strategy grid")
    results: List[BenchCell] = []
    for net_path, prop_ref in pairs:
        net = _load_network(net_path)
        if prop_ref.startswith("acas:"):
            prop = properties_mod.acasxu_property(int(prop_ref.split(":", 1)[1]))
            prop_name = prop.name
        else:
            fp = Path(prop_ref)
            if not fp.is_file():
                raise ConfigError(f"property file not found: {prop_ref}")
            prop = properties_mod.parse_property(fp.read_text()).to_spec(
                output_dim=net.output_dim, name=fp.stem
            )
            prop_name = fp.name
        for token, strategy in cells:
            unsafe = 0
            ves: List[int] = []
            vts: List[float] = []
            for trial in range(args.trials):
                cfg = verifier_mod.VerifierConfig(
                    epochs=args.epochs,
                    timeout_ms=args.timeout_ms,
                    sample_count=args.samples,
                    strategy=strategy,
                    master_seed=args.seed + trial,
                    parallelism=args.parallel,
                )
                report = execute_run(net, prop, cfg, network_path=net_path)
                if report.verdict == "unsafe":
                    unsafe += 1
                ves.append(report.ve)
                vts.append(report.vt_ms)
            results.append(
                BenchCell(
                    network=Path(net_path).name,
                    property=prop_name,
                    strategy=token.strip().lower(),
                    trials=args.trials,
                    unsafe=unsafe,
                    mean_ve=float(np.mean(ves)),
                    mean_vt_ms=float(np.mean(vts)),
                )
            )
    return results


def render_bench_csv(cells: List[BenchCell]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["network", "property", "strategy", "trials", "unsafe", "mean_ve", "mean_vt_ms"])
    for c in cells:
        writer.writerow(
            [c.network, c.property, c.strategy, c.trials, c.unsafe, f"{c.mean_ve:.2f}", f"{c.mean_vt_ms:.3f}"]
        )
    return buf.getvalue()


def render_bench_text(cells: List[BenchCell]) -> str:
    header = ["network", "property", "strategy", "trials", "unsafe", "mean_ve", "mean_vt_ms"]
    rows = [
        [c.network, c.property, c.strategy, str(c.trials), str(c.unsafe), f"{c.mean_ve:.2f}", f"{c.mean_vt_ms:.3f}"]
        for c in cells
    ]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header)] + [fmt.format(*row) for row in rows]
    return "\n".join(lines) + "\n"


def run_bench(args) -> int:
    cells = run_bench_cells(args)
    sys.stdout.write(render_bench_csv(cells) if args.csv else render_bench_text(cells))
    return 0


def _add_run_flags(sub, bench: bool):
    sub.add_argument("--epochs", type=int, default=1000, help="epoch bound per run")
    sub.add_argument("--timeout-ms", type=int, default=60_000, help="per-run wall clock budget")
    sub.add_argument("--samples", type=int, default=10_000, help="sample-check size")
    sub.add_argument("--seed", type=int, default=0, help="master seed (trial i uses seed+i in bench mode)")
    sub.add_argument("--mua", type=int, default=1, metavar="K", help="replacement-selection restarts")
    sub.add_argument("--parallel", type=int, default=1, metavar="W", help="concurrent epoch workers")
    if not bench:
        sub.add_argument("--strategy", choices=sorted(_ORDER_BY_NAME), default="rf", help="dimension ordering")
        sub.add_argument("--pruning", choices=sorted(_PRUNING_BY_NAME), default="tp", help="branch pruning")
        sub.add_argument("--json", action="store_true", help="machine-readable report on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="urv",
        description="Falsify (or confirm with confidence) safety properties of ReLU networks",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    run = subs.add_parser("verify", help="verify one (network, property) pair")
    run.add_argument("network", help="network file (URVNET v1 or NNet)")
    run.add_argument("property", nargs="?", help="property file (URVPROP v1)")
    run.add_argument("--acas-prop", type=int, choices=range(1, 11), metavar="1..10",
                     help="built-in ACAS Xu property instead of a file")
    _add_run_flags(run, bench=False)

    bench = subs.add_parser("bench", help="strategy-grid benchmark over a manifest")
    bench.add_argument("manifest", nargs="?", help="manifest of '<network> <property>' lines")
    bench.add_argument("--bench", dest="manifest_flag", metavar="MANIFEST",
                       help="alternative way to pass the manifest")
    bench.add_argument("--trials", type=int, default=20, help="independent runs per cell")
    bench.add_argument("--grid", default=DEFAULT_GRID, help="comma-separated strategy cells")
    bench.add_argument("--csv", action="store_true", help="CSV instead of a text table")
    _add_run_flags(bench, bench=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return run_single(args)
        manifest = args.manifest_flag or args.manifest
        if manifest is None:
            raise ConfigError("bench needs a manifest (positional or --bench)")
        args.manifest = manifest
        return run_bench(args)
    except UrvError as exc:
        if getattr(args, "json", False):
            report = RunReport(
                verdict="config_error",
                ve=0,
                vt_ms=0.0,
                seed=getattr(args, "seed", 0),
                strategy="-",
                epochs_bound=max(1, getattr(args, "epochs", 1)),
                error=str(exc),
                network=getattr(args, "network", None),
            )
            sys.stdout.write(report.to_json())
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
