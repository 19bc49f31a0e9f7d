"""Command-line interface.

Subcommands: ``kappa`` (model/hardware ratio tables), ``roofline`` (CSV
sweeps), ``analyze`` (trace expansion and distribution summaries), ``synth``
(synthetic timed streams), ``simulate`` (scheduler simulation and policy
comparison).

Every output carries a manifest block recording the tool version, command
line, catalog hash, and seed, so re-running with the recorded inputs
reproduces byte-identical files. Internals are SI units; tables display
KB/GFLOP and GFLOP/KB unless ``--si`` is given.

Exit codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from . import analytics, roofline, workload
from .catalog import (
    HardwareSpec,
    ModelSpec,
    by_name,
    default_catalog,
    default_catalog_text,
    load_catalog,
)
from .errors import KvroofError
from .simulator import (
    AgingCredits,
    ITERATION_CSV_COLUMNS,
    SimConfig,
    SimReport,
    compare_policies,
    run_sim,
)

ENV_CATALOG = "KVROOF_CATALOG"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3


@dataclass(frozen=True)
class RunManifest:
    """Provenance block embedded in every output."""

    tool: str
    command: list[str]
    catalog: str
    catalog_sha256: str
    seed: Optional[int] = None

    def as_dict(self) -> dict:
        out = {
            "tool": self.tool,
            "command": self.command,
            "catalog": self.catalog,
            "catalog_sha256": self.catalog_sha256,
        }
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    def as_comment(self) -> str:
        return "manifest " + json.dumps(self.as_dict(), sort_keys=True)


def _load_active_catalog(path_arg: Optional[str]):
    path = path_arg or os.environ.get(ENV_CATALOG)
    if path:
        models, hardware = load_catalog(path)
        text = Path(path).read_text()
        label = str(path)
    else:
        models, hardware = default_catalog()
        text = default_catalog_text()
        label = "<bundled>"
    digest = hashlib.sha256(text.encode()).hexdigest()
    return models, hardware, label, digest


def _manifest(args, label: str, digest: str, seed: Optional[int] = None) -> RunManifest:
    return RunManifest(
        tool=f"kvroof {__version__}",
        command=list(args._argv),
        catalog=label,
        catalog_sha256=digest,
        seed=seed,
    )


def _pick(pool: dict, names: Optional[str], kind: str) -> list:
    if not names or names == "all":
        return list(pool.values())
    chosen = []
    for name in names.split(","):
        name = name.strip()
        if name not in pool:
            available = ", ".join(sorted(pool))
            raise KvroofError(f"unknown {kind} '{name}'; available: {available}")
        chosen.append(pool[name])
    return chosen


# --- kappa ------------------------------------------------------------------

def _cmd_kappa(args) -> int:
    models, hardware, label, digest = _load_active_catalog(args.catalog)
    chosen_models = _pick(by_name(models), args.models, "model")
    chosen_hw = _pick(by_name(hardware), args.hw, "hardware")
    use_sustained = args.bandwidth == "sustained"
    rows = []
    for m in chosen_models:
        for h in chosen_hw:
            km = analytics.kappa_model(m)
            kh = analytics.kappa_hw(h, use_sustained)
            kc = analytics.kappa_crit(m, h, use_sustained)
            if args.si:
                rows.append((m.name, h.name, f"{km:.6e}", f"{kh:.6e}", f"{kc:.4f}"))
            else:
                rows.append((m.name, h.name, f"{km / 1e6:.4f}", f"{kh * 1e6:.4f}", f"{kc:.4f}"))
    km_unit = "kappa_m[FLOP/B]" if args.si else "kappa_m[GFLOP/KB]"
    kh_unit = "kappa_hw[B/FLOP]" if args.si else "kappa_hw[KB/GFLOP]"
    header = ("model", "hardware", km_unit, kh_unit, "kappa_crit")
    widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(5)]
    out = sys.stdout
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)), file=out)
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)), file=out)
    print(f"# {_manifest(args, label, digest).as_comment()}", file=out)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(f"# {_manifest(args, label, digest).as_comment()}\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    return EXIT_OK


# --- roofline ----------------------------------------------------------------

def _cmd_roofline(args) -> int:
    models, hardware, label, digest = _load_active_catalog(args.catalog)
    model = _pick(by_name(models), args.model, "model")[0]
    chosen_hw = _pick(by_name(hardware), args.hw, "hardware")
    series = roofline.roofline_sweep(
        model,
        chosen_hw,
        kappa_min=args.kappa_min,
        kappa_max=args.kappa_max,
        points_per_decade=args.points_per_decade,
        use_sustained=args.bandwidth == "sustained",
    )
    try:
        roofline.write_series_csv(series, args.out, _manifest(args, label, digest).as_comment())
    except OSError as exc:
        raise KvroofError(f"cannot write '{args.out}': {exc}") from exc
    print(f"wrote {sum(len(s.points) for s in series)} points for {len(series)} series to {args.out}")
    return EXIT_OK


# --- analyze ------------------------------------------------------------------

def _cmd_analyze(args) -> int:
    _, _, label, digest = _load_active_catalog(args.catalog)
    if args.kind == "conversation":
        traces = workload.read_conversations(args.trace)
        records = [r for tr in traces for r in workload.expand_conversation(tr)]
    else:
        traces = workload.read_documents(args.trace)
        records = [r for tr in traces for r in workload.expand_document(tr)]
    if not records:
        raise KvroofError(f"trace file '{args.trace}' produced no requests")
    summary = workload.summarize(records)
    print(f"requests: {summary.count}")
    for title, stats in (
        ("prefill_tokens (T)", summary.prefill_tokens),
        ("cached_tokens (K)", summary.cached_tokens),
        ("kappa_ratio (K/T)", summary.kappa_ratio),
    ):
        pcts = "  ".join(f"p{p}={stats.percentiles[p]:g}" for p in workload.PERCENTILES)
        print(f"{title}: mean={stats.mean:.4g}  min={stats.minimum:g}  max={stats.maximum:g}  {pcts}")
    print(f"# {_manifest(args, label, digest).as_comment()}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(f"# {_manifest(args, label, digest).as_comment()}\n")
            writer = csv.writer(fh)
            writer.writerow(["source_id", "cached_tokens", "prefill_tokens", "kappa_ratio"])
            for r in records:
                writer.writerow([r.source_id, r.cached_tokens, r.prefill_tokens, repr(r.kappa_ratio)])
    return EXIT_OK


# --- synth --------------------------------------------------------------------

def _cmd_synth(args) -> int:
    _, _, label, digest = _load_active_catalog(args.catalog)
    profile = workload.PROFILE_ALIASES.get(args.profile)
    if profile is None:
        raise KvroofError(
            f"unknown profile '{args.profile}'; available: {', '.join(sorted(workload.PROFILE_ALIASES))}"
        )
    records = workload.synthesize_stream(profile, rps=args.rps, duration_s=args.duration, seed=args.seed)
    manifest = _manifest(args, label, digest, seed=args.seed)
    workload.write_stream(records, args.out, manifest=manifest.as_dict())
    print(f"wrote {len(records)} requests to {args.out}")
    return EXIT_OK


# --- simulate -----------------------------------------------------------------

def _resolve_spec(value, pool: dict, builder, kind: str):
    if isinstance(value, str):
        if value not in pool:
            available = ", ".join(sorted(pool))
            raise KvroofError(f"config references unknown {kind} '{value}'; available: {available}")
        return pool[value]
    if isinstance(value, dict):
        return builder(**value)
    raise KvroofError(f"config field '{kind}' must be a catalog name or an inline object")


def _load_sim_config(path: str, models: dict, hardware: dict) -> tuple[SimConfig, AgingCredits]:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise KvroofError(f"cannot read config '{path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise KvroofError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if "model" not in doc or "hardware" not in doc:
        raise KvroofError(f"{path}: config needs 'model' and 'hardware' entries")
    model = _resolve_spec(doc["model"], models, ModelSpec, "model")
    hw = _resolve_spec(doc["hardware"], hardware, HardwareSpec, "hardware")
    if "vram_effective" in doc:
        import dataclasses

        hw = dataclasses.replace(hw, vram_effective=float(doc["vram_effective"]))
    power = doc.get("power", {})
    config = SimConfig(
        model=model,
        hardware=hw,
        bandwidth_mode=doc.get("bandwidth_mode", "sustained"),
        token_budget=int(doc.get("token_budget", 4000)),
        overlap_alpha=float(doc.get("overlap_alpha", 0.0)),
        allow_chunked_prefill=bool(doc.get("allow_chunked_prefill", True)),
        idle_watts=power.get("idle_watts"),
        peak_watts=power.get("peak_watts"),
    )
    aging_doc = doc.get("aging", {})
    aging = AgingCredits(
        credit_per_second=float(aging_doc.get("credit_per_second", 1.0)),
        credit_weight=float(aging_doc.get("credit_weight", 1.0)),
    )
    return config, aging


def _write_report(report: SimReport, out_dir: Path, suffix: str, manifest: RunManifest) -> None:
    doc = {"manifest": manifest.as_dict(), "report": report.to_dict()}
    (out_dir / f"report{suffix}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    with open(out_dir / f"iterations{suffix}.csv", "w", newline="") as fh:
        fh.write(f"# {manifest.as_comment()}\n")
        writer = csv.writer(fh)
        writer.writerow(ITERATION_CSV_COLUMNS)
        writer.writerows(report.iteration_rows())


def _cmd_simulate(args) -> int:
    models, hardware, label, digest = _load_active_catalog(args.catalog)
    config, aging = _load_sim_config(args.config, by_name(models), by_name(hardware))
    records = workload.read_stream(args.stream)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, label, digest, seed=args.seed)
    if args.compare:
        comparison = compare_policies(config, records, ("fifo", "utilization"), aging)
        for name, rep in comparison.reports:
            _write_report(rep, out_dir, f"_{name}", manifest)
        doc = {"manifest": manifest.as_dict(), "comparison": comparison.to_dict()}
        (out_dir / "comparison.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        counts = comparison.iteration_counts()
        print("iterations per policy: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    else:
        report = run_sim(config, records, args.policy, aging)
        _write_report(report, out_dir, "", manifest)
        print(
            f"{args.policy}: {len(report.iterations)} iterations, "
            f"mean scheduled tokens {report.mean_scheduled_tokens:.1f}, "
            f"completed {report.completed}, rejected {len(report.rejected)}"
        )
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvroof",
        description="Performance modeling for prefill serving with offloaded KV caches.",
    )
    parser.add_argument("--version", action="version", version=f"kvroof {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, seed: bool = False) -> None:
        p.add_argument("--catalog", help=f"catalog JSON path (default: ${ENV_CATALOG} or bundled)")
        p.add_argument(
            "--bandwidth",
            choices=("peak", "sustained"),
            default="sustained",
            help="which link bandwidth figure to use (default: sustained)",
        )
        if seed:
            p.add_argument("--seed", type=int, default=0, help="RNG seed (default: 0)")

    p = sub.add_parser("kappa", help="print model/hardware/critical ratio tables")
    common(p)
    p.add_argument("--models", default="all", help="comma-separated model names (default: all)")
    p.add_argument("--hw", default="all", help="comma-separated hardware names (default: all)")
    p.add_argument("--si", action="store_true", help="print raw byte/FLOP values instead of KB/GFLOP")
    p.add_argument("--out", help="also write the table as CSV")
    p.set_defaults(func=_cmd_kappa)

    p = sub.add_parser("roofline", help="write roofline sweep CSV over the K/T ratio")
    common(p)
    p.add_argument("--model", required=True, help="model name")
    p.add_argument("--hw", default="all", help="comma-separated hardware names (default: all)")
    p.add_argument("--kappa-min", type=float, default=0.1)
    p.add_argument("--kappa-max", type=float, default=1e5)
    p.add_argument("--points-per-decade", type=int, default=16)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_roofline)

    p = sub.add_parser("analyze", help="expand a trace file and summarize K, T, K/T")
    common(p)
    p.add_argument("trace", help="JSON Lines trace file")
    p.add_argument("--kind", choices=("conversation", "document"), required=True)
    p.add_argument("--out", help="write expanded request records as CSV")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("synth", help="synthesize a timed request stream")
    common(p, seed=True)
    p.add_argument(
        "--profile",
        default="sharegpt",
        help="stream profile: sharegpt, narrativeqa, or finqa (default: sharegpt)",
    )
    p.add_argument("--rps", type=float, required=True, help="mean arrival rate, requests/s")
    p.add_argument("--duration", type=float, required=True, help="stream length, seconds")
    p.add_argument("--out", required=True, help="output JSON Lines path")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("simulate", help="run the iteration-level scheduler simulation")
    common(p, seed=True)
    p.add_argument("--config", required=True, help="simulation config JSON")
    p.add_argument("--stream", required=True, help="JSON Lines stream file")
    p.add_argument("--policy", choices=("fifo", "utilization"), default="fifo")
    p.add_argument("--compare", action="store_true", help="run both policies on the same stream")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_simulate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    args = parser.parse_args(argv)
    args._argv = ["kvroof"] + argv
    try:
        return args.func(args)
    except KvroofError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
