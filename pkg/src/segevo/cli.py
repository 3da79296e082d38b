"""Command-line front end.

Subcommands: attack, evaluate, stats, replay, gen-config. Setting precedence,
highest first: SEGEVO_* environment variables, then keys in the --config
file, then command-line flags, then built-in defaults. Exit codes: 0 success,
1 configuration error, 2 partial failure (failed entries, drift, or data
errors).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from ._kv import read_kv_file
from .campaign import (
    CampaignConfig,
    cmd_attack,
    cmd_evaluate,
    cmd_replay,
    cmd_stats,
    print_failures,
    read_iou_table,
    write_evaluate_csv,
    write_stats_outputs,
)
from .dataset_io import EXPORT_PSNR_THRESHOLD, LayoutConfig, load_dataset
from .errors import (
    ConfigError,
    DriftDetected,
    InvalidConfig,
    ToolkitError,
)
from .evolution import GaConfig
from .oracle import DEFAULT_TIMEOUT, make_oracle
from .stats import POLICY_AUTO
from .transforms import ParameterBounds, default_bounds

ENV_PREFIX = "SEGEVO_"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors follow the exit-code contract."""

    def error(self, message):
        raise _UsageError(message)


def _cast_int(value) -> int:
    return value if isinstance(value, int) else int(str(value), 0)


def _cast_float(value) -> float:
    return float(value)


class _Settings:
    """Resolves one named setting across env, config file, and flags."""

    def __init__(self, config_path: str | None):
        self.file_values = read_kv_file(config_path) if config_path else {}

    def get(self, name: str, flag_value, cast=None, default=None):
        for value in (
            os.environ.get(ENV_PREFIX + name.upper()),
            self.file_values.get(name),
            flag_value,
        ):
            if value is None:
                continue
            if cast is None:
                return value
            try:
                return cast(value)
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {name}: {value!r}") from None
        return default


def _load_layout(path: str | None) -> LayoutConfig:
    return LayoutConfig.from_file(path) if path else LayoutConfig()


def _load_bounds(path: str | None) -> ParameterBounds:
    return ParameterBounds.from_file(path) if path else default_bounds()


def _load_ga(path: str | None) -> GaConfig:
    return GaConfig.from_file(path) if path else GaConfig()


def _run_attack(args) -> int:
    s = _Settings(args.config)
    dataset_root = s.get("dataset_root", args.dataset)
    if dataset_root is None:
        raise ConfigError("attack needs a dataset root (--dataset or dataset_root)")
    out_root = s.get("out_root", args.out)
    if out_root is None:
        raise ConfigError("attack needs an output root (--out or out_root)")
    ga = _load_ga(s.get("ga_config", args.ga_config))
    seed = s.get("master_seed", args.seed, cast=_cast_int)
    if seed is not None:
        ga = replace(ga, master_seed=seed)
    repeat = s.get("repeat", args.repeat, cast=_cast_int, default=1)
    stride = s.get("seed_stride", args.seed_stride, cast=_cast_int, default=1)
    if repeat < 1:
        raise ConfigError("repeat must be >= 1")
    base = CampaignConfig(
        dataset_root=Path(dataset_root),
        out_root=Path(out_root),
        oracle=s.get("oracle", args.oracle, default="builtin-palette"),
        layout=_load_layout(s.get("layout", args.layout)),
        ga=ga,
        bounds=_load_bounds(s.get("bounds", args.bounds)),
        parallel_workers=s.get("parallel_workers", args.workers, cast=_cast_int, default=1),
        per_image_time_budget=s.get("per_image_time_budget", args.time_budget, cast=_cast_float),
        oracle_timeout=s.get("oracle_timeout", args.oracle_timeout,
                             cast=_cast_float, default=DEFAULT_TIMEOUT),
        export_threshold=s.get("export_threshold", args.export_threshold,
                               cast=_cast_float, default=EXPORT_PSNR_THRESHOLD),
    )
    exit_code = 0
    for k in range(repeat):
        cfg = base if repeat == 1 else replace(
            base,
            ga=replace(ga, master_seed=ga.master_seed + k * stride),
            out_root=base.out_root / f"run{k:03d}",
        )
        manifest = cmd_attack(cfg)
        if manifest.failures:
            print_failures(manifest)
            exit_code = 2
    return exit_code


def _run_evaluate(args) -> int:
    s = _Settings(args.config)
    dataset_root = s.get("dataset_root", args.dataset)
    if dataset_root is None:
        raise ConfigError("evaluate needs a dataset root (--dataset or dataset_root)")
    layout = _load_layout(s.get("layout", args.layout))
    dataset = load_dataset(dataset_root, layout)
    oracle = make_oracle(
        s.get("oracle", args.oracle, default="builtin-palette"),
        timeout=s.get("oracle_timeout", args.oracle_timeout,
                      cast=_cast_float, default=DEFAULT_TIMEOUT),
    )
    try:
        report = cmd_evaluate(dataset, oracle)
    finally:
        if hasattr(oracle, "close"):
            oracle.close()
    if args.out:
        write_evaluate_csv(report, args.out)
        print(f"wrote {len(report.rows)} rows to {args.out}")
    else:
        for row in report.rows:
            print(f"{row.id}\t{row.mean_iou:.6f}")
    aggregate = "n/a" if report.aggregate is None else f"{report.aggregate:.6f}"
    print(f"mean IoU over set: {aggregate}")
    return 0


def _run_stats(args) -> int:
    s = _Settings(args.config)
    table_a = read_iou_table(args.table_a)
    table_b = read_iou_table(args.table_b)
    labels = (
        s.get("label_a", args.label_a, default=Path(args.table_a).stem),
        s.get("label_b", args.label_b, default=Path(args.table_b).stem),
    )
    report = cmd_stats(
        table_a, table_b, labels=labels,
        mode_policy=s.get("mode_policy", args.mode_policy, default=POLICY_AUTO),
    )
    out_dir = s.get("out_dir", args.out_dir)
    if out_dir:
        write_stats_outputs(report, table_a, table_b, out_dir)
        print(f"wrote comparison.csv, violin.csv, report.json to {out_dir}")
    if report.wilcoxon is not None:
        w = report.wilcoxon
        print(f"wilcoxon[{labels[0]} vs {labels[1]}]: W={w.statistic} "
              f"p={w.p_value:.6g} n={w.n_effective} mode={w.mode}")
    else:
        print(f"wilcoxon[{labels[0]} vs {labels[1]}]: warning: {report.wilcoxon_warning}")
    if report.cohens is not None:
        print(f"cohens_d: {report.cohens.d:.6g}")
    else:
        print(f"cohens_d: warning: {report.cohens_warning}")
    return 0


def _run_replay(args) -> int:
    s = _Settings(args.config)
    dataset_root = s.get("dataset_root", args.dataset)
    if dataset_root is None:
        raise ConfigError("replay needs the clean dataset root (--dataset or dataset_root)")
    report = cmd_replay(
        args.manifest,
        dataset_root,
        layout=_load_layout(s.get("layout", args.layout)),
        oracle_spec=s.get("oracle", args.oracle, default="builtin-palette"),
        oracle_timeout=s.get("oracle_timeout", args.oracle_timeout,
                             cast=_cast_float, default=DEFAULT_TIMEOUT),
    )
    print(f"replay: {report.verified} of {report.checked} entries verified, zero drift")
    return 0


_CAMPAIGN_TEMPLATE = """\
# Attack campaign settings. Keys here override command-line flags;
# SEGEVO_<KEY> environment variables override keys here.
#
# dataset_root = ./corpus
# out_root = ./attack-out
# oracle = builtin-palette          # or cmd:<command>, tcp:<host>:<port>
# parallel_workers = 1
# per_image_time_budget = 60       # seconds per image, unset = unlimited
# oracle_timeout = 30
# export_threshold = 20.0          # retention is strictly greater-than
# master_seed = 0
# repeat = 1
# seed_stride = 1
# ga_config = ga.cfg
# bounds = bounds.cfg
# layout = layout.cfg
"""


def _kv_lines(snapshot: dict) -> str:
    return "\n".join(f"{key} = {value}" for key, value in snapshot.items()) + "\n"


def _run_gen_config(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "campaign.cfg").write_text(_CAMPAIGN_TEMPLATE, encoding="utf-8")
    (out_dir / "ga.cfg").write_text(_kv_lines(GaConfig().to_snapshot()), encoding="utf-8")
    (out_dir / "bounds.cfg").write_text(default_bounds().to_text(), encoding="utf-8")
    (out_dir / "layout.cfg").write_text(_kv_lines(LayoutConfig().to_snapshot()), encoding="utf-8")
    for name in ("campaign.cfg", "ga.cfg", "bounds.cfg", "layout.cfg"):
        print(out_dir / name)
    return 0


def _add_common(sub, *, dataset_help: str):
    sub.add_argument("--config", help="key-value settings file (overrides flags)")
    sub.add_argument("--dataset", help=dataset_help)
    sub.add_argument("--layout", help="directory-layout settings file")
    sub.add_argument("--oracle", help="builtin-palette, cmd:<command>, or tcp:<host>:<port>")
    sub.add_argument("--oracle-timeout", help="seconds to wait per oracle request")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="segevo",
        description="Evolve fidelity-constrained distortion programs that "
                    "degrade a segmentation model, and analyze the results.",
    )
    subs = parser.add_subparsers(dest="command")

    attack = subs.add_parser("attack", help="run the genetic attack over a dataset")
    _add_common(attack, dataset_help="clean dataset root")
    attack.add_argument("--out", help="output root for images, traces, manifest")
    attack.add_argument("--ga-config", help="engine hyperparameter file")
    attack.add_argument("--bounds", help="distortion parameter bounds file")
    attack.add_argument("--seed", help="master seed (overrides the GA config file)")
    attack.add_argument("--workers", help="parallel worker processes")
    attack.add_argument("--time-budget", help="seconds of evolution per image")
    attack.add_argument("--export-threshold", help="PSNR retention gate in dB")
    attack.add_argument("--repeat", help="repeat the whole run N times")
    attack.add_argument("--seed-stride", help="master-seed increment between repeats")
    attack.set_defaults(handler=_run_attack)

    evaluate = subs.add_parser("evaluate", help="score a dataset against an oracle")
    _add_common(evaluate, dataset_help="dataset root to score")
    evaluate.add_argument("--out", help="write the IoU table CSV here instead of stdout")
    evaluate.set_defaults(handler=_run_evaluate)

    stats = subs.add_parser("stats", help="compare two per-image IoU tables")
    stats.add_argument("table_a", help="first evaluate CSV")
    stats.add_argument("table_b", help="second evaluate CSV")
    stats.add_argument("--config", help="key-value settings file (overrides flags)")
    stats.add_argument("--label-a", help="method name for the first table")
    stats.add_argument("--label-b", help="method name for the second table")
    stats.add_argument("--out-dir", help="write comparison.csv, violin.csv, report.json here")
    stats.add_argument("--mode-policy", help="Wilcoxon mode: auto, exact, or approx")
    stats.set_defaults(handler=_run_stats)

    replay = subs.add_parser("replay", help="verify a manifest reproduces its artifacts")
    replay.add_argument("manifest", help="manifest.jsonl from an attack run")
    _add_common(replay, dataset_help="clean dataset root the manifest refers to")
    replay.set_defaults(handler=_run_replay)

    gen_config = subs.add_parser("gen-config", help="write template settings files")
    gen_config.add_argument("--out-dir", default="segevo-config")
    gen_config.set_defaults(handler=_run_gen_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "handler", None) is None:
            parser.print_help(sys.stderr)
            return 1
        return args.handler(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, InvalidConfig) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DriftDetected as exc:
        print(f"drift detected: {exc}", file=sys.stderr)
        for entry_id, reason in exc.entries:
            print(f"  {entry_id}: {reason}", file=sys.stderr)
        return 2
    except ToolkitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
