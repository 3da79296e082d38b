"""Dataset-scale orchestration: run the genetic attack per image, evaluate a
corpus against an oracle, compare two result tables statistically, and replay
a manifest to audit reproducibility.

Entries are processed by a worker pool (one oracle connection per worker
process) and results are reduced in entry-id order, so the manifest bytes do
not depend on the worker count. Per-entry randomness is derived from the
master seed and the entry id, so subsetting a corpus never shifts the
randomness of the remaining entries.
"""

from __future__ import annotations

import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .dataset_io import (
    EXPORT_PSNR_THRESHOLD,
    DatasetEntry,
    DatasetIndex,
    LayoutConfig,
    ManifestWriter,
    RunManifest,
    export_adversarial,
    load_dataset,
    load_image,
    load_labels,
    load_manifest,
)
from .errors import (
    AllZeroDifferences,
    ConfigError,
    DegenerateVariance,
    DriftDetected,
    IdMismatch,
    InvalidConfig,
    MalformedPayload,
    OracleError,
    OracleFailure,
    OracleTimeout,
    ProtocolError,
    ToolkitError,
    TooFewSamples,
)
from .evolution import FitnessRecord, GaConfig, evolve
from .genome import GenomeConfig, decode, encode, to_transform_sequence
from .imaging import iou, psnr
from .oracle import DEFAULT_TIMEOUT, PaletteSegmenter, make_oracle
from .stats import (
    POLICY_AUTO,
    CohensDResult,
    DistributionSummary,
    PairedSamples,
    WilcoxonResult,
    cohens_d,
    summarize_distribution,
    wilcoxon_signed_rank,
)
from .transforms import ParameterBounds, apply_sequence, default_bounds


@dataclass(frozen=True)
class CampaignConfig:
    """Everything one attack run needs."""

    dataset_root: Path
    out_root: Path
    oracle: str = "builtin-palette"
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    bounds: ParameterBounds = field(default_factory=default_bounds)
    parallel_workers: int = 1
    per_image_time_budget: float | None = None
    oracle_timeout: float = DEFAULT_TIMEOUT
    export_threshold: float = EXPORT_PSNR_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "dataset_root", Path(self.dataset_root))
        object.__setattr__(self, "out_root", Path(self.out_root))
        if not self.dataset_root.is_dir():
            raise ConfigError(f"dataset root {self.dataset_root} is not a directory")
        if self.parallel_workers < 1:
            raise ConfigError("parallel_workers must be >= 1")
        if self.per_image_time_budget is not None and self.per_image_time_budget <= 0:
            raise ConfigError("per_image_time_budget must be positive when set")


def derive_entry_seed(master_seed: int, entry_id: str) -> int:
    """Stable 64-bit per-entry seed from the campaign seed and entry id."""
    blob = f"{master_seed}\x00{entry_id}".encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


# Worker-process oracle cache: one connection per (endpoint, timeout) per
# process, as remote connections are single-request serial.
_ORACLE_CACHE: dict = {}


def _worker_oracle(spec: str, timeout: float):
    key = (spec, timeout)
    oracle = _ORACLE_CACHE.get(key)
    if oracle is None:
        oracle = make_oracle(spec, timeout=timeout)
        _ORACLE_CACHE[key] = oracle
    return oracle


def _attack_entry(task: dict) -> dict:
    """Run one GA attack; returns a plain-dict result (picklable)."""
    entry_id = task["entry_id"]
    out_root = Path(task["out_root"])
    try:
        original = load_image(task["image_path"])
        truth = load_labels(task["label_path"])
        try:
            oracle = _worker_oracle(task["oracle_spec"], task["oracle_timeout"])
            clean_iou = iou(oracle.segment(original), truth).mean_iou
        except (ProtocolError, OracleError, OracleTimeout, InvalidConfig) as exc:
            raise OracleFailure(f"oracle {task['oracle_spec']!r} unusable: {exc}") from exc
        cfg = replace(task["ga"], master_seed=derive_entry_seed(task["ga"].master_seed, entry_id))
        genome = GenomeConfig(
            height=original.height,
            width=original.width,
            channels=original.channels,
            bounds=task["bounds"],
        )
        best, trace = evolve(
            original, truth, oracle, cfg,
            genome=genome, time_budget=task["time_budget"],
        )
        trace_path = out_root / "traces" / f"{entry_id}.json"
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        trace_path.write_text(
            json.dumps(trace.to_json_dict(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        record = trace.best_record
        if record.iou is None or not (record.psnr > task["export_threshold"]):
            return {
                "id": entry_id, "ok": False,
                "error": f"GateViolation: best candidate psnr {record.psnr:.4f} dB "
                         f"is not above {task['export_threshold']} dB",
            }
        entry = DatasetEntry(
            id=entry_id,
            image_path=Path(task["image_path"]),
            label_path=Path(task["label_path"]),
        )
        distorted = apply_sequence(original, to_transform_sequence(best))
        out_path = export_adversarial(
            entry, distorted, record, best, out_root,
            layout=task["layout"], export_threshold=task["export_threshold"],
        )
        return {
            "id": entry_id,
            "ok": True,
            "chromosome": encode(best).hex(),
            "fitness": record.fitness,
            "iou": record.iou,
            "psnr": record.psnr,
            "output_path": str(out_path.relative_to(out_root)),
            "clean_iou": clean_iou,
        }
    except ToolkitError as exc:
        return {"id": entry_id, "ok": False, "error": f"{type(exc).__name__}: {exc}"}
    except OSError as exc:
        return {"id": entry_id, "ok": False, "error": f"OSError: {exc}"}


def _oracle_descriptor(cfg: CampaignConfig) -> str:
    if cfg.oracle == "builtin-palette":
        return PaletteSegmenter().descriptor
    return cfg.oracle


def _mean(values) -> float | None:
    values = list(values)
    return sum(values) / len(values) if values else None


def cmd_attack(cfg: CampaignConfig, quiet: bool = False) -> RunManifest:
    """Attack every dataset entry; write images, traces and the manifest.

    Per-entry errors become failure records rather than aborting the run;
    the caller decides the exit code from manifest.failures.
    """
    dataset = load_dataset(cfg.dataset_root, cfg.layout)
    cfg.out_root.mkdir(parents=True, exist_ok=True)
    tasks = [
        {
            "entry_id": entry.id,
            "image_path": str(entry.image_path),
            "label_path": str(entry.label_path),
            "oracle_spec": cfg.oracle,
            "oracle_timeout": cfg.oracle_timeout,
            "ga": cfg.ga,
            "bounds": cfg.bounds,
            "layout": cfg.layout,
            "out_root": str(cfg.out_root),
            "export_threshold": cfg.export_threshold,
            "time_budget": cfg.per_image_time_budget,
        }
        for entry in dataset
    ]
    if cfg.parallel_workers == 1 or len(tasks) <= 1:
        results = [_attack_entry(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.parallel_workers) as pool:
            results = list(pool.map(_attack_entry, tasks))
    results.sort(key=lambda r: r["id"])
    exported = [r for r in results if r["ok"]]
    failed = [r for r in results if not r["ok"]]

    manifest_path = cfg.out_root / "manifest.jsonl"
    with ManifestWriter(manifest_path) as writer:
        writer.write_header(
            master_seed=cfg.ga.master_seed,
            ga_snapshot=cfg.ga.to_snapshot(),
            bounds_snapshot=cfg.bounds.to_snapshot(),
            oracle_descriptor=_oracle_descriptor(cfg),
        )
        for r in exported:
            writer.write_entry(
                entry_id=r["id"],
                chromosome=decode(bytes.fromhex(r["chromosome"])),
                record=FitnessRecord(fitness=r["fitness"], iou=r["iou"],
                                     psnr=r["psnr"], generation=0),
                output_path=r["output_path"],
            )
        for r in failed:
            writer.write_failure(entry_id=r["id"], error=r["error"])
        writer.write_summary(
            entries=len(exported),
            failures=len(failed),
            clean_miou=_mean(r["clean_iou"] for r in exported),
            adversarial_miou=_mean(r["iou"] for r in exported),
            mean_psnr=_mean(r["psnr"] for r in exported),
        )
    manifest = load_manifest(manifest_path)
    if not quiet:
        s = manifest.summary
        def fmt(x):
            return "n/a" if x is None else f"{x:.4f}"
        print(
            f"attack seed={cfg.ga.master_seed}: {len(exported)} exported, "
            f"{len(failed)} failed | clean mIoU {fmt(s.get('clean_miou'))} | "
            f"adversarial mIoU {fmt(s.get('adversarial_miou'))} | "
            f"mean PSNR {fmt(s.get('mean_psnr'))} dB"
        )
    return manifest


@dataclass(frozen=True)
class EvaluateRow:
    id: str
    mean_iou: float
    per_class: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class EvaluateReport:
    rows: tuple[EvaluateRow, ...]
    aggregate: float | None


def cmd_evaluate(dataset: DatasetIndex, oracle) -> EvaluateReport:
    """Segment every entry and score it against its truth labels."""
    rows = []
    for entry in dataset:
        image = load_image(entry.image_path)
        truth = load_labels(entry.label_path)
        report = iou(oracle.segment(image), truth)
        rows.append(EvaluateRow(
            id=entry.id,
            mean_iou=report.mean_iou,
            per_class=tuple(sorted(report.per_class.items())),
        ))
    aggregate = _mean(row.mean_iou for row in rows)
    return EvaluateReport(rows=tuple(rows), aggregate=aggregate)


def format_per_class(per_class) -> str:
    return ";".join(f"{cls}:{value!r}" for cls, value in per_class)


def write_evaluate_csv(report: EvaluateReport, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["id,mean_iou,per_class"]
    for row in report.rows:
        lines.append(f"{row.id},{row.mean_iou!r},{format_per_class(row.per_class)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_iou_table(path) -> dict[str, float]:
    """id -> mean_iou from an evaluate CSV (extra columns ignored)."""
    path = Path(path)
    table: dict[str, float] = {}
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ConfigError(f"{path}: empty IoU table")
    header = lines[0].split(",")
    if header[:2] != ["id", "mean_iou"]:
        raise ConfigError(f"{path}: expected header starting 'id,mean_iou', got {lines[0]!r}")
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) < 2:
            raise ConfigError(f"{path}:{line_no}: malformed row {line!r}")
        entry_id = parts[0]
        if entry_id in table:
            raise ConfigError(f"{path}:{line_no}: duplicate id {entry_id!r}")
        try:
            table[entry_id] = float(parts[1])
        except ValueError:
            raise ConfigError(f"{path}:{line_no}: bad mean_iou {parts[1]!r}") from None
    return table


@dataclass(frozen=True)
class StatsReport:
    labels: tuple[str, str]
    n_pairs: int
    wilcoxon: WilcoxonResult | None
    wilcoxon_warning: str | None
    cohens: CohensDResult | None
    cohens_warning: str | None
    summaries: tuple[tuple[str, DistributionSummary], ...]
    metadata: dict


def cmd_stats(
    table_a: dict[str, float],
    table_b: dict[str, float],
    labels: tuple[str, str] = ("a", "b"),
    mode_policy: str = POLICY_AUTO,
) -> StatsReport:
    """Pair two per-image IoU tables by id and compare them."""
    only_a = sorted(set(table_a) - set(table_b))
    only_b = sorted(set(table_b) - set(table_a))
    if only_a or only_b:
        raise IdMismatch(
            f"tables do not cover the same ids (only in {labels[0]}: {only_a}; "
            f"only in {labels[1]}: {only_b})",
            only_a=only_a, only_b=only_b,
        )
    ids = sorted(table_a)
    if not ids:
        raise ConfigError("IoU tables are empty")
    a = tuple(table_a[i] for i in ids)
    b = tuple(table_b[i] for i in ids)
    samples = PairedSamples(a=a, b=b, labels=labels)
    wilcoxon = wilcoxon_warning = None
    try:
        wilcoxon = wilcoxon_signed_rank(samples, mode_policy=mode_policy)
    except AllZeroDifferences as exc:
        wilcoxon_warning = str(exc)
    cohens = cohens_warning = None
    try:
        cohens = cohens_d(a, b)
    except (DegenerateVariance, TooFewSamples) as exc:
        cohens_warning = str(exc)
    return StatsReport(
        labels=labels,
        n_pairs=len(ids),
        wilcoxon=wilcoxon,
        wilcoxon_warning=wilcoxon_warning,
        cohens=cohens,
        cohens_warning=cohens_warning,
        summaries=(
            (labels[0], summarize_distribution(a)),
            (labels[1], summarize_distribution(b)),
        ),
        metadata={
            "quantile_definition": "linear interpolation between order statistics",
            "zero_difference_policy": "zero paired differences dropped before ranking",
            "pooling": "one sample per image id; tables paired by id",
            "mode_policy": mode_policy,
        },
    )


def write_stats_outputs(report: StatsReport, table_a: dict[str, float],
                        table_b: dict[str, float], out_dir):
    """comparison.csv, violin.csv and report.json under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    a_label, b_label = report.labels

    if report.wilcoxon is not None:
        w = report.wilcoxon
        row = f"{a_label},{b_label},{w.statistic!r},{w.p_value!r},{w.mode},{w.n_effective}"
    else:
        row = f"{a_label},{b_label},,,all_zero_differences,0"
    (out_dir / "comparison.csv").write_text(
        "method_a,method_b,statistic,p_value,mode,n_effective\n" + row + "\n",
        encoding="utf-8",
    )

    violin = ["method,image,iou"]
    for label, table in ((a_label, table_a), (b_label, table_b)):
        for entry_id in sorted(table):
            violin.append(f"{label},{entry_id},{table[entry_id]!r}")
    (out_dir / "violin.csv").write_text("\n".join(violin) + "\n", encoding="utf-8")

    doc = {
        "labels": list(report.labels),
        "n_pairs": report.n_pairs,
        "wilcoxon": None if report.wilcoxon is None else {
            "statistic": report.wilcoxon.statistic,
            "p_value": report.wilcoxon.p_value,
            "n_effective": report.wilcoxon.n_effective,
            "mode": report.wilcoxon.mode,
        },
        "wilcoxon_warning": report.wilcoxon_warning,
        "cohens_d": None if report.cohens is None else {
            "d": report.cohens.d,
            "group_means": list(report.cohens.group_means),
            "group_sds": list(report.cohens.group_sds),
        },
        "cohens_d_warning": report.cohens_warning,
        "summaries": {
            label: vars(summary) for label, summary in report.summaries
        },
        "metadata": report.metadata,
    }
    (out_dir / "report.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


@dataclass(frozen=True)
class ReplayReport:
    checked: int
    verified: int


def cmd_replay(
    manifest_path,
    dataset_root,
    layout: LayoutConfig | None = None,
    oracle_spec: str = "builtin-palette",
    oracle_timeout: float = DEFAULT_TIMEOUT,
) -> ReplayReport:
    """Re-apply every manifest chromosome and verify the exported artifacts.

    Checks, per entry: the chromosome decodes; the source entry exists; the
    re-applied distortion reproduces the exported pixels exactly; recorded
    PSNR and IoU match recomputation; the PSNR retention gate holds. Any
    discrepancy raises DriftDetected listing (id, reason) pairs.
    """
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    layout = layout or LayoutConfig()
    dataset = load_dataset(dataset_root, layout)
    by_id = {entry.id: entry for entry in dataset}
    oracle = make_oracle(oracle_spec, timeout=oracle_timeout)
    drift: list[tuple[str, str]] = []
    checked = 0

    for record in manifest.entries:
        entry_id = record.get("id", "<missing id>")
        checked += 1
        try:
            ch = decode(bytes.fromhex(record["chromosome"]))
        except (MalformedPayload, ValueError, KeyError) as exc:
            drift.append((entry_id, f"chromosome does not decode: {exc}"))
            continue
        entry = by_id.get(entry_id)
        if entry is None:
            drift.append((entry_id, "source entry missing from the dataset"))
            continue
        original = load_image(entry.image_path)
        truth = load_labels(entry.label_path)
        exported_path = manifest_path.parent / record["output_path"]
        if not exported_path.is_file():
            drift.append((entry_id, f"exported file missing: {exported_path}"))
            continue
        distorted = apply_sequence(original, to_transform_sequence(ch))
        exported = load_image(exported_path)
        if exported != distorted:
            drift.append((entry_id, "exported pixels differ from the re-applied distortion"))
            continue
        actual_psnr = psnr(original, distorted)
        if not _close(actual_psnr, record.get("psnr")):
            drift.append((entry_id, f"psnr drift: recorded {record.get('psnr')}, recomputed {actual_psnr}"))
            continue
        if not (actual_psnr > EXPORT_PSNR_THRESHOLD):
            drift.append((entry_id, f"psnr {actual_psnr} violates the retention gate"))
            continue
        actual_iou = iou(oracle.segment(distorted), truth).mean_iou
        if not _close(actual_iou, record.get("iou")):
            drift.append((entry_id, f"iou drift: recorded {record.get('iou')}, recomputed {actual_iou}"))
            continue
    if drift:
        raise DriftDetected(f"{len(drift)} of {checked} entries drifted", entries=tuple(drift))
    return ReplayReport(checked=checked, verified=checked)


def _close(actual: float, recorded) -> bool:
    if recorded is None:
        return False
    recorded = float(recorded)
    if actual == recorded:
        return True
    return abs(actual - recorded) <= 1e-9 * max(abs(actual), abs(recorded))


def print_failures(manifest: RunManifest, stream=None):
    stream = stream or sys.stderr
    for failure in manifest.failures:
        print(f"  failed {failure.get('id')}: {failure.get('error')}", file=stream)
