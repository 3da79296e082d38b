"""Corpus loading, adversarial export with an append-only manifest, and
synthetic scene generation for self-contained experiments.

All rasters are PNG (lossless; a lossy container would silently change PSNR).
Labels are single-channel, stored 16-bit. The manifest is line-delimited JSON:
one header line, one line per exported entry or failure, one summary line.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image as PilImage
from PIL import UnidentifiedImageError

from ._kv import coerce_int, parse_kv_text, read_kv_file
from .errors import (
    ConfigError,
    DecodeError,
    GateViolation,
    InvalidSpec,
    MissingLabel,
    ShapeMismatch,
)
from .evolution import FitnessRecord
from .genome import Chromosome, decode, encode
from .imaging import Image, LabelMap
from .oracle import DEFAULT_CENTROIDS
from .transforms import make_rng

EXPORT_PSNR_THRESHOLD = 20.0  # retention is strictly greater-than


@dataclass(frozen=True)
class LayoutConfig:
    """Directory layout: images and labels pair by shared file stem."""

    images_dir: str = "images"
    labels_dir: str = "labels"
    image_suffix: str = ".png"
    label_suffix: str = ".png"
    class_count: int = 5

    def __post_init__(self):
        for name in ("images_dir", "labels_dir"):
            value = getattr(self, name)
            if not value or "/" in value or value in (".", ".."):
                raise ConfigError(f"{name} must be a plain directory name, got {value!r}")
        for name in ("image_suffix", "label_suffix"):
            if not getattr(self, name).startswith("."):
                raise ConfigError(f"{name} must start with a dot")
        if self.class_count < 1:
            raise ConfigError("class_count must be >= 1")

    @classmethod
    def from_mapping(cls, raw: dict[str, str], source: str = "layout") -> "LayoutConfig":
        kwargs: dict = {}
        for key, value in raw.items():
            if key not in cls.__dataclass_fields__:
                raise ConfigError(f"{source}: unknown layout key {key!r}")
            kwargs[key] = coerce_int(raw, key, source) if key == "class_count" else value
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "LayoutConfig":
        return cls.from_mapping(parse_kv_text(text, source), source)

    @classmethod
    def from_file(cls, path) -> "LayoutConfig":
        return cls.from_mapping(read_kv_file(path), str(path))

    def to_snapshot(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class DatasetEntry:
    id: str
    image_path: Path
    label_path: Path


@dataclass(frozen=True)
class DatasetIndex:
    entries: tuple[DatasetEntry, ...]
    class_count: int

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def load_image(path) -> Image:
    """Decode an 8-bit RGB (or grayscale) raster."""
    try:
        with PilImage.open(path) as img:
            if img.mode in ("L", "I;16", "I"):
                converted = img.convert("L")
                arr = np.asarray(converted, dtype=np.uint8)
            else:
                arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc
    return Image(arr)


def load_labels(path) -> LabelMap:
    """Decode a single-channel 8- or 16-bit label raster."""
    try:
        with PilImage.open(path) as img:
            mode = img.mode
            if mode == "L":
                arr = np.asarray(img, dtype=np.uint16)
            elif mode in ("I;16", "I"):
                arr = np.asarray(img, dtype=np.int64)
                if arr.min() < 0 or arr.max() > 0xFFFF:
                    raise DecodeError(
                        f"label values in {path} fall outside uint16: "
                        f"[{arr.min()}, {arr.max()}]"
                    )
                arr = arr.astype(np.uint16)
            else:
                raise DecodeError(f"labels must be single-channel, {path} has mode {mode!r}")
    except (UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode labels {path}: {exc}") from exc
    return LabelMap(arr)


def save_image(img: Image, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = img.samples[:, :, 0] if img.channels == 1 else img.samples
    PilImage.fromarray(arr).save(path, format="PNG")
    return path


def save_labels(labels: LabelMap, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raster = PilImage.fromarray(labels.labels)  # uint16 maps to 16-bit grayscale
    raster.save(path, format="PNG")
    return path


def _raster_size(path) -> tuple[int, int]:
    """(height, width) from the file header without a full decode."""
    try:
        with PilImage.open(path) as img:
            width, height = img.size
    except (UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    return height, width


def load_dataset(root_path, layout: LayoutConfig | None = None) -> DatasetIndex:
    """Index a corpus directory; ids order lexicographically.

    Pairs every <images_dir>/<id><image_suffix> with
    <labels_dir>/<id><label_suffix> and verifies existence and matching
    raster sizes up front. Decoding full pixel data is left to the caller.
    """
    layout = layout or LayoutConfig()
    root = Path(root_path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    images_dir = root / layout.images_dir
    labels_dir = root / layout.labels_dir
    if not images_dir.is_dir():
        return DatasetIndex(entries=(), class_count=layout.class_count)
    entries = []
    for image_path in sorted(images_dir.glob(f"*{layout.image_suffix}")):
        entry_id = image_path.name[: -len(layout.image_suffix)]
        label_path = labels_dir / f"{entry_id}{layout.label_suffix}"
        if not label_path.is_file():
            raise MissingLabel(f"entry {entry_id!r} has no label file at {label_path}")
        image_size = _raster_size(image_path)
        label_size = _raster_size(label_path)
        if image_size != label_size:
            raise ShapeMismatch(
                f"entry {entry_id!r}: image is {image_size}, label is {label_size}"
            )
        entries.append(DatasetEntry(id=entry_id, image_path=image_path, label_path=label_path))
    return DatasetIndex(entries=tuple(entries), class_count=layout.class_count)


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _tool_version() -> str:
    from . import __version__

    return __version__


class ManifestWriter:
    """Append-only line-delimited JSON manifest; one writer per file."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")

    def _write(self, record: dict):
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def write_header(self, *, master_seed: int, ga_snapshot: dict,
                     bounds_snapshot: dict, oracle_descriptor: str):
        self._write({
            "type": "header",
            "tool_version": _tool_version(),
            "master_seed": master_seed,
            "ga_config": ga_snapshot,
            "bounds": bounds_snapshot,
            "oracle": oracle_descriptor,
            "started_at": _utc_now(),
        })

    def write_entry(self, *, entry_id: str, chromosome: Chromosome,
                    record: FitnessRecord, output_path: str):
        self._write({
            "type": "entry",
            "id": entry_id,
            "chromosome": encode(chromosome).hex(),
            "fitness": record.fitness,
            "iou": record.iou,
            "psnr": record.psnr,
            "output_path": output_path,
        })

    def write_failure(self, *, entry_id: str, error: str):
        self._write({"type": "failure", "id": entry_id, "error": error})

    def write_summary(self, **fields):
        self._write({"type": "summary", "finished_at": _utc_now(), **fields})

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
        return False


@dataclass
class RunManifest:
    header: dict = field(default_factory=dict)
    entries: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def load_manifest(path) -> RunManifest:
    manifest = RunManifest()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DecodeError(f"{path}:{line_no}: bad manifest line: {exc}") from exc
            kind = record.get("type")
            if kind == "header":
                manifest.header = record
            elif kind == "entry":
                manifest.entries.append(record)
            elif kind == "failure":
                manifest.failures.append(record)
            elif kind == "summary":
                manifest.summary = record
            else:
                raise DecodeError(f"{path}:{line_no}: unknown manifest line type {kind!r}")
    return manifest


def verify_manifest(manifest: RunManifest,
                    export_threshold: float = EXPORT_PSNR_THRESHOLD) -> list[str]:
    """Offline re-check of manifest invariants; returns violation strings."""
    problems = []
    for record in manifest.entries:
        if not (record.get("psnr", 0.0) > export_threshold):
            problems.append(
                f"entry {record.get('id')}: psnr {record.get('psnr')} not above "
                f"{export_threshold}"
            )
        try:
            decode(bytes.fromhex(record.get("chromosome", "")))
        except Exception as exc:
            problems.append(f"entry {record.get('id')}: chromosome does not decode: {exc}")
    return problems


def manifest_differences(a: RunManifest, b: RunManifest, *,
                         ignore_oracle: bool = False) -> list[str]:
    """Field-level comparison ignoring timestamps; empty list means equal."""

    def cleaned(record: dict) -> dict:
        out = {k: v for k, v in record.items() if k not in ("started_at", "finished_at")}
        if ignore_oracle:
            out.pop("oracle", None)
        return out

    diffs = []
    if cleaned(a.header) != cleaned(b.header):
        diffs.append(f"header: {cleaned(a.header)} != {cleaned(b.header)}")
    if len(a.entries) != len(b.entries):
        diffs.append(f"entry count: {len(a.entries)} != {len(b.entries)}")
    else:
        for left, right in zip(a.entries, b.entries):
            if left != right:
                diffs.append(f"entry {left.get('id')}: {left} != {right}")
    if a.failures != b.failures:
        diffs.append(f"failures: {a.failures} != {b.failures}")
    if cleaned(a.summary) != cleaned(b.summary):
        diffs.append(f"summary: {cleaned(a.summary)} != {cleaned(b.summary)}")
    return diffs


def export_adversarial(
    entry: DatasetEntry,
    distorted: Image,
    record: FitnessRecord,
    ch: Chromosome,
    out_root,
    *,
    layout: LayoutConfig | None = None,
    export_threshold: float = EXPORT_PSNR_THRESHOLD,
    writer: ManifestWriter | None = None,
) -> Path:
    """Write one adversarial image and its manifest record.

    Retention is strict: a PSNR at or below the threshold is refused. The
    clean label file is copied alongside so the output directory is itself a
    loadable dataset. The image hits disk before the manifest line, so a
    manifest record always points at an existing file.
    """
    if not (record.psnr > export_threshold):
        raise GateViolation(
            f"entry {entry.id!r}: psnr {record.psnr:.4f} dB is not above the "
            f"{export_threshold} dB retention threshold"
        )
    layout = layout or LayoutConfig()
    out_root = Path(out_root)
    image_path = out_root / layout.images_dir / f"{entry.id}{layout.image_suffix}"
    save_image(distorted, image_path)
    label_path = out_root / layout.labels_dir / f"{entry.id}{layout.label_suffix}"
    label_path.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(entry.label_path, label_path)
    if writer is not None:
        writer.write_entry(
            entry_id=entry.id,
            chromosome=ch,
            record=record,
            output_path=str(image_path.relative_to(out_root)),
        )
    return image_path


# ---------------------------------------------------------------------------
# Synthetic scenes

_DEFAULT_PALETTE: dict[int, tuple[int, int, int]] = {
    cls: color for cls, color in DEFAULT_CENTROIDS
}


@dataclass(frozen=True)
class SceneRegion:
    """Axis-aligned rectangle of one class, in pixel coordinates."""

    class_id: int
    top: int
    left: int
    height: int
    width: int


@dataclass(frozen=True)
class SceneSpec:
    """A background class plus rectangles painted in list order (later
    regions overwrite earlier ones, so overlap is never ambiguous)."""

    height: int
    width: int
    background_class: int = 0
    regions: tuple[SceneRegion, ...] = ()
    palette: tuple[tuple[int, tuple[int, int, int]], ...] = tuple(_DEFAULT_PALETTE.items())
    color_jitter: int = 0


def synth_scene(spec: SceneSpec, seed: int = 0) -> tuple[Image, LabelMap]:
    """Render a scene to (Image, LabelMap); labels are exact by construction.

    Colors come from the palette, optionally jittered by a uniform integer
    offset in [-color_jitter, +color_jitter] per sample (clipped to byte
    range). Deterministic in (spec, seed).
    """
    if spec.height < 1 or spec.width < 1:
        raise InvalidSpec(f"scene size {spec.height}x{spec.width} must be positive")
    if spec.color_jitter < 0:
        raise InvalidSpec("color_jitter must be >= 0")
    palette = {int(cls): tuple(color) for cls, color in spec.palette}
    if spec.background_class not in palette:
        raise InvalidSpec(f"background class {spec.background_class} is not in the palette")
    labels = np.full((spec.height, spec.width), spec.background_class, dtype=np.uint16)
    for region in spec.regions:
        if region.class_id not in palette:
            raise InvalidSpec(f"region class {region.class_id} is not in the palette")
        if region.height < 1 or region.width < 1:
            raise InvalidSpec(f"region {region} has empty extent")
        if (region.top < 0 or region.left < 0
                or region.top + region.height > spec.height
                or region.left + region.width > spec.width):
            raise InvalidSpec(f"region {region} exceeds the {spec.height}x{spec.width} scene")
        labels[region.top: region.top + region.height,
               region.left: region.left + region.width] = region.class_id
    max_class = max(palette)
    colors = np.zeros((max_class + 1, 3), dtype=np.int32)
    for cls, color in palette.items():
        colors[cls] = color
    pixels = colors[labels]
    if spec.color_jitter:
        rng = make_rng(seed)
        pixels = pixels + rng.integers(-spec.color_jitter, spec.color_jitter + 1,
                                       size=pixels.shape, dtype=np.int32)
    pixels = np.clip(pixels, 0, 255).astype(np.uint8)
    return Image(pixels), LabelMap(labels)


def demo_scene_spec(height: int, width: int, rng: np.random.Generator,
                    jitter: int = 6) -> SceneSpec:
    """One randomized scene containing every palette class: four accent
    rectangles on the background, each anchored near its own quadrant so
    classes stay present at any supported size."""
    if height < 16 or width < 16:
        raise InvalidSpec("demo scenes need at least a 16x16 canvas")
    regions = []
    anchors = ((0.08, 0.08), (0.08, 0.55), (0.55, 0.08), (0.55, 0.55))
    for class_id, (fy, fx) in zip((1, 2, 3, 4), anchors):
        rh = int(height * 0.28) + int(rng.integers(0, max(2, height // 10)))
        rw = int(width * 0.28) + int(rng.integers(0, max(2, width // 10)))
        top = int(height * fy) + int(rng.integers(0, max(2, height // 16)))
        left = int(width * fx) + int(rng.integers(0, max(2, width // 16)))
        rh = min(rh, height - top)
        rw = min(rw, width - left)
        regions.append(SceneRegion(class_id=class_id, top=top, left=left,
                                   height=rh, width=rw))
    return SceneSpec(height=height, width=width, background_class=0,
                     regions=tuple(regions), color_jitter=jitter)


def write_demo_corpus(root, count: int = 10, height: int = 64, width: int = 64,
                      seed: int = 0, layout: LayoutConfig | None = None,
                      jitter: int = 6) -> DatasetIndex:
    """Write a synthetic corpus of `count` scenes and return its index."""
    layout = layout or LayoutConfig()
    root = Path(root)
    rng = make_rng(seed)
    for i in range(count):
        spec = demo_scene_spec(height, width, rng, jitter=jitter)
        scene_seed = int(rng.integers(0, 2**63))
        img, labels = synth_scene(spec, seed=scene_seed)
        entry_id = f"scene{i:03d}"
        save_image(img, root / layout.images_dir / f"{entry_id}{layout.image_suffix}")
        save_labels(labels, root / layout.labels_dir / f"{entry_id}{layout.label_suffix}")
    return load_dataset(root, layout)
