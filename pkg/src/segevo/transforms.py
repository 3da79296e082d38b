"""The seven parameterized image distortions and their sequential composition.

Every distortion is a pure function of (image, params, seed): identical inputs
give byte-identical outputs on any platform. Randomized distortions draw from
a PCG64 generator built from the gene's own 64-bit seed, so re-ordering genes
in a sequence never silently reuses a stream. The generator algorithm id is
exported as RNG_ALGORITHM and recorded in run manifests.

Conventions shared by all distortions:
  - MIN_I / MAX_I are the global min/max over all samples of the input image
    (not per channel). On a constant image the dropout family degenerates to
    the identity instead of erroring.
  - "per pixel" means all channels of a chosen pixel move together.
  - When params.affected_indices is present, only the listed flat pixel
    indices (row-major, in [0, H*W)) may differ from the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Mapping

import numpy as np

from ._kv import parse_kv_text, read_kv_file
from .errors import (
    ChannelMismatch,
    ConfigError,
    IndexOutOfRange,
    InvalidParams,
    ToolkitError,
)
from .imaging import Image

RNG_ALGORITHM = "numpy-pcg64"
SEED_BITS = 64

ROW = "row"
COLUMN = "column"
CONST_MIN = "min"
CONST_MAX = "max"


def make_rng(seed: int) -> np.random.Generator:
    """Named deterministic generator: PCG64 keyed by a 64-bit unsigned seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed & (2**SEED_BITS - 1))))


class DistortionKind(Enum):
    """Closed enumeration of distortion operators, serialized by exact name."""

    REGION_DROPOUT = "RegionDropout"
    LINE_COLUMN_DROPOUT = "LineColumnDropout"
    LINE_STRIPPING = "LineStripping"
    SALT_PEPPER = "SaltPepper"
    SPATIAL_GAUSSIAN = "SpatialGaussian"
    CHANNEL_DROPOUT = "ChannelDropout"
    CHANNEL_GAUSSIAN = "ChannelGaussian"

    @classmethod
    def from_name(cls, name: str) -> "DistortionKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise InvalidParams(f"unknown distortion kind {name!r}")


# Fields each kind requires, beyond `kind` itself. `affected_indices` is
# always optional; any other non-None field outside the kind's row is rejected.
_REQUIRED_FIELDS: dict[DistortionKind, tuple[str, ...]] = {
    DistortionKind.REGION_DROPOUT: ("p_min", "p_max"),
    DistortionKind.LINE_COLUMN_DROPOUT: ("orientation", "index", "const_choice"),
    DistortionKind.LINE_STRIPPING: ("stride", "orientation", "const_choice"),
    DistortionKind.SALT_PEPPER: ("p_salt", "p_pepper"),
    DistortionKind.SPATIAL_GAUSSIAN: ("mu", "sigma"),
    DistortionKind.CHANNEL_DROPOUT: ("channel", "const_choice"),
    DistortionKind.CHANNEL_GAUSSIAN: ("channel", "mu", "sigma"),
}

_PARAM_FIELDS = (
    "p_min", "p_max", "orientation", "index", "const_choice",
    "stride", "p_salt", "p_pepper", "mu", "sigma", "channel",
)


@dataclass(frozen=True)
class DistortionParams:
    """Parameters of one distortion. Unused fields stay None for other kinds."""

    kind: DistortionKind
    p_min: float | None = None
    p_max: float | None = None
    orientation: str | None = None
    index: int | None = None
    const_choice: str | None = None
    stride: int | None = None
    p_salt: float | None = None
    p_pepper: float | None = None
    mu: float | None = None
    sigma: float | None = None
    channel: int | None = None
    affected_indices: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.affected_indices is not None:
            object.__setattr__(self, "affected_indices", tuple(int(i) for i in self.affected_indices))


def check_params(p: DistortionParams) -> None:
    """Structural validation; raises InvalidParams on the first violation."""
    required = _REQUIRED_FIELDS[p.kind]
    for name in required:
        if getattr(p, name) is None:
            raise InvalidParams(f"{p.kind.value}: missing parameter {name!r}")
    for name in _PARAM_FIELDS:
        if name not in required and getattr(p, name) is not None:
            raise InvalidParams(f"{p.kind.value}: parameter {name!r} does not apply")
    for name in ("p_min", "p_max", "p_salt", "p_pepper"):
        v = getattr(p, name)
        if v is not None and not (0.0 <= v <= 1.0):
            raise InvalidParams(f"{p.kind.value}: {name}={v} outside [0, 1]")
    if p.kind is DistortionKind.REGION_DROPOUT and p.p_min + p.p_max > 1.0:
        raise InvalidParams(f"{p.kind.value}: p_min + p_max = {p.p_min + p.p_max} > 1")
    if p.kind is DistortionKind.SALT_PEPPER and p.p_salt + p.p_pepper > 1.0:
        raise InvalidParams(f"{p.kind.value}: p_salt + p_pepper = {p.p_salt + p.p_pepper} > 1")
    if p.orientation is not None and p.orientation not in (ROW, COLUMN):
        raise InvalidParams(f"{p.kind.value}: orientation must be 'row' or 'column', got {p.orientation!r}")
    if p.const_choice is not None and p.const_choice not in (CONST_MIN, CONST_MAX):
        raise InvalidParams(f"{p.kind.value}: const_choice must be 'min' or 'max', got {p.const_choice!r}")
    if p.stride is not None and p.stride < 1:
        raise InvalidParams(f"{p.kind.value}: stride must be >= 1, got {p.stride}")
    if p.index is not None and p.index < 0:
        raise InvalidParams(f"{p.kind.value}: index must be >= 0, got {p.index}")
    if p.sigma is not None and p.sigma < 0:
        raise InvalidParams(f"{p.kind.value}: sigma must be >= 0, got {p.sigma}")
    if p.channel is not None and p.channel not in (0, 1, 2):
        raise InvalidParams(f"{p.kind.value}: channel must be 0, 1 or 2, got {p.channel}")
    if p.affected_indices is not None:
        for i in p.affected_indices:
            if i < 0:
                raise InvalidParams(f"{p.kind.value}: negative affected index {i}")


# ---------------------------------------------------------------------------
# Parameter bounds (the loadable "parameter file")
# ---------------------------------------------------------------------------

# Numeric parameters that carry static, file-configurable intervals. Index and
# channel parameters are validated against the image shape instead: their legal
# ranges depend on the target raster, so a static file cannot express them.
BOUNDED_PARAMS: tuple[tuple[DistortionKind, str], ...] = (
    (DistortionKind.REGION_DROPOUT, "p_min"),
    (DistortionKind.REGION_DROPOUT, "p_max"),
    (DistortionKind.SALT_PEPPER, "p_salt"),
    (DistortionKind.SALT_PEPPER, "p_pepper"),
    (DistortionKind.SPATIAL_GAUSSIAN, "mu"),
    (DistortionKind.SPATIAL_GAUSSIAN, "sigma"),
    (DistortionKind.CHANNEL_GAUSSIAN, "mu"),
    (DistortionKind.CHANNEL_GAUSSIAN, "sigma"),
    (DistortionKind.LINE_STRIPPING, "stride"),
)

_PROBABILITY_PARAMS = frozenset({"p_min", "p_max", "p_salt", "p_pepper"})

_DEFAULT_INTERVALS: dict[tuple[DistortionKind, str], tuple[float, float]] = {
    (DistortionKind.REGION_DROPOUT, "p_min"): (0.0, 0.15),
    (DistortionKind.REGION_DROPOUT, "p_max"): (0.0, 0.15),
    (DistortionKind.SALT_PEPPER, "p_salt"): (0.0, 0.15),
    (DistortionKind.SALT_PEPPER, "p_pepper"): (0.0, 0.15),
    (DistortionKind.SPATIAL_GAUSSIAN, "mu"): (-20.0, 20.0),
    (DistortionKind.SPATIAL_GAUSSIAN, "sigma"): (0.0, 25.0),
    (DistortionKind.CHANNEL_GAUSSIAN, "mu"): (-20.0, 20.0),
    (DistortionKind.CHANNEL_GAUSSIAN, "sigma"): (0.0, 25.0),
    (DistortionKind.LINE_STRIPPING, "stride"): (2.0, 32.0),
}

DEFAULT_MAX_AFFECTED_FRACTION = 0.5


@dataclass(frozen=True)
class ParameterBounds:
    """Closed intervals for every file-configurable numeric parameter.

    Loadable from a flat key-value file with `Kind.param.lo` / `Kind.param.hi`
    keys plus `max_affected_fraction` (see docs/FORMATS.md).
    """

    intervals: Mapping[tuple[DistortionKind, str], tuple[float, float]] = field(
        default_factory=lambda: dict(_DEFAULT_INTERVALS)
    )
    max_affected_fraction: float = DEFAULT_MAX_AFFECTED_FRACTION

    def __post_init__(self):
        merged = dict(_DEFAULT_INTERVALS)
        for key, (lo, hi) in dict(self.intervals).items():
            if key not in _DEFAULT_INTERVALS:
                kind, param = key
                raise ConfigError(f"unknown bounded parameter {kind.value}.{param}")
            merged[key] = (float(lo), float(hi))
        for (kind, param), (lo, hi) in merged.items():
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ConfigError(f"{kind.value}.{param}: bounds must be finite")
            if lo > hi:
                raise ConfigError(f"{kind.value}.{param}: lower bound {lo} > upper bound {hi}")
            if param in _PROBABILITY_PARAMS and not (0.0 <= lo and hi <= 1.0):
                raise ConfigError(f"{kind.value}.{param}: probability bounds must lie in [0, 1]")
            if param == "sigma" and lo < 0.0:
                raise ConfigError(f"{kind.value}.sigma: lower bound must be >= 0")
            if param == "stride" and math.floor(hi) < max(1.0, math.ceil(lo)):
                raise ConfigError(f"{kind.value}.stride: interval [{lo}, {hi}] contains no usable integer")
        if not (0.0 < self.max_affected_fraction <= 1.0):
            raise ConfigError(
                f"max_affected_fraction must lie in (0, 1], got {self.max_affected_fraction}"
            )
        object.__setattr__(self, "intervals", MappingProxyType(merged))
        object.__setattr__(self, "max_affected_fraction", float(self.max_affected_fraction))

    def __reduce__(self):
        # The interval view is a mappingproxy, which pickle refuses; rebuild
        # from a plain dict so bounds can cross process boundaries.
        return (_rebuild_bounds, (dict(self.intervals), self.max_affected_fraction))

    def interval(self, kind: DistortionKind, param: str) -> tuple[float, float]:
        try:
            return self.intervals[(kind, param)]
        except KeyError:
            raise KeyError(f"{kind.value}.{param} carries no static bounds") from None

    def contains(self, kind: DistortionKind, param: str, value: float) -> bool:
        lo, hi = self.interval(kind, param)
        return lo <= value <= hi

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "ParameterBounds":
        raw = parse_kv_text(text, source=source)
        return cls._from_mapping(raw, source)

    @classmethod
    def from_file(cls, path) -> "ParameterBounds":
        return cls._from_mapping(read_kv_file(path), str(path))

    @classmethod
    def _from_mapping(cls, raw: dict[str, str], source: str) -> "ParameterBounds":
        halves: dict[tuple[DistortionKind, str], dict[str, float]] = {}
        max_fraction = DEFAULT_MAX_AFFECTED_FRACTION
        for key, value in raw.items():
            try:
                numeric = float(value)
            except ValueError as exc:
                raise ConfigError(f"{source}: {key}: not a number: {value!r}") from exc
            if key == "max_affected_fraction":
                max_fraction = numeric
                continue
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in ("lo", "hi"):
                raise ConfigError(f"{source}: bad bounds key {key!r} (want Kind.param.lo/hi)")
            kind_name, param, end = parts
            try:
                kind = DistortionKind.from_name(kind_name)
            except InvalidParams as exc:
                raise ConfigError(f"{source}: {key}: {exc}") from exc
            if (kind, param) not in _DEFAULT_INTERVALS:
                raise ConfigError(f"{source}: {key}: {kind_name}.{param} carries no static bounds")
            halves.setdefault((kind, param), {})[end] = numeric
        intervals = dict(_DEFAULT_INTERVALS)
        for key, ends in halves.items():
            lo, hi = intervals[key]
            intervals[key] = (ends.get("lo", lo), ends.get("hi", hi))
        return cls(intervals=intervals, max_affected_fraction=max_fraction)

    def to_text(self) -> str:
        lines = ["# Distortion parameter bounds: Kind.param.lo / Kind.param.hi"]
        for (kind, param) in BOUNDED_PARAMS:
            lo, hi = self.intervals[(kind, param)]
            lines.append(f"{kind.value}.{param}.lo = {lo!r}")
            lines.append(f"{kind.value}.{param}.hi = {hi!r}")
        lines.append(f"max_affected_fraction = {self.max_affected_fraction!r}")
        return "\n".join(lines) + "\n"

    def to_snapshot(self) -> dict[str, float]:
        """Flat JSON-friendly view, key format matching the bounds file."""
        snap: dict[str, float] = {}
        for (kind, param) in BOUNDED_PARAMS:
            lo, hi = self.intervals[(kind, param)]
            snap[f"{kind.value}.{param}.lo"] = lo
            snap[f"{kind.value}.{param}.hi"] = hi
        snap["max_affected_fraction"] = self.max_affected_fraction
        return snap


def _rebuild_bounds(intervals, max_affected_fraction) -> "ParameterBounds":
    return ParameterBounds(intervals=intervals, max_affected_fraction=max_affected_fraction)


def default_bounds() -> ParameterBounds:
    return ParameterBounds()


# ---------------------------------------------------------------------------
# The distortions
# ---------------------------------------------------------------------------


def _require_kind(p: DistortionParams, kind: DistortionKind):
    if p.kind is not kind:
        raise InvalidParams(f"expected {kind.value} params, got {p.kind.value}")
    check_params(p)


def _const_value(img: Image, const_choice: str) -> int:
    return img.min_sample if const_choice == CONST_MIN else img.max_sample


def _restrict_to_affected(img: Image, transformed: np.ndarray, p: DistortionParams) -> np.ndarray:
    if p.affected_indices is None:
        return transformed
    h, w = img.height, img.width
    idx = np.asarray(p.affected_indices, dtype=np.int64)
    if idx.size and int(idx.max()) >= h * w:
        raise IndexOutOfRange(
            f"affected index {int(idx.max())} outside image with {h * w} pixels"
        )
    mask = np.zeros(h * w, dtype=bool)
    mask[idx] = True
    mask = mask.reshape(h, w)
    out = img.samples.copy()
    out[mask] = transformed[mask]
    return out


def region_dropout(img: Image, p: DistortionParams, seed: int) -> Image:
    """Per pixel: MIN_I with prob p_min, MAX_I with prob p_max, else unchanged."""
    _require_kind(p, DistortionKind.REGION_DROPOUT)
    rng = make_rng(seed)
    u = rng.random((img.height, img.width))
    to_min = u < p.p_min
    to_max = (~to_min) & (u < p.p_min + p.p_max)
    out = img.samples.copy()
    out[to_min] = img.min_sample
    out[to_max] = img.max_sample
    return Image(_restrict_to_affected(img, out, p))


def line_column_dropout(img: Image, p: DistortionParams) -> Image:
    """Set one whole row or column to CONST_I."""
    _require_kind(p, DistortionKind.LINE_COLUMN_DROPOUT)
    limit = img.height if p.orientation == ROW else img.width
    if p.index >= limit:
        raise IndexOutOfRange(
            f"{p.orientation} index {p.index} out of range for {p.orientation} count {limit}"
        )
    out = img.samples.copy()
    const = _const_value(img, p.const_choice)
    if p.orientation == ROW:
        out[p.index, :, :] = const
    else:
        out[:, p.index, :] = const
    return Image(_restrict_to_affected(img, out, p))


def line_stripping(img: Image, p: DistortionParams) -> Image:
    """Set every row (or column) whose index x satisfies x mod s == 0 to CONST_I."""
    _require_kind(p, DistortionKind.LINE_STRIPPING)
    out = img.samples.copy()
    const = _const_value(img, p.const_choice)
    limit = img.height if p.orientation == ROW else img.width
    stripped = np.arange(limit) % p.stride == 0
    if p.orientation == ROW:
        out[stripped, :, :] = const
    else:
        out[:, stripped, :] = const
    return Image(_restrict_to_affected(img, out, p))


def salt_pepper(img: Image, p: DistortionParams, seed: int) -> Image:
    """Per pixel: MIN_I with prob p_salt, MAX_I with prob p_pepper, else unchanged."""
    _require_kind(p, DistortionKind.SALT_PEPPER)
    rng = make_rng(seed)
    u = rng.random((img.height, img.width))
    to_min = u < p.p_salt
    to_max = (~to_min) & (u < p.p_salt + p.p_pepper)
    out = img.samples.copy()
    out[to_min] = img.min_sample
    out[to_max] = img.max_sample
    return Image(_restrict_to_affected(img, out, p))


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.trunc(x + np.copysign(0.5, x))


def _add_gaussian(plane: np.ndarray, mu: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    noise = rng.normal(float(mu), float(sigma), size=plane.shape)
    noisy = plane.astype(np.float64) + noise
    return np.clip(_round_half_away(noisy), 0.0, 255.0).astype(np.uint8)


def spatial_gaussian(img: Image, p: DistortionParams, seed: int) -> Image:
    """clamp(round(sample + eta), 0, 255), eta ~ N(mu, sigma^2) per sample."""
    _require_kind(p, DistortionKind.SPATIAL_GAUSSIAN)
    rng = make_rng(seed)
    out = _add_gaussian(img.samples, p.mu, p.sigma, rng)
    return Image(_restrict_to_affected(img, out, p))


def channel_dropout(img: Image, p: DistortionParams) -> Image:
    """Set every sample of one channel to CONST_I; other channels untouched."""
    _require_kind(p, DistortionKind.CHANNEL_DROPOUT)
    if img.channels != 3:
        raise ChannelMismatch(f"channel dropout needs a 3-channel image, got {img.channels}")
    out = img.samples.copy()
    out[:, :, p.channel] = _const_value(img, p.const_choice)
    return Image(_restrict_to_affected(img, out, p))


def channel_gaussian(img: Image, p: DistortionParams, seed: int) -> Image:
    """Gaussian perturbation of a single channel; other channels untouched."""
    _require_kind(p, DistortionKind.CHANNEL_GAUSSIAN)
    if img.channels != 3:
        raise ChannelMismatch(f"channel gaussian needs a 3-channel image, got {img.channels}")
    rng = make_rng(seed)
    out = img.samples.copy()
    out[:, :, p.channel] = _add_gaussian(img.samples[:, :, p.channel], p.mu, p.sigma, rng)
    return Image(_restrict_to_affected(img, out, p))


def apply_distortion(img: Image, p: DistortionParams, seed: int) -> Image:
    """Dispatch a single distortion; seed is ignored by deterministic kinds."""
    kind = p.kind
    if kind is DistortionKind.REGION_DROPOUT:
        return region_dropout(img, p, seed)
    if kind is DistortionKind.LINE_COLUMN_DROPOUT:
        return line_column_dropout(img, p)
    if kind is DistortionKind.LINE_STRIPPING:
        return line_stripping(img, p)
    if kind is DistortionKind.SALT_PEPPER:
        return salt_pepper(img, p, seed)
    if kind is DistortionKind.SPATIAL_GAUSSIAN:
        return spatial_gaussian(img, p, seed)
    if kind is DistortionKind.CHANNEL_DROPOUT:
        return channel_dropout(img, p)
    if kind is DistortionKind.CHANNEL_GAUSSIAN:
        return channel_gaussian(img, p, seed)
    raise InvalidParams(f"unhandled distortion kind {kind!r}")


def apply_sequence(img: Image, genes) -> Image:
    """Fold distortions left to right, each consuming the previous output.

    `genes` is an ordered list of (DistortionParams, seed). Per-gene errors
    propagate with the gene position attached (message prefix and a
    `gene_index` attribute on the exception).
    """
    current = img
    for position, (params, seed) in enumerate(genes):
        try:
            current = apply_distortion(current, params, seed)
        except ToolkitError as exc:
            exc.gene_index = position
            exc.args = (f"gene {position}: {exc.args[0]}",) + exc.args[1:]
            raise
    return current
