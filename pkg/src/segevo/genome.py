"""Chromosomes: validated transformation programs with a lossless binary codec.

A chromosome is an ordered tuple of genes; each gene couples an activation
bit, one distortion's parameters, and the gene's private 64-bit seed.
Inactive genes are latent crossover/mutation substrate and are skipped when
the program is applied.

The codec (encode/decode) is a little-endian, versioned, tagged binary layout
(magic ``SRMT``); the byte-exact description lives in docs/FORMATS.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import InvalidConfig, InvalidParams, MalformedPayload
from .transforms import (
    BOUNDED_PARAMS,
    COLUMN,
    CONST_MAX,
    CONST_MIN,
    ROW,
    DistortionKind,
    DistortionParams,
    ParameterBounds,
    check_params,
    default_bounds,
    make_rng,
)

_KINDS = tuple(DistortionKind)
_CHANNEL_KINDS = (DistortionKind.CHANNEL_DROPOUT, DistortionKind.CHANNEL_GAUSSIAN)


@dataclass(frozen=True)
class SubTransform:
    """One gene: activation bit, distortion params, private RNG seed."""

    active: bool
    params: DistortionParams
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "active", bool(self.active))
        object.__setattr__(self, "seed", int(self.seed) & (2**64 - 1))


@dataclass(frozen=True)
class Chromosome:
    """Ordered, non-empty tuple of genes."""

    genes: tuple[SubTransform, ...]

    def __post_init__(self):
        object.__setattr__(self, "genes", tuple(self.genes))

    def __len__(self) -> int:
        return len(self.genes)


def default_kind_weights(channels: int) -> dict[DistortionKind, float]:
    """Uniform weights; channel operators are excluded on single-channel images."""
    weights = {kind: 1.0 for kind in _KINDS}
    if channels == 1:
        for kind in _CHANNEL_KINDS:
            weights[kind] = 0.0
    return weights


@dataclass(frozen=True)
class GenomeConfig:
    """Sampling configuration tied to one target image shape."""

    height: int
    width: int
    channels: int = 3
    min_genes: int = 1
    max_genes: int = 6
    bounds: ParameterBounds = field(default_factory=default_bounds)
    kind_weights: Mapping[DistortionKind, float] | None = None

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InvalidConfig(f"target shape must be positive, got {self.height}x{self.width}")
        if self.channels not in (1, 3):
            raise InvalidConfig(f"channels must be 1 or 3, got {self.channels}")
        if not (1 <= self.min_genes <= self.max_genes):
            raise InvalidConfig(
                f"need 1 <= min_genes <= max_genes, got [{self.min_genes}, {self.max_genes}]"
            )
        weights = dict(self.kind_weights) if self.kind_weights is not None else default_kind_weights(self.channels)
        unknown = set(weights) - set(_KINDS)
        if unknown:
            raise InvalidConfig(f"unknown kinds in kind_weights: {sorted(k.value for k in unknown)}")
        for kind in _KINDS:
            weights.setdefault(kind, 0.0)
            if weights[kind] < 0:
                raise InvalidConfig(f"kind weight for {kind.value} must be >= 0")
        if sum(weights.values()) <= 0:
            raise InvalidConfig("kind_weights must not all be zero")
        if self.channels == 1:
            for kind in _CHANNEL_KINDS:
                if weights[kind] > 0:
                    raise InvalidConfig(
                        f"{kind.value} cannot be sampled for single-channel images"
                    )
        object.__setattr__(self, "kind_weights", dict(weights))

    @property
    def pixel_count(self) -> int:
        return self.height * self.width

    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)


def _uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(lo + (hi - lo) * rng.random())


def _uniform_int(rng: np.random.Generator, lo: int, hi: int) -> int:
    # inclusive on both ends
    return int(rng.integers(lo, hi + 1))


def _random_params(kind: DistortionKind, cfg: GenomeConfig, rng: np.random.Generator) -> DistortionParams:
    b = cfg.bounds
    if kind is DistortionKind.REGION_DROPOUT:
        lo1, hi1 = b.interval(kind, "p_min")
        p_min = _uniform(rng, lo1, hi1)
        lo2, hi2 = b.interval(kind, "p_max")
        p_max = _uniform(rng, lo2, min(hi2, 1.0 - p_min))
        return DistortionParams(kind=kind, p_min=p_min, p_max=p_max)
    if kind is DistortionKind.LINE_COLUMN_DROPOUT:
        orientation = ROW if rng.integers(0, 2) == 0 else COLUMN
        limit = cfg.height if orientation == ROW else cfg.width
        return DistortionParams(
            kind=kind,
            orientation=orientation,
            index=_uniform_int(rng, 0, limit - 1),
            const_choice=CONST_MIN if rng.integers(0, 2) == 0 else CONST_MAX,
        )
    if kind is DistortionKind.LINE_STRIPPING:
        lo, hi = b.interval(kind, "stride")
        return DistortionParams(
            kind=kind,
            stride=_uniform_int(rng, max(1, int(np.ceil(lo))), int(np.floor(hi))),
            orientation=ROW if rng.integers(0, 2) == 0 else COLUMN,
            const_choice=CONST_MIN if rng.integers(0, 2) == 0 else CONST_MAX,
        )
    if kind is DistortionKind.SALT_PEPPER:
        lo1, hi1 = b.interval(kind, "p_salt")
        p_salt = _uniform(rng, lo1, hi1)
        lo2, hi2 = b.interval(kind, "p_pepper")
        p_pepper = _uniform(rng, lo2, min(hi2, 1.0 - p_salt))
        return DistortionParams(kind=kind, p_salt=p_salt, p_pepper=p_pepper)
    if kind is DistortionKind.SPATIAL_GAUSSIAN:
        return DistortionParams(
            kind=kind,
            mu=_uniform(rng, *b.interval(kind, "mu")),
            sigma=_uniform(rng, *b.interval(kind, "sigma")),
        )
    if kind is DistortionKind.CHANNEL_DROPOUT:
        return DistortionParams(
            kind=kind,
            channel=int(rng.integers(0, 3)),
            const_choice=CONST_MIN if rng.integers(0, 2) == 0 else CONST_MAX,
        )
    if kind is DistortionKind.CHANNEL_GAUSSIAN:
        return DistortionParams(
            kind=kind,
            channel=int(rng.integers(0, 3)),
            mu=_uniform(rng, *b.interval(DistortionKind.CHANNEL_GAUSSIAN, "mu")),
            sigma=_uniform(rng, *b.interval(DistortionKind.CHANNEL_GAUSSIAN, "sigma")),
        )
    raise InvalidConfig(f"unhandled kind {kind!r}")


def _pick_kind(cfg: GenomeConfig, rng: np.random.Generator) -> DistortionKind:
    weights = np.array([cfg.kind_weights[k] for k in _KINDS], dtype=np.float64)
    probs = weights / weights.sum()
    return _KINDS[int(rng.choice(len(_KINDS), p=probs))]


def random_gene(cfg: GenomeConfig, rng: np.random.Generator) -> SubTransform:
    """Sample one gene: activation bit, weighted kind, in-bounds parameters."""
    active = bool(rng.integers(0, 2))
    kind = _pick_kind(cfg, rng)
    params = _random_params(kind, cfg, rng)
    seed = int(rng.integers(0, 2**64, dtype=np.uint64))
    return SubTransform(active=active, params=params, seed=seed)


def random_chromosome(cfg: GenomeConfig, rng_seed: int) -> Chromosome:
    """Deterministic random chromosome: length uniform in [min_genes, max_genes]."""
    rng = make_rng(rng_seed)
    count = _uniform_int(rng, cfg.min_genes, cfg.max_genes)
    return Chromosome(genes=tuple(random_gene(cfg, rng) for _ in range(count)))


def validate(ch: Chromosome, cfg: GenomeConfig, image_shape: tuple[int, int, int]) -> list[str]:
    """Return a list of violations (empty = valid). Violations are data, not errors."""
    height, width, channels = image_shape
    violations: list[str] = []
    n = len(ch.genes)
    if not (cfg.min_genes <= n <= cfg.max_genes):
        violations.append(f"length {n} outside [{cfg.min_genes}, {cfg.max_genes}]")
    for i, gene in enumerate(ch.genes):
        p = gene.params
        try:
            check_params(p)
        except InvalidParams as exc:
            violations.append(f"gene {i}: {exc}")
            continue
        for kind, param in BOUNDED_PARAMS:
            if p.kind is kind:
                value = getattr(p, param)
                if value is not None and not cfg.bounds.contains(kind, param, value):
                    lo, hi = cfg.bounds.interval(kind, param)
                    violations.append(
                        f"gene {i}: {p.kind.value}.{param} = {value} outside [{lo}, {hi}]"
                    )
        if p.kind is DistortionKind.LINE_COLUMN_DROPOUT:
            limit = height if p.orientation == ROW else width
            if p.index >= limit:
                violations.append(
                    f"gene {i}: {p.orientation} index {p.index} out of range for size {limit}"
                )
        if p.kind in _CHANNEL_KINDS and channels != 3:
            violations.append(f"gene {i}: {p.kind.value} requires 3 channels, image has {channels}")
        if p.affected_indices is not None:
            pixel_count = height * width
            bad = [idx for idx in p.affected_indices if idx >= pixel_count]
            if bad:
                violations.append(
                    f"gene {i}: affected indices {bad[:3]} outside {pixel_count} pixels"
                )
            cap = cfg.bounds.max_affected_fraction * pixel_count
            if len(p.affected_indices) > cap:
                violations.append(
                    f"gene {i}: {len(p.affected_indices)} affected indices exceed "
                    f"max fraction {cfg.bounds.max_affected_fraction}"
                )
    return violations


def to_transform_sequence(ch: Chromosome) -> list[tuple[DistortionParams, int]]:
    """Active genes only, order preserved; all-inactive -> identity program."""
    return [(g.params, g.seed) for g in ch.genes if g.active]


# ---------------------------------------------------------------------------
# Binary codec (magic SRMT, version 1, little-endian; see docs/FORMATS.md)
# ---------------------------------------------------------------------------

CODEC_MAGIC = b"SRMT"
CODEC_VERSION = 1

_TAG_P_MIN = 0x01
_TAG_P_MAX = 0x02
_TAG_ORIENTATION = 0x03
_TAG_INDEX = 0x04
_TAG_CONST = 0x05
_TAG_STRIDE = 0x06
_TAG_P_SALT = 0x07
_TAG_P_PEPPER = 0x08
_TAG_MU = 0x09
_TAG_SIGMA = 0x0A
_TAG_CHANNEL = 0x0B
_TAG_AFFECTED = 0x0C

_FLOAT_TAGS = {
    _TAG_P_MIN: "p_min",
    _TAG_P_MAX: "p_max",
    _TAG_P_SALT: "p_salt",
    _TAG_P_PEPPER: "p_pepper",
    _TAG_MU: "mu",
    _TAG_SIGMA: "sigma",
}
_U32_TAGS = {_TAG_INDEX: "index", _TAG_STRIDE: "stride"}
_ENUM_TAGS = {_TAG_ORIENTATION: "orientation", _TAG_CONST: "const_choice", _TAG_CHANNEL: "channel"}


def _encode_fields(p: DistortionParams) -> list[bytes]:
    chunks: list[bytes] = []
    for tag, name in sorted(_FLOAT_TAGS.items()):
        value = getattr(p, name)
        if value is not None:
            chunks.append(struct.pack("<Bd", tag, float(value)))
    for tag, name in sorted(_U32_TAGS.items()):
        value = getattr(p, name)
        if value is not None:
            chunks.append(struct.pack("<BI", tag, int(value)))
    if p.orientation is not None:
        chunks.append(struct.pack("<BB", _TAG_ORIENTATION, 0 if p.orientation == ROW else 1))
    if p.const_choice is not None:
        chunks.append(struct.pack("<BB", _TAG_CONST, 0 if p.const_choice == CONST_MIN else 1))
    if p.channel is not None:
        chunks.append(struct.pack("<BB", _TAG_CHANNEL, p.channel))
    if p.affected_indices is not None:
        chunks.append(
            struct.pack("<BI", _TAG_AFFECTED, len(p.affected_indices))
            + b"".join(struct.pack("<I", i) for i in p.affected_indices)
        )
    chunks.sort(key=lambda c: c[0])
    return chunks


def encode(ch: Chromosome) -> bytes:
    """Versioned canonical byte encoding; decode(encode(ch)) == ch."""
    parts = [CODEC_MAGIC, struct.pack("<BH", CODEC_VERSION, len(ch.genes))]
    for gene in ch.genes:
        fields_ = _encode_fields(gene.params)
        parts.append(
            struct.pack(
                "<BBQB",
                1 if gene.active else 0,
                _KINDS.index(gene.params.kind),
                gene.seed,
                len(fields_),
            )
        )
        parts.extend(fields_)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise MalformedPayload(f"truncated payload while reading {what}", offset=self.offset)
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values


def decode(data: bytes) -> Chromosome:
    """Strict decoder; raises MalformedPayload with the failing byte offset."""
    r = _Reader(bytes(data))
    (magic,) = r.take("<4s", "magic")
    if magic != CODEC_MAGIC:
        raise MalformedPayload(f"bad magic {magic!r}, expected {CODEC_MAGIC!r}", offset=0)
    (version,) = r.take("<B", "version")
    if version != CODEC_VERSION:
        raise MalformedPayload(f"unknown codec version {version}", offset=4)
    (count,) = r.take("<H", "gene count")
    if count == 0:
        raise MalformedPayload("chromosome must contain at least one gene", offset=5)
    genes: list[SubTransform] = []
    for g in range(count):
        active, kind_tag, seed, field_count = r.take("<BBQB", f"gene {g} header")
        if active not in (0, 1):
            raise MalformedPayload(f"gene {g}: activation byte must be 0 or 1, got {active}",
                                   offset=r.offset - 11)
        if kind_tag >= len(_KINDS):
            raise MalformedPayload(f"gene {g}: unknown kind tag {kind_tag}", offset=r.offset - 10)
        kind = _KINDS[kind_tag]
        values: dict = {}
        for _ in range(field_count):
            field_offset = r.offset
            (tag,) = r.take("<B", f"gene {g} field tag")
            if tag in _FLOAT_TAGS:
                name = _FLOAT_TAGS[tag]
                (value,) = r.take("<d", f"gene {g} field {name}")
            elif tag in _U32_TAGS:
                name = _U32_TAGS[tag]
                (value,) = r.take("<I", f"gene {g} field {name}")
            elif tag == _TAG_ORIENTATION:
                name = "orientation"
                (raw,) = r.take("<B", f"gene {g} orientation")
                if raw not in (0, 1):
                    raise MalformedPayload(f"gene {g}: bad orientation byte {raw}", offset=field_offset)
                value = ROW if raw == 0 else COLUMN
            elif tag == _TAG_CONST:
                name = "const_choice"
                (raw,) = r.take("<B", f"gene {g} const choice")
                if raw not in (0, 1):
                    raise MalformedPayload(f"gene {g}: bad const byte {raw}", offset=field_offset)
                value = CONST_MIN if raw == 0 else CONST_MAX
            elif tag == _TAG_CHANNEL:
                name = "channel"
                (value,) = r.take("<B", f"gene {g} channel")
            elif tag == _TAG_AFFECTED:
                name = "affected_indices"
                (n_idx,) = r.take("<I", f"gene {g} affected count")
                value = tuple(r.take(f"<{n_idx}I", f"gene {g} affected indices")) if n_idx else ()
            else:
                raise MalformedPayload(f"gene {g}: unknown field tag 0x{tag:02x}", offset=field_offset)
            if name in values:
                raise MalformedPayload(f"gene {g}: duplicate field {name!r}", offset=field_offset)
            values[name] = value
        try:
            params = DistortionParams(kind=kind, **values)
            check_params(params)
        except (InvalidParams, TypeError) as exc:
            raise MalformedPayload(f"gene {g}: invalid params: {exc}", offset=r.offset) from exc
        genes.append(SubTransform(active=bool(active), params=params, seed=seed))
    if r.offset != len(r.data):
        raise MalformedPayload(
            f"{len(r.data) - r.offset} trailing bytes after last gene", offset=r.offset
        )
    return Chromosome(genes=tuple(genes))
