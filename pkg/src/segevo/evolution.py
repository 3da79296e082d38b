"""Genetic attack engine: fitness with a PSNR gate, tournament selection,
boundary-respecting two-point crossover, three-level mutation, elitism, and
stagnation-based early termination.

One engine run optimizes one (image, truth) pair against one oracle. Batch
orchestration over a dataset lives in the campaign module.

Determinism: given a master seed and a deterministic oracle, every run
produces an identical trace. Fitness evaluations within a generation are
independent of each other and are reduced in population-index order, so a
parallel evaluator would produce the same trace as the serial one used here.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ._kv import parse_kv_text, read_kv_file
from .errors import (
    ConfigError,
    EmptyPopulation,
    InvalidConfig,
    OracleFailure,
    ToolkitError,
)
from .genome import (
    Chromosome,
    GenomeConfig,
    SubTransform,
    encode,
    random_chromosome,
    random_gene,
    _random_params,
    _pick_kind,
)
from .imaging import Image, LabelMap, iou, psnr
from .transforms import (
    BOUNDED_PARAMS,
    COLUMN,
    ROW,
    DistortionKind,
    apply_sequence,
    make_rng,
)
from .genome import to_transform_sequence

TERMINATION_MAX_GENERATIONS = "max_generations"
TERMINATION_STAGNATION = "stagnation"
TERMINATION_TIME_BUDGET = "time_budget"

_SUBRATE_KEYS = ("structural", "kind_change", "param_perturb")


@dataclass(frozen=True)
class GaConfig:
    """Engine hyperparameters. Defaults follow the published configuration:
    population 50, up to 100 generations, crossover 0.8, mutation 0.2,
    elitism of 2, and stagnation below 0.1% relative improvement for 15
    consecutive generations, with the 20 dB fidelity gate."""

    population_size: int = 50
    max_generations: int = 100
    crossover_rate: float = 0.8
    mutation_rate: float = 0.2
    mutation_subrates: tuple[float, float, float] = (0.3, 0.3, 0.4)
    tournament_size: int = 3
    elite_count: int = 2
    stagnation_epsilon: float = 0.001
    stagnation_window: int = 15
    psnr_threshold: float = 20.0
    psnr_factor_cap: float = 2.5
    master_seed: int = 0

    def __post_init__(self):
        if self.population_size < 1:
            raise InvalidConfig("population_size must be >= 1")
        if self.max_generations < 0:
            raise InvalidConfig("max_generations must be >= 0")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InvalidConfig(f"{name} must lie in [0, 1], got {v}")
        sub = tuple(float(x) for x in self.mutation_subrates)
        if len(sub) != 3 or any(x < 0 for x in sub) or abs(sum(sub) - 1.0) > 1e-9:
            raise InvalidConfig(f"mutation_subrates must be 3 non-negative values summing to 1, got {sub}")
        if not (1 <= self.tournament_size <= self.population_size):
            raise InvalidConfig("need 1 <= tournament_size <= population_size")
        if not (0 <= self.elite_count < self.population_size):
            raise InvalidConfig("need 0 <= elite_count < population_size")
        if self.stagnation_epsilon < 0 or self.stagnation_window < 1:
            raise InvalidConfig("stagnation_epsilon >= 0 and stagnation_window >= 1 required")
        if self.psnr_threshold <= 0:
            raise InvalidConfig("psnr_threshold must be positive")
        if self.psnr_factor_cap < 1.0:
            raise InvalidConfig("psnr_factor_cap must be >= 1")
        object.__setattr__(self, "mutation_subrates", sub)
        object.__setattr__(self, "master_seed", int(self.master_seed) & (2**64 - 1))

    @classmethod
    def from_mapping(cls, raw: dict[str, str], source: str = "config") -> "GaConfig":
        """Build from flat key-value text keys mirroring the field names.

        mutation_subrates is spelled as three dotted keys:
        mutation_subrates.structural / .kind_change / .param_perturb
        """
        kwargs: dict = {}
        sub = dict(zip(_SUBRATE_KEYS, cls().mutation_subrates))
        for key, value in raw.items():
            try:
                if key.startswith("mutation_subrates."):
                    name = key.split(".", 1)[1]
                    if name not in _SUBRATE_KEYS:
                        raise ConfigError(f"{source}: unknown mutation subrate {name!r}")
                    sub[name] = float(value)
                    continue
                if key not in cls.__dataclass_fields__ or key == "mutation_subrates":
                    raise ConfigError(f"{source}: unknown GA config key {key!r}")
                if key in ("population_size", "max_generations", "tournament_size",
                           "elite_count", "stagnation_window", "master_seed"):
                    kwargs[key] = int(value, 0)
                else:
                    kwargs[key] = float(value)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {key!r}: {value!r}") from exc
        kwargs["mutation_subrates"] = tuple(sub[k] for k in _SUBRATE_KEYS)
        try:
            return cls(**kwargs)
        except (InvalidConfig, ValueError) as exc:
            raise ConfigError(f"{source}: {exc}") from exc

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "GaConfig":
        return cls.from_mapping(parse_kv_text(text, source), source)

    @classmethod
    def from_file(cls, path) -> "GaConfig":
        return cls.from_mapping(read_kv_file(path), str(path))

    def to_snapshot(self) -> dict:
        """Flat JSON-friendly view, keys matching the config file grammar."""
        snap: dict = {}
        for name in self.__dataclass_fields__:
            if name == "mutation_subrates":
                for sub_name, value in zip(_SUBRATE_KEYS, self.mutation_subrates):
                    snap[f"mutation_subrates.{sub_name}"] = value
            else:
                snap[name] = getattr(self, name)
        return snap


@dataclass(frozen=True)
class FitnessRecord:
    """Evaluation result for one chromosome.

    iou is None when the PSNR gate short-circuited evaluation (the oracle was
    never consulted, so no segmentation exists).
    """

    fitness: float
    iou: float | None
    psnr: float
    generation: int


@dataclass(frozen=True)
class GenerationStat:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_record: FitnessRecord
    best_chromosome: Chromosome


@dataclass
class EvolutionTrace:
    """Per-generation statistics plus the run outcome.

    best_chromosome / best_record hold the all-time best across the whole run,
    which is not necessarily the final generation's best (elites guarantee it
    is, but the trace does not rely on that)."""

    generations: list[GenerationStat] = field(default_factory=list)
    termination_reason: str = ""
    oracle_calls: int = 0
    generations_run: int = 0
    best_chromosome: Chromosome | None = None
    best_record: FitnessRecord | None = None

    def best_fitness_series(self) -> list[float]:
        return [g.best_fitness for g in self.generations]

    def to_json_dict(self) -> dict:
        return {
            "termination_reason": self.termination_reason,
            "oracle_calls": self.oracle_calls,
            "generations_run": self.generations_run,
            "best_chromosome": encode(self.best_chromosome).hex() if self.best_chromosome else None,
            "best_fitness": self.best_record.fitness if self.best_record else None,
            "best_psnr": self.best_record.psnr if self.best_record else None,
            "best_iou": self.best_record.iou if self.best_record else None,
            "generations": [
                {
                    "generation": g.generation,
                    "best_fitness": g.best_fitness,
                    "mean_fitness": g.mean_fitness,
                    "best_psnr": g.best_record.psnr,
                    "best_iou": g.best_record.iou,
                    "best_chromosome": encode(g.best_chromosome).hex(),
                }
                for g in self.generations
            ],
        }


def fitness_score(iou_value: float, psnr_value: float, cfg: GaConfig) -> float:
    """(1 - IoU) * (PSNR / threshold), zero below the gate, factor capped.

    The cap bounds the reward of near-identity programs (infinite PSNR would
    otherwise dominate the disruption term)."""
    if psnr_value < cfg.psnr_threshold:
        return 0.0
    factor = min(psnr_value / cfg.psnr_threshold, cfg.psnr_factor_cap)
    return (1.0 - iou_value) * factor


def _chromosome_digest(ch: Chromosome) -> str:
    return hashlib.blake2b(encode(ch), digest_size=6).hexdigest()


def fitness(
    original: Image,
    truth: LabelMap,
    ch: Chromosome,
    oracle,
    cfg: GaConfig,
    generation: int = 0,
) -> FitnessRecord:
    """Evaluate one chromosome. The oracle is consulted only above the gate."""
    distorted = apply_sequence(original, to_transform_sequence(ch))
    fidelity = psnr(original, distorted)
    if fidelity < cfg.psnr_threshold:
        return FitnessRecord(fitness=0.0, iou=None, psnr=fidelity, generation=generation)
    try:
        predicted = oracle.segment(distorted)
    except ToolkitError as exc:
        raise OracleFailure(
            f"oracle failed on chromosome {_chromosome_digest(ch)}: {exc}"
        ) from exc
    iou_value = iou(predicted, truth).mean_iou
    return FitnessRecord(
        fitness=fitness_score(iou_value, fidelity, cfg),
        iou=iou_value,
        psnr=fidelity,
        generation=generation,
    )


def tournament_select(population, k: int, rng: np.random.Generator) -> Chromosome:
    """Draw k distinct contestants uniformly; fittest wins, ties to lowest index.

    `population` is a sequence of (Chromosome, fitness) pairs."""
    population = list(population)
    if not population:
        raise EmptyPopulation("tournament over an empty population")
    if k > len(population):
        raise InvalidConfig(f"tournament size {k} exceeds population {len(population)}")
    chosen = rng.choice(len(population), size=k, replace=False)
    best = min(sorted(int(i) for i in chosen), key=lambda i: (-population[i][1], i))
    return population[best][0]


def _splice(a: Chromosome, b: Chromosome, cuts_a: tuple[int, int], cuts_b: tuple[int, int]):
    """Exchange middle segments between gene boundaries; no repair."""
    a1, a2 = cuts_a
    b1, b2 = cuts_b
    child1 = a.genes[:a1] + b.genes[b1:b2] + a.genes[a2:]
    child2 = b.genes[:b1] + a.genes[a1:a2] + b.genes[b2:]
    return child1, child2


def _repair_length(genes: tuple[SubTransform, ...], genome: GenomeConfig,
                   fitter_parent: Chromosome) -> Chromosome:
    if len(genes) > genome.max_genes:
        genes = genes[: genome.max_genes]
    if len(genes) < genome.min_genes:
        return Chromosome(genes=fitter_parent.genes)
    return Chromosome(genes=genes)


def crossover_two_point(
    a: Chromosome,
    b: Chromosome,
    genome: GenomeConfig,
    rng: np.random.Generator,
    fitness_a: float = 0.0,
    fitness_b: float = 0.0,
) -> tuple[Chromosome, Chromosome]:
    """Two-point crossover on gene boundaries of each parent.

    Cut positions are drawn per parent in [0, len] with cut1 <= cut2 and the
    middle segments are exchanged. Offspring longer than max_genes lose tail
    genes; an offspring that would fall under min_genes is replaced by a copy
    of the fitter parent (ties favor parent a)."""
    cuts_a = tuple(sorted(int(x) for x in rng.integers(0, len(a.genes) + 1, size=2)))
    cuts_b = tuple(sorted(int(x) for x in rng.integers(0, len(b.genes) + 1, size=2)))
    raw1, raw2 = _splice(a, b, cuts_a, cuts_b)
    fitter = a if fitness_a >= fitness_b else b
    return (
        _repair_length(raw1, genome, fitter),
        _repair_length(raw2, genome, fitter),
    )


def _pick_level(rng: np.random.Generator, subrates: tuple[float, float, float]) -> int:
    u = rng.random()
    if u < subrates[0]:
        return 0
    if u < subrates[0] + subrates[1]:
        return 1
    return 2


# Numeric parameters eligible for level-3 perturbation, per kind. Interval
# sources: static bounds, the image shape (index), or the channel set.
_PERTURBABLE: dict[DistortionKind, tuple[str, ...]] = {
    DistortionKind.REGION_DROPOUT: ("p_min", "p_max"),
    DistortionKind.LINE_COLUMN_DROPOUT: ("index",),
    DistortionKind.LINE_STRIPPING: ("stride",),
    DistortionKind.SALT_PEPPER: ("p_salt", "p_pepper"),
    DistortionKind.SPATIAL_GAUSSIAN: ("mu", "sigma"),
    DistortionKind.CHANNEL_DROPOUT: ("channel",),
    DistortionKind.CHANNEL_GAUSSIAN: ("channel", "mu", "sigma"),
}

_PAIR_CAP = {"p_min": "p_max", "p_max": "p_min", "p_salt": "p_pepper", "p_pepper": "p_salt"}


def _perturb_param(gene: SubTransform, name: str, genome: GenomeConfig,
                   rng: np.random.Generator) -> SubTransform:
    p = gene.params
    if name == "channel":
        return replace(gene, params=replace(p, channel=int(rng.integers(0, 3))))
    if name == "index":
        limit = genome.height if p.orientation == ROW else genome.width
        lo, hi = 0.0, float(limit - 1)
    else:
        lo, hi = genome.bounds.interval(p.kind, name)
    step = (rng.random() * 2.0 - 1.0) * 0.1 * (hi - lo)
    value = float(getattr(p, name)) + step
    value = min(max(value, lo), hi)
    if name in _PAIR_CAP:
        partner = getattr(p, _PAIR_CAP[name])
        value = min(value, 1.0 - partner)  # keep the probability pair summing <= 1
    if name in ("index", "stride"):
        value = int(round(value))
        if name == "stride":
            value = max(1, value)
    return replace(gene, params=replace(p, **{name: value}))


def mutate(ch: Chromosome, cfg: GaConfig, genome: GenomeConfig,
           rng: np.random.Generator) -> Chromosome:
    """Three-level mutation, applied with probability cfg.mutation_rate.

    Level 0 (structural): insert a fresh random gene at a uniform position or
    delete a uniform gene, respecting length bounds. Level 1: redraw a uniform
    gene's kind and parameters within bounds. Level 2: perturb one numeric
    parameter by a uniform step within +-10% of its bound width (clamped), or
    flip the activation bit."""
    if rng.random() >= cfg.mutation_rate:
        return ch
    level = _pick_level(rng, cfg.mutation_subrates)
    genes = list(ch.genes)
    if level == 0:
        can_insert = len(genes) < genome.max_genes
        can_delete = len(genes) > genome.min_genes
        if not can_insert and not can_delete:
            return ch
        if can_insert and can_delete:
            insert = rng.integers(0, 2) == 0
        else:
            insert = can_insert
        if insert:
            pos = int(rng.integers(0, len(genes) + 1))
            genes.insert(pos, random_gene(genome, rng))
        else:
            pos = int(rng.integers(0, len(genes)))
            del genes[pos]
        return Chromosome(genes=tuple(genes))
    pos = int(rng.integers(0, len(genes)))
    gene = genes[pos]
    if level == 1:
        kind = _pick_kind(genome, rng)
        genes[pos] = replace(gene, params=_random_params(kind, genome, rng))
        return Chromosome(genes=tuple(genes))
    options = _PERTURBABLE[gene.params.kind] + ("activation",)
    choice = options[int(rng.integers(0, len(options)))]
    if choice == "activation":
        genes[pos] = replace(gene, active=not gene.active)
    else:
        genes[pos] = _perturb_param(gene, choice, genome, rng)
    return Chromosome(genes=tuple(genes))


def _best_index(records: list[FitnessRecord]) -> int:
    return min(range(len(records)), key=lambda i: (-records[i].fitness, i))


def evolve(
    original: Image,
    truth: LabelMap,
    oracle,
    cfg: GaConfig,
    genome: GenomeConfig | None = None,
    time_budget: float | None = None,
) -> tuple[Chromosome, EvolutionTrace]:
    """Run the full genetic attack on one (image, truth) pair.

    Returns the all-time best chromosome and the trace. A time budget, when
    given, terminates the loop with reason "time_budget" once exceeded.
    OracleFailure aborts the run with the partial trace attached to the
    exception as `exc.trace`."""
    if genome is None:
        genome = GenomeConfig(height=original.height, width=original.width,
                              channels=original.channels)
    elif genome.shape() != (original.height, original.width, original.channels):
        raise InvalidConfig(
            f"genome config shape {genome.shape()} does not match image "
            f"{(original.height, original.width, original.channels)}"
        )
    rng = make_rng(cfg.master_seed)
    started = time.monotonic()
    trace = EvolutionTrace()
    cache: dict[Chromosome, FitnessRecord] = {}

    def evaluate(ch: Chromosome, generation: int) -> FitnessRecord:
        cached = cache.get(ch)
        if cached is not None:
            return cached
        try:
            record = fitness(original, truth, ch, oracle, cfg, generation=generation)
        except OracleFailure as exc:
            exc.trace = trace
            raise
        if record.iou is not None:
            trace.oracle_calls += 1
        cache[ch] = record
        return record

    def record_generation(generation: int, population, records):
        best = _best_index(records)
        trace.generations.append(
            GenerationStat(
                generation=generation,
                best_fitness=records[best].fitness,
                mean_fitness=float(np.mean([r.fitness for r in records])),
                best_record=records[best],
                best_chromosome=population[best],
            )
        )

    seeds = [int(rng.integers(0, 2**64, dtype=np.uint64)) for _ in range(cfg.population_size)]
    population = [random_chromosome(genome, s) for s in seeds]
    records = [evaluate(ch, 0) for ch in population]
    record_generation(0, population, records)

    all_time_best = trace.generations[0].best_fitness
    best_chromosome = trace.generations[0].best_chromosome
    best_record = trace.generations[0].best_record
    stagnant = 0
    trace.termination_reason = TERMINATION_MAX_GENERATIONS

    for generation in range(1, cfg.max_generations + 1):
        elite_order = sorted(range(len(records)), key=lambda i: (-records[i].fitness, i))
        elites = [(population[i], records[i]) for i in elite_order[: cfg.elite_count]]
        scored = [(population[i], records[i].fitness) for i in range(len(population))]
        next_population = [ch for ch, _ in elites]
        next_records = [rec for _, rec in elites]
        offspring: list[Chromosome] = []
        while len(next_population) + len(offspring) < cfg.population_size:
            parent_a = tournament_select(scored, cfg.tournament_size, rng)
            parent_b = tournament_select(scored, cfg.tournament_size, rng)
            if rng.random() < cfg.crossover_rate:
                child_a, child_b = crossover_two_point(
                    parent_a, parent_b, genome, rng,
                    fitness_a=cache[parent_a].fitness, fitness_b=cache[parent_b].fitness,
                )
            else:
                child_a, child_b = parent_a, parent_b
            for child in (child_a, child_b):
                if len(next_population) + len(offspring) < cfg.population_size:
                    offspring.append(mutate(child, cfg, genome, rng))
        population = next_population + offspring
        records = next_records + [evaluate(ch, generation) for ch in offspring]
        record_generation(generation, population, records)
        trace.generations_run = generation

        generation_best = trace.generations[-1].best_fitness
        if generation_best > all_time_best:
            improvement = (generation_best - all_time_best) / max(all_time_best, 1e-12)
            best_idx = _best_index(records)
            best_chromosome = population[best_idx]
            best_record = records[best_idx]
            all_time_best = generation_best
        else:
            improvement = 0.0
        stagnant = stagnant + 1 if improvement < cfg.stagnation_epsilon else 0
        if stagnant >= cfg.stagnation_window:
            trace.termination_reason = TERMINATION_STAGNATION
            break
        if time_budget is not None and time.monotonic() - started > time_budget:
            trace.termination_reason = TERMINATION_TIME_BUDGET
            break

    trace.best_chromosome = best_chromosome
    trace.best_record = best_record
    return best_chromosome, trace
