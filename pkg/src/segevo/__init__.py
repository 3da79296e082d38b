"""Robustness evaluation for image segmentation models: evolve sequences of
fidelity-constrained metamorphic distortions that minimize segmentation
quality while keeping PSNR above a configurable gate, then export and audit
the resulting adversarial datasets.
"""

__version__ = "0.1.0"

from . import errors
from .imaging import Image, IoUReport, LabelMap, iou, mean_iou_over_set, mse, psnr
from .transforms import (
    RNG_ALGORITHM,
    DistortionKind,
    DistortionParams,
    ParameterBounds,
    apply_distortion,
    apply_sequence,
    channel_dropout,
    channel_gaussian,
    check_params,
    default_bounds,
    line_column_dropout,
    line_stripping,
    make_rng,
    region_dropout,
    salt_pepper,
    spatial_gaussian,
)
from .genome import (
    Chromosome,
    GenomeConfig,
    SubTransform,
    decode,
    encode,
    random_chromosome,
    random_gene,
    to_transform_sequence,
    validate,
)
from .evolution import (
    EvolutionTrace,
    FitnessRecord,
    GaConfig,
    GenerationStat,
    crossover_two_point,
    evolve,
    fitness,
    fitness_score,
    mutate,
    tournament_select,
)
from .oracle import (
    DEFAULT_CENTROIDS,
    PaletteSegmenter,
    RemoteOracle,
    make_oracle,
    palette_segment,
    remote_segment,
)
from .stats import (
    CohensDResult,
    DistributionSummary,
    PairedSamples,
    WilcoxonResult,
    cohens_d,
    summarize_distribution,
    wilcoxon_signed_rank,
)
from .dataset_io import (
    DatasetEntry,
    DatasetIndex,
    LayoutConfig,
    ManifestWriter,
    RunManifest,
    SceneRegion,
    SceneSpec,
    export_adversarial,
    load_dataset,
    load_image,
    load_labels,
    load_manifest,
    save_image,
    save_labels,
    synth_scene,
    write_demo_corpus,
)
from .campaign import (
    CampaignConfig,
    EvaluateReport,
    ReplayReport,
    StatsReport,
    cmd_attack,
    cmd_evaluate,
    cmd_replay,
    cmd_stats,
    derive_entry_seed,
)

__all__ = [name for name in dir() if not name.startswith("_")]
