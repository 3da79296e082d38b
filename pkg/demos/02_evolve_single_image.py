"""
Evolving a distortion program for one image
===========================================

The evolver searches for a chromosome (a sequence of distortion genes) that
confuses the segmenter as much as possible while keeping PSNR above 20 dB.
Fitness is (1 - IoU) scaled by PSNR/20, and zero whenever the gate fails,
so "destroy the image" is never a winning strategy.
"""

from pathlib import Path

from segevo.dataset_io import SceneRegion, SceneSpec, save_image, synth_scene
from segevo.evolution import GaConfig, evolve
from segevo.genome import to_transform_sequence
from segevo.imaging import iou, psnr
from segevo.oracle import PaletteSegmenter
from segevo.transforms import apply_sequence

out_dir = Path("demo-output/evolve")
out_dir.mkdir(parents=True, exist_ok=True)

spec = SceneSpec(
    height=64,
    width=64,
    regions=(
        SceneRegion(class_id=1, top=6, left=6, height=28, width=24),
        SceneRegion(class_id=2, top=20, left=36, height=34, width=24),
        SceneRegion(class_id=4, top=44, left=4, height=16, width=26),
    ),
    color_jitter=5,
)
image, truth = synth_scene(spec, seed=3)
oracle = PaletteSegmenter()
print(f"clean mean IoU: {iou(oracle.segment(image), truth).mean_iou:.3f}")

# Scaled-down settings so the demo finishes in seconds. The published
# defaults (population 50, up to 100 generations) are just GaConfig().
cfg = GaConfig(population_size=20, max_generations=30, master_seed=7)
best, trace = evolve(image, truth, oracle, cfg)

print(f"run ended by {trace.termination_reason} after "
      f"{trace.generations_run} generations, {trace.oracle_calls} oracle calls")
print()
print("generation   best fitness   mean fitness")
for g in trace.generations[:: max(1, len(trace.generations) // 10)]:
    print(f"{g.generation:>10d}   {g.best_fitness:>12.4f}   {g.mean_fitness:>12.4f}")

# The winning chromosome, gene by gene. Inactive genes are carried in the
# genome but do nothing; to_transform_sequence filters them out and pairs
# each gene's params with its private RNG seed.
print()
print("best chromosome:")
for params, seed in to_transform_sequence(best):
    fields = {k: v for k, v in vars(params).items()
              if v is not None and k != "kind"}
    print(f"  {params.kind.value}  {fields}  (seed {seed:#018x})")

record = trace.best_record
print()
print(f"best fitness {record.fitness:.4f} at IoU {record.iou:.3f}, "
      f"PSNR {record.psnr:.2f} dB")

adversarial = apply_sequence(image, to_transform_sequence(best))
save_image(image, out_dir / "clean.png")
save_image(adversarial, out_dir / "adversarial.png")
print(f"verify: PSNR {psnr(image, adversarial):.2f} dB, "
      f"IoU {iou(oracle.segment(adversarial), truth).mean_iou:.3f}")
print(f"images written to {out_dir}/")
