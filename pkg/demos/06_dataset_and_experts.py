"""
Building the training dataset and the expert set
================================================

The structure experts are fine-tuned on grid images rendered from a 3D
corpus. Rendering is external: build-dataset first emits one manifest per
instance, a renderer fills in the views, and a second pass assembles the
training pairs. Here a numpy "renderer" stands in for the real one.
"""

import json
from pathlib import Path

import numpy as np

from viewforge.config import stub_config
from viewforge.images import save_png
from viewforge.pipeline import run_build_dataset, run_train_experts

OUT = Path("demo-output/06_dataset")
OUT.mkdir(parents=True, exist_ok=True)

instances = [
    {"instance_id": f"vehicle_{i:03d}", "model_path": f"models/v{i:03d}.obj",
     "bbox_min": [-2.0, -0.9, -0.7], "bbox_max": [2.0, 0.9, 0.7]}
    for i in range(3)
]
index_path = OUT / "instances.json"
index_path.write_text(json.dumps(instances, indent=2))

config = stub_config(OUT / "cache")

print("--- pass 1: emit manifests ---")
first = run_build_dataset(config, index_path)
print(f"manifests under {first.render_root}")
for instance_id, missing in sorted(first.pending.items()):
    print(f"  {instance_id}: waiting on {len(missing)} views")

# pretend to be the renderer: one flat-shaded box per view
print("\n--- external render step (simulated) ---")
rng = np.random.default_rng(0)
for rec in instances:
    instance_dir = first.render_root / rec["instance_id"]
    doc = json.loads((instance_dir / "manifest.json").read_text())
    body = rng.integers(90, 220, size=3, dtype=np.uint8)
    for name in doc["outputs"]:
        view = np.full((64, 64, 3), 25, dtype=np.uint8)
        view[20:44, 10:54] = body
        save_png(instance_dir / name, view)
print(f"rendered {16 * len(instances)} views")

print("\n--- pass 2: assemble training pairs ---")
second = run_build_dataset(config, index_path)
print(f"{second.n_pairs} pairs "
      f"({second.pairs.n_instances} instances x 5 grids) under "
      f"{second.pairs.root}")
print(f"anchor manifest: {second.pairs.anchor_manifest.name}")
print(f"neighbor manifests: "
      f"{[p.name for p in second.pairs.neighbor_manifests]}")

print("\n--- submit the 5 fine-tune jobs (stub training service) ---")
trained = run_train_experts(config)
for record in trained.experts.job_records:
    print(f"  {record['expert_id']}: {record['status']} "
          f"(dataset {record['dataset_digest'][:12]})")
experts = trained.experts
print(f"anchor expert model:   {experts.anchor_expert.model_id}")
print(f"neighbor expert models: "
      f"{[e.model_id for e in experts.neighbor_experts]}")
print(f"expert set saved to {trained.experts_path}")
