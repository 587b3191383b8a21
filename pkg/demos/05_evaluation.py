"""
Evaluating a bundle
===================

Four metrics: ITC (view-to-prompt similarity), CLIP similarity
(view-to-reference), FID between view features and reference features,
and a VQA verification score. The packaged fixtures file stores the
published comparison tables so any run can report deltas against them.
"""

from pathlib import Path

import numpy as np

from viewforge.config import stub_config
from viewforge.evalsuite import FeatureSet, fid, fixture_row, load_fixtures
from viewforge.images import save_png
from viewforge.pipeline import run_evaluate, run_generate

OUT = Path("demo-output/05_evaluation")
OUT.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(5)
photo = np.full((96, 96, 3), 40, dtype=np.uint8)
photo[32:64, 19:77] = rng.integers(120, 250, size=3, dtype=np.uint8)
photo_path = OUT / "photo.png"
save_png(photo_path, photo)

config = stub_config(OUT / "cache")
generated = run_generate(config, photo_path)
result = run_evaluate(config, generated.bundle_dir, photo_path)

r = result.report
print(f"itc             = {r.itc:.4f}")
print(f"clip_similarity = {r.clip_similarity:.4f}")
print(f"fid             = {r.fid:.4f}")
print(f"vqa_score       = {r.vqa_score:.4f}")
print(f"report written to {result.report_path}")
print(f"aggregate CSV at  {result.csv_path}")

# the fixtures carry the published tables; numbers are stored verbatim
fixtures = load_fixtures()
print("\npublished reference rows (pascal3d):")
for method in ("nerf_from_image", "ours"):
    print(f"  {method}: {fixture_row(fixtures, 'pascal3d', method)}")

# the FID implementation has closed-form behavior worth seeing once:
# two equal-variance 1-D sets one mean apart score exactly 1
a = FeatureSet(vectors=np.array([[-1.0], [0.0], [1.0]]))
b = FeatureSet(vectors=np.array([[0.0], [1.0], [2.0]]))
print(f"\n1-D closed-form FID check: {fid(a, b):.6f} (expected 1.0)")
