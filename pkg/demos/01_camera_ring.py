"""
The camera ring
===============

Sixteen cameras on a circle, all looking at the origin. This is the pose
convention every other stage inherits: world +z is up, azimuth runs
counter-clockwise from +x, and view i sits at azimuth i * 22.5 degrees.
"""

from pathlib import Path

import numpy as np

from viewforge.geometry import build_manifest, camera_ring, normalize_to_cube

OUT = Path("demo-output/01_camera_ring")
OUT.mkdir(parents=True, exist_ok=True)

# the published setup: 16 views, 5 degree elevation, radius 1.5
ring = camera_ring(n_views=16, elevation_deg=5.0, radius=1.5)

print("view  azimuth  position (x, y, z)")
for i, pose in enumerate(ring.poses):
    x, y, z = pose.position
    print(f"{i:4d}  {pose.azimuth_deg:7.1f}  ({x:+.4f}, {y:+.4f}, {z:+.4f})")

# every camera sits on the sphere and at the same height
radii = [np.linalg.norm(p.position) for p in ring.poses]
print(f"\nmax |radius - 1.5| = {max(abs(r - 1.5) for r in radii):.2e}")
heights = {round(p.position[2], 12) for p in ring.poses}
print(f"distinct heights   = {heights}")

# extrinsics map world points into the camera frame; the origin must land
# on the optical axis, i.e. at (0, 0, depth)
pose0 = ring.poses[0]
origin_in_cam = pose0.rotation @ np.zeros(3) + pose0.translation
print(f"origin in camera 0 = {origin_in_cam}  (depth == radius)")

# models get normalized into the unit cube before rendering so every
# instance fills the frame the same way; the transform comes from the
# model's bounding box
transform = normalize_to_cube((-2.1, -0.9, -0.7), (2.1, 0.9, 0.7))
corners = np.array([[-2.1, -0.9, -0.7], [2.1, 0.9, 0.7]])
mapped = corners * transform.scale + transform.translation
print(f"\nscale, translation = {transform.scale:.4f}, {transform.translation}")
print(f"bbox corners map to {mapped[0]} .. {mapped[1]}")

# a render manifest is the hand-off file an external renderer consumes
manifest = build_manifest(
    instance_id="demo_sedan",
    model_path="models/demo_sedan.obj",
    bbox=((-2.1, -0.9, -0.7), (2.1, 0.9, 0.7)),
    ring=ring,
    out_dir=OUT,
)
print(f"\nmanifest for {manifest.instance_id}: {len(manifest.outputs)} outputs")
print(f"wrote {OUT / 'demo_sedan' / 'manifest.json'}")
