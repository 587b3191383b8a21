"""
View grids and the expert assignment
====================================

Multi-view structure generation works on 2x2 grid images: four 256x256
views packed into one 512x512 canvas, row-major. One anchor expert emits
a grid of 4 anchor views from text; four neighbor experts each expand one
anchor into its 4-view azimuth block.
"""

import numpy as np

from viewforge.gridcodec import (
    expert_assignment,
    split,
    split_square,
    tile,
    tile_square,
)

rng = np.random.default_rng(7)
views = [rng.integers(0, 256, (256, 256, 3), dtype=np.uint8) for _ in range(4)]

grid = tile(views, indices=[0, 4, 8, 12])
print(f"grid image: {grid.image.shape}, views {grid.view_indices}")

back = split(grid)
print("round-trip bit-exact:",
      all(np.array_equal(v, b) for v, b in zip(views, back)))

assignment = expert_assignment(n_views=16, stride=4)
print(f"\nanchors: {assignment.anchor_indices}")
for anchor in assignment.anchor_indices:
    block = assignment.neighbor_map[anchor]
    expert = assignment.block_for_view(anchor)
    print(f"  neighbor expert {expert} owns views {block}")

# the single-DM ablation packs everything into one square grid instead:
# 4x4 -> 16 views at 1024px, 3x3 -> 9 views at 768px
sixteen = [rng.integers(0, 256, (256, 256, 3), dtype=np.uint8)
           for _ in range(16)]
canvas = tile_square(sixteen, grid_size=4)
print(f"\nsingle-DM canvas: {canvas.shape}")
print("round-trip bit-exact:",
      all(np.array_equal(v, b)
          for v, b in zip(sixteen, split_square(canvas, grid_size=4))))
