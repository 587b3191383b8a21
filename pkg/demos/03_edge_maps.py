"""
Canny edge maps
===============

Appearance generation is conditioned on edge maps of the structure views,
so the detector is implemented here rather than delegated: Gaussian blur,
Sobel gradients, non-maximum suppression, and hysteresis, all in numpy.
"""

from pathlib import Path

import numpy as np

from viewforge.edges import canny
from viewforge.images import save_png

OUT = Path("demo-output/03_edge_maps")
OUT.mkdir(parents=True, exist_ok=True)

# a toy car: bright body, darker cabin, two wheels
image = np.full((128, 192), 30, dtype=np.uint8)
image[60:100, 20:172] = 200                      # body
image[40:60, 60:130] = 150                       # cabin
for cx in (55, 140):
    yy, xx = np.ogrid[:128, :192]
    image[(yy - 100) ** 2 + (xx - cx) ** 2 <= 14**2] = 90

edges = canny(image)
print(f"default thresholds ({edges.low:.0f}, {edges.high:.0f}): "
      f"{int((edges.raster > 0).sum())} edge px")

# tighter hysteresis keeps only the strongest contours
for low, high in [(40.0, 90.0), (100.0, 200.0), (160.0, 240.0)]:
    e = canny(image, low=low, high=high)
    n = int((e.raster > 0).sum())
    print(f"low={low:5.0f} high={high:5.0f} -> {n:4d} edge px")

save_png(OUT / "toy_car.png", image)
save_png(OUT / "toy_car_edges.png", canny(image, low=40.0, high=90.0).raster)
print(f"\nwrote {OUT}/toy_car.png and toy_car_edges.png")

# constant input -> empty edge map, guaranteed
flat = np.full((64, 64), 128, dtype=np.uint8)
print("constant image is edgeless:", canny(flat).raster.sum() == 0)
