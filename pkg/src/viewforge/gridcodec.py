"""2x2 view-grid encoding and anchor/neighbor index bookkeeping.

Expert models emit one square image packing four square sub-views. The
quadrant order is row-major and fixed here once for the whole pipeline:

    position 0 -> top-left      position 1 -> top-right
    position 2 -> bottom-left   position 3 -> bottom-right

``expert_assignment`` carries the other global convention: anchors are
every stride-th view starting at 0, and each anchor's block is the anchor
followed by the next stride-1 views in azimuth order (indices mod n_views).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .images import as_raster

DEFAULT_SUB_SIZE = 256


@dataclass(frozen=True)
class ViewGrid:
    """A 2*s square image tiling four s-pixel sub-views."""

    image: np.ndarray
    sub_size: int
    view_indices: Tuple[int, int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "view_indices", tuple(self.view_indices))
        h, w = self.image.shape[:2]
        if h != w or h != 2 * self.sub_size:
            raise ValueError(
                f"grid image must be square with side 2*{self.sub_size}, "
                f"got {h}x{w}"
            )
        if len(self.view_indices) != 4 or len(set(self.view_indices)) != 4:
            raise ValueError(f"need 4 distinct view indices, got {self.view_indices}")


@dataclass(frozen=True)
class ExpertAssignment:
    """Partition of the ring's view indices into per-expert blocks."""

    n_views: int
    stride: int
    anchor_indices: Tuple[int, ...]
    neighbor_map: Dict[int, Tuple[int, ...]]

    def block_for_view(self, view_index: int) -> int:
        """Ordinal of the expert responsible for a view index."""
        return (view_index % self.n_views) // self.stride

    def to_dict(self) -> dict:
        return {
            "n_views": self.n_views,
            "stride": self.stride,
            "anchor_indices": list(self.anchor_indices),
            "neighbor_map": {str(a): list(t) for a, t in self.neighbor_map.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExpertAssignment":
        return cls(
            n_views=int(data["n_views"]),
            stride=int(data["stride"]),
            anchor_indices=tuple(int(a) for a in data["anchor_indices"]),
            neighbor_map={
                int(a): tuple(int(v) for v in t)
                for a, t in data["neighbor_map"].items()
            },
        )


def tile(views: Sequence[np.ndarray], indices: Sequence[int]) -> ViewGrid:
    """Pack four equal-size square rasters into one grid, row-major.

    Pixels are copied bit-exactly; ``indices`` records which global view
    sits at each quadrant position.
    """
    if len(views) != 4:
        raise ValueError(f"tile needs exactly 4 views, got {len(views)}")
    rasters = [as_raster(v) for v in views]
    shapes = {r.shape for r in rasters}
    if len(shapes) != 1:
        raise ValueError(f"sub-views must share one shape, got {sorted(shapes)}")
    shape = rasters[0].shape
    if shape[0] != shape[1]:
        raise ValueError(f"sub-views must be square, got {shape[0]}x{shape[1]}")

    s = shape[0]
    out_shape = (2 * s, 2 * s) + shape[2:]
    grid = np.zeros(out_shape, dtype=np.uint8)
    grid[:s, :s] = rasters[0]
    grid[:s, s:] = rasters[1]
    grid[s:, :s] = rasters[2]
    grid[s:, s:] = rasters[3]
    return ViewGrid(image=grid, sub_size=s, view_indices=tuple(int(i) for i in indices))


def split_quadrants(image: np.ndarray) -> List[np.ndarray]:
    """Cut a square raster into its four quadrants, row-major order."""
    arr = as_raster(image)
    h, w = arr.shape[:2]
    if h != w:
        raise ValueError(f"grid image must be square, got {h}x{w}")
    if h % 2 != 0:
        raise ValueError(f"grid side must be even, got {h}")
    s = h // 2
    return [
        arr[:s, :s].copy(),
        arr[:s, s:].copy(),
        arr[s:, :s].copy(),
        arr[s:, s:].copy(),
    ]


def split(grid: ViewGrid) -> List[np.ndarray]:
    """Exact inverse of :func:`tile`; sub-view order matches view_indices."""
    return split_quadrants(grid.image)


def tile_square(views: Sequence[np.ndarray], grid_size: int) -> np.ndarray:
    """Row-major n x n tiling used by the single-model ablation grids."""
    if len(views) != grid_size * grid_size:
        raise ValueError(
            f"{grid_size}x{grid_size} tiling needs {grid_size * grid_size} views, "
            f"got {len(views)}"
        )
    rasters = [as_raster(v) for v in views]
    shapes = {r.shape for r in rasters}
    if len(shapes) != 1:
        raise ValueError(f"sub-views must share one shape, got {sorted(shapes)}")
    s = rasters[0].shape[0]
    if rasters[0].shape[1] != s:
        raise ValueError("sub-views must be square")
    out = np.zeros((grid_size * s, grid_size * s) + rasters[0].shape[2:], np.uint8)
    for pos, r in enumerate(rasters):
        row, col = divmod(pos, grid_size)
        out[row * s : (row + 1) * s, col * s : (col + 1) * s] = r
    return out


def split_square(image: np.ndarray, grid_size: int) -> List[np.ndarray]:
    """Inverse of :func:`tile_square`."""
    arr = as_raster(image)
    h, w = arr.shape[:2]
    if h != w or h % grid_size != 0:
        raise ValueError(
            f"cannot split {h}x{w} image into a {grid_size}x{grid_size} grid"
        )
    s = h // grid_size
    return [
        arr[row * s : (row + 1) * s, col * s : (col + 1) * s].copy()
        for row in range(grid_size)
        for col in range(grid_size)
    ]


def expert_assignment(n_views: int, stride: int) -> ExpertAssignment:
    """Anchors at every stride-th index from 0; each anchor owns the block
    (a, a+1, ..., a+stride-1) with arithmetic mod n_views.

    The blocks partition {0, ..., n_views-1} with no overlap.
    """
    if n_views < 1 or stride < 1:
        raise ValueError(f"n_views and stride must be positive, got {n_views}, {stride}")
    if n_views % stride != 0:
        raise ValueError(f"stride {stride} does not divide n_views {n_views}")
    anchors = tuple(range(0, n_views, stride))
    neighbor_map = {
        a: tuple((a + off) % n_views for off in range(stride)) for a in anchors
    }
    return ExpertAssignment(
        n_views=n_views,
        stride=stride,
        anchor_indices=anchors,
        neighbor_map=neighbor_map,
    )


def anchor_grid_name(instance_id: str) -> str:
    return f"{instance_id}_anchorgrid.png"


def expert_grid_name(instance_id: str, expert_ordinal: int) -> str:
    return f"{instance_id}_expert{expert_ordinal}.png"
