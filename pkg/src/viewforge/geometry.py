"""Camera rings, object normalization, and render manifests.

Coordinate conventions (used everywhere poses are serialized):

    World frame: right-handed, +z up. Azimuth is measured counter-clockwise
    from +x in the xy-plane; elevation is the angle above the xy-plane.

    Camera frame: +x right, +y down, +z forward (optical axis), the usual
    computer-vision convention. The extrinsic is the 3x4 world-to-camera
    transform [R | t] with t = -R @ position.

A camera at (azimuth a, elevation e, radius r) sits at

    p = r * (cos e * cos a, cos e * sin a, sin e)

and looks at the origin. The render manifest is the declarative input an
external renderer consumes; this module never rasterizes anything.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateGeometryError, ManifestWriteError

DEFAULT_IMAGE_SIZE = 256
DEFAULT_FOV_DEG = 50.0

_PARALLEL_TOL = 1e-12


@dataclass(frozen=True)
class CameraPose:
    """One posed camera on the ring.

    ``extrinsic`` is the 3x4 world-to-camera matrix; its rotation block is
    orthonormal with determinant +1 and its forward axis points at the
    world origin.
    """

    azimuth_deg: float
    elevation_deg: float
    radius: float
    extrinsic: np.ndarray

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsic[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsic[:, 3]

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates, recovered as -R^T t."""
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        """Optical axis direction in world coordinates."""
        return self.rotation[2, :]

    def to_dict(self) -> dict:
        return {
            "azimuth_deg": self.azimuth_deg,
            "elevation_deg": self.elevation_deg,
            "radius": self.radius,
            "extrinsic": [[float(v) for v in row] for row in self.extrinsic],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraPose":
        return cls(
            azimuth_deg=float(data["azimuth_deg"]),
            elevation_deg=float(data["elevation_deg"]),
            radius=float(data["radius"]),
            extrinsic=np.asarray(data["extrinsic"], dtype=float).reshape(3, 4),
        )


@dataclass(frozen=True)
class CameraRing:
    """Equally spaced azimuth cameras at fixed elevation and radius."""

    poses: tuple
    n_views: int
    start_azimuth_deg: float

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) != self.n_views:
            raise ValueError(
                f"ring has {len(self.poses)} poses but n_views={self.n_views}"
            )

    @property
    def elevation_deg(self) -> float:
        return self.poses[0].elevation_deg

    @property
    def radius(self) -> float:
        return self.poses[0].radius

    def to_list(self) -> list:
        return [p.to_dict() for p in self.poses]

    @classmethod
    def from_list(cls, data: Sequence[dict]) -> "CameraRing":
        poses = tuple(CameraPose.from_dict(d) for d in data)
        return cls(
            poses=poses,
            n_views=len(poses),
            start_azimuth_deg=poses[0].azimuth_deg,
        )


@dataclass(frozen=True)
class NormalizationTransform:
    """Uniform scale + translation taking a bounding box into [-0.5, 0.5]^3.

    Applied as ``x' = scale * x + translation``; the longest box axis ends
    up spanning exactly [-0.5, 0.5].
    """

    scale: float
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=float) + self.translation

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationTransform":
        return cls(
            scale=float(data["scale"]),
            translation=np.asarray(data["translation"], dtype=float),
        )


@dataclass(frozen=True)
class RenderManifest:
    """Declarative description of one instance's 16-view render job."""

    instance_id: str
    model_path: str
    normalization: NormalizationTransform
    cameras: CameraRing
    image_size: int = DEFAULT_IMAGE_SIZE
    fov_deg: float = DEFAULT_FOV_DEG
    outputs: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if len(self.outputs) != self.cameras.n_views:
            raise ValueError(
                f"{len(self.outputs)} output paths for "
                f"{self.cameras.n_views} views"
            )
        if len(set(self.outputs)) != len(self.outputs):
            raise ValueError("output paths must be unique")

    def to_json(self) -> str:
        doc = {
            "instance_id": self.instance_id,
            "model_path": self.model_path,
            "normalization": self.normalization.to_dict(),
            "cameras": self.cameras.to_list(),
            "image_size": self.image_size,
            "fov_deg": self.fov_deg,
            "outputs": list(self.outputs),
        }
        return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RenderManifest":
        doc = json.loads(text)
        return cls(
            instance_id=doc["instance_id"],
            model_path=doc["model_path"],
            normalization=NormalizationTransform.from_dict(doc["normalization"]),
            cameras=CameraRing.from_list(doc["cameras"]),
            image_size=int(doc["image_size"]),
            fov_deg=float(doc["fov_deg"]),
            outputs=tuple(doc["outputs"]),
        )


def look_at_extrinsic(position, target, up_hint) -> np.ndarray:
    """World-to-camera 3x4 matrix for a camera at ``position`` looking at
    ``target`` with ``up_hint`` fixing the roll.

    Raises DegenerateGeometryError for a zero baseline or an up hint
    parallel to the viewing direction.
    """
    position = np.asarray(position, dtype=float)
    target = np.asarray(target, dtype=float)
    up_hint = np.asarray(up_hint, dtype=float)

    baseline = target - position
    dist = np.linalg.norm(baseline)
    if dist < _PARALLEL_TOL:
        raise DegenerateGeometryError("camera position coincides with target")
    forward = baseline / dist

    right = np.cross(forward, up_hint)
    right_norm = np.linalg.norm(right)
    if right_norm < _PARALLEL_TOL * max(1.0, np.linalg.norm(up_hint)):
        raise DegenerateGeometryError("up hint is parallel to the view direction")
    right /= right_norm
    down = np.cross(forward, right)

    rotation = np.stack([right, down, forward])
    translation = -rotation @ position
    return np.hstack([rotation, translation[:, None]])


def camera_ring(
    n_views: int,
    elevation_deg: float,
    radius: float,
    start_azimuth_deg: float = 0.0,
) -> CameraRing:
    """Build ``n_views`` cameras equally spaced in azimuth, all at the same
    elevation and radius, each looking at the origin with world up = +z.

    Azimuth of view i is ``start + i * 360 / n_views`` (mod 360).
    """
    if n_views < 1:
        raise ValueError(f"n_views must be >= 1, got {n_views}")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")

    step = 360.0 / n_views
    up = np.array([0.0, 0.0, 1.0])
    poses = []
    for i in range(n_views):
        azimuth = (start_azimuth_deg + i * step) % 360.0
        az = np.deg2rad(azimuth)
        el = np.deg2rad(elevation_deg)
        position = radius * np.array(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
        )
        extrinsic = look_at_extrinsic(position, np.zeros(3), up)
        poses.append(
            CameraPose(
                azimuth_deg=azimuth,
                elevation_deg=elevation_deg,
                radius=radius,
                extrinsic=extrinsic,
            )
        )
    return CameraRing(
        poses=tuple(poses), n_views=n_views, start_azimuth_deg=start_azimuth_deg % 360.0
    )


def normalize_to_cube(bbox_min, bbox_max) -> NormalizationTransform:
    """Uniform transform fitting a bounding box into the [-0.5, 0.5]^3 cube.

    The longest axis spans exactly [-0.5, 0.5]; the box center maps to the
    origin.
    """
    bbox_min = np.asarray(bbox_min, dtype=float)
    bbox_max = np.asarray(bbox_max, dtype=float)
    extent = bbox_max - bbox_min
    if np.any(extent < 0):
        raise ValueError("bbox_max must be >= bbox_min on every axis")
    max_extent = extent.max()
    if max_extent <= 0:
        raise ValueError("bounding box has zero extent on all axes")
    scale = 1.0 / max_extent
    center = (bbox_min + bbox_max) / 2.0
    return NormalizationTransform(scale=scale, translation=-scale * center)


def build_manifest(
    instance_id: str,
    model_path: str,
    bbox,
    ring: CameraRing,
    out_dir,
    image_size: int = DEFAULT_IMAGE_SIZE,
    fov_deg: float = DEFAULT_FOV_DEG,
) -> RenderManifest:
    """Write ``<out_dir>/<instance_id>/manifest.json`` and return the manifest.

    ``bbox`` is a (bbox_min, bbox_max) pair. Output paths are deterministic
    view_00.png ... view_NN.png names, relative to the manifest's directory,
    ordered by view index. Two calls with equal inputs produce byte-identical
    documents.
    """
    bbox_min, bbox_max = bbox
    normalization = normalize_to_cube(bbox_min, bbox_max)
    outputs = tuple(f"view_{i:02d}.png" for i in range(ring.n_views))
    manifest = RenderManifest(
        instance_id=instance_id,
        model_path=model_path,
        normalization=normalization,
        cameras=ring,
        image_size=image_size,
        fov_deg=fov_deg,
        outputs=outputs,
    )
    instance_dir = Path(out_dir) / instance_id
    try:
        instance_dir.mkdir(parents=True, exist_ok=True)
        (instance_dir / "manifest.json").write_text(
            manifest.to_json(), encoding="utf-8"
        )
    except OSError as exc:
        raise ManifestWriteError(
            f"cannot write manifest for {instance_id!r}: {exc}"
        ) from exc
    return manifest


def load_manifest(path) -> RenderManifest:
    return RenderManifest.from_json(Path(path).read_text(encoding="utf-8"))
