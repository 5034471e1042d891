"""Point cloud and mesh containers, normalization, and noise synthesis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, InvalidInputError

Array = np.ndarray

NOISE_REFERENCES = ("bbox_diagonal", "bounding_sphere_radius")


@dataclass
class PointCloud:
    """An ordered set of 3D points, optionally carrying original indices."""

    points: Array
    indices: Array | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise InvalidInputError("points must have shape (n, 3)")
        if self.points.shape[0] < 1:
            raise InvalidInputError("point cloud must contain at least one point")
        if not np.all(np.isfinite(self.points)):
            raise InvalidInputError("point coordinates must be finite")
        if self.indices is not None:
            self.indices = np.asarray(self.indices, dtype=np.intp)
            if self.indices.shape != (self.points.shape[0],):
                raise InvalidInputError("indices must align with points")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class TriangleMesh:
    """Vertices plus triangle faces (vertex-index triples)."""

    vertices: Array
    faces: Array

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.intp)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise InvalidInputError("vertices must have shape (nv, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise InvalidInputError("faces must have shape (nf, 3)")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise InvalidInputError("face index out of range")
        for f in self.faces:
            if len(set(f.tolist())) != 3:
                raise InvalidInputError(f"degenerate face {f.tolist()}")


@dataclass
class NoiseSpec:
    """Gaussian perturbation: sigma = sigma_fraction * reference length."""

    sigma_fraction: float
    reference: str = "bbox_diagonal"
    seed: int = 0

    def __post_init__(self):
        if self.sigma_fraction < 0:
            raise InvalidInputError("sigma_fraction must be >= 0")
        if self.reference not in NOISE_REFERENCES:
            raise InvalidInputError(f"unknown noise reference {self.reference!r}")


@dataclass
class NormalizeTransform:
    """Affine map applied by normalize_to_unit: p -> (p - center) / scale."""

    center: Array
    scale: float

    def apply(self, points: Array) -> Array:
        return (np.asarray(points, dtype=np.float64) - self.center) / self.scale

    def invert(self, points: Array) -> Array:
        return np.asarray(points, dtype=np.float64) * self.scale + self.center


def bbox_diagonal(cloud: PointCloud) -> float:
    """Euclidean length of the axis-aligned bounding-box diagonal."""
    extents = cloud.points.max(axis=0) - cloud.points.min(axis=0)
    return float(np.linalg.norm(extents))


def bounding_sphere_radius(cloud: PointCloud) -> float:
    """Radius of the centroid-centered sphere containing all points."""
    centroid = cloud.points.mean(axis=0)
    return float(np.sqrt(((cloud.points - centroid) ** 2).sum(axis=1).max()))


def gaussian_samples(shape: tuple, seed: int) -> Array:
    """Standard normal draws via Box-Muller over a Philox counter stream.

    Portable and reproducible: the uniform stream is counter-based and the
    transform is spelled out, so the same seed yields the same bytes on any
    platform.
    """
    n = int(np.prod(shape))
    rng = np.random.Generator(np.random.Philox(seed))
    u1 = 1.0 - rng.random(n)  # in (0, 1], keeps the log finite
    u2 = rng.random(n)
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return z.reshape(shape)


def noise_sigma(cloud: PointCloud, spec: NoiseSpec) -> float:
    if spec.reference == "bbox_diagonal":
        ref = bbox_diagonal(cloud)
    else:
        ref = bounding_sphere_radius(cloud)
    return spec.sigma_fraction * ref


def add_gaussian_noise(cloud: PointCloud, spec: NoiseSpec) -> PointCloud:
    """Perturb each coordinate by i.i.d. N(0, sigma^2); deterministic per seed."""
    sigma = noise_sigma(cloud, spec)
    if sigma == 0.0:
        return PointCloud(cloud.points.copy(), None if cloud.indices is None else cloud.indices.copy())
    z = gaussian_samples(cloud.points.shape, spec.seed)
    return PointCloud(cloud.points + sigma * z,
                      None if cloud.indices is None else cloud.indices.copy())


def normalize_to_unit(cloud: PointCloud) -> tuple[PointCloud, NormalizeTransform]:
    """Center at the origin and scale to bounding-sphere radius 1."""
    center = cloud.points.mean(axis=0)
    radius = bounding_sphere_radius(cloud)
    if radius == 0.0:
        raise DegenerateGeometryError("all points coincide; cannot normalize")
    transform = NormalizeTransform(center=center, scale=radius)
    return PointCloud(transform.apply(cloud.points)), transform


def denormalize(cloud: PointCloud, transform: NormalizeTransform) -> PointCloud:
    return PointCloud(transform.invert(cloud.points),
                      None if cloud.indices is None else cloud.indices.copy())
