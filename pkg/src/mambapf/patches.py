"""KNN patch extraction, per-patch directed graphs, and Gaussian stitching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import CoverageError, DegenerateGeometryError, InvalidInputError
from .geometry import PointCloud

Array = np.ndarray


@dataclass
class Patch:
    """A point subset with its reference point, radius, and source indices."""

    points: PointCloud
    reference_point: Array
    radius: float
    original_indices: Array

    def __post_init__(self):
        self.reference_point = np.asarray(self.reference_point, dtype=np.float64)
        self.original_indices = np.asarray(self.original_indices, dtype=np.intp)
        if self.reference_point.shape != (3,):
            raise InvalidInputError("reference_point must be a 3-vector")
        if self.original_indices.shape != (len(self.points),):
            raise InvalidInputError("original_indices must align with points")
        if len(np.unique(self.original_indices)) != len(self.original_indices):
            raise InvalidInputError("original_indices must be unique")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class DirectedGraph:
    """k outgoing edges per vertex, stored as (source, target) pairs."""

    vertex_count: int
    edges: Array
    k: int

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.intp)
        if self.edges.ndim != 2 or self.edges.shape[1] != 2:
            raise InvalidInputError("edges must have shape (E, 2)")


@dataclass
class StitchWeights:
    """Per-point Gaussian blending weights; sum to 1 over the patch."""

    weights: Array
    support_radius: float


def _knn_indices(points: Array, queries: Array, k: int) -> Array:
    """Exact k-nearest neighbors with (distance, index) lexicographic order.

    Brute force distance matrix: patches are small and the index tie-break
    must be exact, which tree queries do not guarantee.
    """
    qq = (queries ** 2).sum(axis=1)
    pp = (points ** 2).sum(axis=1)
    d2 = qq[:, None] + pp[None, :] - 2.0 * (queries @ points.T)
    cand = k + 8
    if cand >= points.shape[0]:
        # Stable sort keeps equal distances in ascending index order.
        order = np.argsort(d2, axis=1, kind="stable")
        return order[:, :k].astype(np.intp)
    idx = np.argpartition(d2, cand - 1, axis=1)[:, :cand]
    dsub = np.take_along_axis(d2, idx, axis=1)
    order = np.lexsort((idx, dsub), axis=1)
    sorted_idx = np.take_along_axis(idx, order, axis=1)
    sorted_d = np.take_along_axis(dsub, order, axis=1)
    result = sorted_idx[:, :k].astype(np.intp)
    # If the kth distance ties the candidate-window boundary, a tied lower
    # index may have been partitioned out; redo those rows with a full sort.
    risky = np.nonzero(sorted_d[:, k - 1] >= sorted_d[:, -1])[0]
    for r in risky:
        result[r] = np.argsort(d2[r], kind="stable")[:k]
    return result


def extract_patches(cloud: PointCloud, patch_size: int,
                    seed_strategy: str = "fps_coverage") -> list[Patch]:
    """Cover the cloud with KNN patches around farthest-point-sampled seeds.

    The first seed is the point nearest the centroid; further seeds are the
    uncovered point farthest from all existing seeds, until every point lies
    in at least one patch.
    """
    n = len(cloud)
    if patch_size > n:
        raise InvalidInputError(f"patch_size {patch_size} exceeds cloud size {n}")
    if seed_strategy != "fps_coverage":
        raise InvalidInputError(f"unknown seed strategy {seed_strategy!r}")
    pts = cloud.points
    tree = cKDTree(pts)
    centroid = pts.mean(axis=0)
    first = int(np.argmin(((pts - centroid) ** 2).sum(axis=1)))

    covered = np.zeros(n, dtype=bool)
    min_seed_dist = np.full(n, np.inf)
    patches: list[Patch] = []
    seed = first
    while True:
        seed_pt = pts[seed]
        _, nn = tree.query(seed_pt, k=patch_size)
        nn = np.atleast_1d(nn).astype(np.intp)
        nn = np.sort(nn)
        patch_pts = pts[nn]
        radius = float(np.sqrt(((patch_pts - seed_pt) ** 2).sum(axis=1).max()))
        patches.append(Patch(points=PointCloud(patch_pts.copy()),
                             reference_point=seed_pt.copy(),
                             radius=radius,
                             original_indices=nn))
        covered[nn] = True
        if covered.all():
            break
        d = np.sqrt(((pts - seed_pt) ** 2).sum(axis=1))
        min_seed_dist = np.minimum(min_seed_dist, d)
        cand = np.where(~covered)[0]
        seed = int(cand[np.argmax(min_seed_dist[cand])])
    return patches


def build_knn_graph(patch: Patch, k: int) -> DirectedGraph:
    """Directed KNN graph within a patch; ties broken by lower point index."""
    n = len(patch)
    if k >= n:
        raise InvalidInputError(f"k={k} must be smaller than patch size {n}")
    return knn_graph_from_features(patch.points.points, k)


def knn_graph_from_features(features: Array, k: int) -> DirectedGraph:
    """KNN digraph over arbitrary-dimensional row vectors (self excluded)."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if k >= n:
        raise InvalidInputError(f"k={k} must be smaller than vertex count {n}")
    nbr = _knn_indices(features, features, k + 1)
    edges = np.empty((n * k, 2), dtype=np.intp)
    for i in range(n):
        row = nbr[i]
        row = row[row != i][:k]
        edges[i * k:(i + 1) * k, 0] = i
        edges[i * k:(i + 1) * k, 1] = row
    return DirectedGraph(vertex_count=n, edges=edges, k=k)


def stitch_weights(patch: Patch) -> StitchWeights:
    """Gaussian weights about the reference point, support radius = radius/3."""
    if patch.radius <= 0.0:
        raise DegenerateGeometryError("patch radius must be positive")
    r_s = patch.radius / 3.0
    d2 = ((patch.points.points - patch.reference_point) ** 2).sum(axis=1)
    raw = np.exp(-d2 / (2.0 * r_s ** 2))
    return StitchWeights(weights=raw / raw.sum(), support_radius=r_s)


def stitch_patches(patches: list[Patch], denoised: list[PointCloud],
                   original_size: int) -> PointCloud:
    """Blend overlapping denoised patches back into one cloud.

    Each output point is the stitch-weight-weighted average of its denoised
    copies. Points covered exactly once, or whose copies are bitwise equal,
    pass through unchanged.
    """
    if len(patches) != len(denoised):
        raise InvalidInputError("patches and denoised lists must align")
    copies: list[list[tuple[float, Array]]] = [[] for _ in range(original_size)]
    for patch, out in zip(patches, denoised):
        if len(out) != len(patch):
            raise InvalidInputError("denoised cloud must align with its patch")
        w = stitch_weights(patch).weights
        for local, orig in enumerate(patch.original_indices):
            copies[orig].append((float(w[local]), out.points[local]))
    result = np.empty((original_size, 3), dtype=np.float64)
    for j in range(original_size):
        entries = copies[j]
        if not entries:
            raise CoverageError(f"original index {j} appears in no patch")
        if len(entries) == 1:
            result[j] = entries[0][1]
            continue
        pts = np.array([p for _, p in entries])
        if np.all(pts == pts[0]):
            result[j] = pts[0]
            continue
        ws = np.array([w for w, _ in entries])
        result[j] = (ws[:, None] * pts).sum(axis=0) / ws.sum()
    return PointCloud(result)
