import numpy as np
import pytest

from mambapf.errors import (CoverageError, DegenerateGeometryError,
                            InvalidInputError)
from mambapf.geometry import PointCloud
from mambapf.patches import (Patch, build_knn_graph, extract_patches,
                             stitch_patches, stitch_weights)


def random_cloud(n, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.uniform(-1, 1, size=(n, 3)))


def make_patch(points, reference=None):
    pts = np.asarray(points, dtype=np.float64)
    ref = pts[0] if reference is None else np.asarray(reference, dtype=np.float64)
    radius = np.sqrt(((pts - ref) ** 2).sum(axis=1).max())
    return Patch(points=PointCloud(pts), reference_point=ref, radius=float(radius),
                 original_indices=np.arange(len(pts)))


class TestExtractPatches:
    def test_whole_cloud_single_patch(self):
        cloud = random_cloud(64, seed=1)
        patches = extract_patches(cloud, 64)
        assert len(patches) == 1
        assert sorted(patches[0].original_indices.tolist()) == list(range(64))

    def test_coverage(self):
        cloud = random_cloud(4000, seed=2)
        patches = extract_patches(cloud, 2000)
        union = set()
        for p in patches:
            union.update(p.original_indices.tolist())
        assert union == set(range(4000))

    def test_patches_are_knn_of_seed(self):
        cloud = random_cloud(300, seed=3)
        patches = extract_patches(cloud, 50)
        for patch in patches:
            d = np.linalg.norm(cloud.points - patch.reference_point, axis=1)
            expected = set(np.argsort(d, kind="stable")[:50].tolist())
            assert set(patch.original_indices.tolist()) == expected
            assert patch.radius == pytest.approx(
                d[patch.original_indices].max(), rel=1e-12)

    def test_oversized_patch_rejected(self):
        with pytest.raises(InvalidInputError):
            extract_patches(random_cloud(10), 11)


class TestKnnGraph:
    def test_collinear_tie_break(self):
        patch = make_patch([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
        graph = build_knn_graph(patch, k=1)
        edges = {tuple(e) for e in graph.edges.tolist()}
        # middle point is equidistant from both ends: lower index wins
        assert (1, 0) in edges
        assert (1, 2) not in edges

    def test_complete_digraph(self):
        patch = make_patch(np.random.default_rng(4).normal(size=(6, 3)))
        graph = build_knn_graph(patch, k=5)
        assert graph.edges.shape == (30, 2)
        assert not np.any(graph.edges[:, 0] == graph.edges[:, 1])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(64, 3))
        patch = make_patch(pts)
        graph = build_knn_graph(patch, k=8)
        for i in range(64):
            d = np.linalg.norm(pts - pts[i], axis=1)
            d[i] = np.inf
            expected = np.argsort(d, kind="stable")[:8]
            got = graph.edges[graph.edges[:, 0] == i][:, 1]
            assert set(got.tolist()) == set(expected.tolist())

    def test_k_too_large_rejected(self):
        with pytest.raises(InvalidInputError):
            build_knn_graph(make_patch(np.eye(3)), k=3)


class TestStitchWeights:
    def test_equidistant_uniform(self):
        pts = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]], dtype=float)
        patch = make_patch(pts, reference=[0, 0, 0])
        w = stitch_weights(patch).weights
        assert np.allclose(w, 0.25, atol=1e-12)

    def test_reference_point_dominates(self):
        pts = np.array([[0, 0, 0], [0.5, 0, 0], [0, 0.9, 0]], dtype=float)
        patch = make_patch(pts, reference=[0, 0, 0])
        w = stitch_weights(patch).weights
        assert w[0] > w[1] > w[2]

    def test_matches_formula(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(10, 3))
        ref = rng.normal(size=3)
        patch = make_patch(pts, reference=ref)
        sw = stitch_weights(patch)
        r_s = patch.radius / 3.0
        raw = np.exp(-np.linalg.norm(pts - ref, axis=1) ** 2 / (2 * r_s ** 2))
        assert np.allclose(sw.weights, raw / raw.sum(), atol=1e-15)
        assert sw.support_radius == pytest.approx(patch.radius / 3.0)
        assert sw.weights.sum() == pytest.approx(1.0, abs=1e-9)

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(12, 3))
        ref = pts.mean(axis=0)
        base = stitch_weights(make_patch(pts, reference=ref)).weights
        theta = 0.7
        R = np.array([[np.cos(theta), -np.sin(theta), 0],
                      [np.sin(theta), np.cos(theta), 0], [0, 0, 1.0]])
        shift = np.array([3.0, -1.0, 2.0])
        moved = stitch_weights(
            make_patch(pts @ R.T + shift, reference=R @ ref + shift)).weights
        assert np.allclose(base, moved, atol=1e-9)

    def test_zero_radius_rejected(self):
        patch = Patch(points=PointCloud(np.zeros((3, 3))),
                      reference_point=np.zeros(3), radius=0.0,
                      original_indices=np.arange(3))
        with pytest.raises(DegenerateGeometryError):
            stitch_weights(patch)


class TestStitchPatches:
    def test_single_patch_passthrough(self):
        cloud = random_cloud(32, seed=8)
        patches = extract_patches(cloud, 32)
        moved = PointCloud(cloud.points[patches[0].original_indices] + 0.1)
        out = stitch_patches(patches, [moved], 32)
        reordered = np.empty_like(out.points)
        reordered[patches[0].original_indices] = moved.points
        assert np.array_equal(out.points, reordered)

    def test_disjoint_concatenation(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(size=(8, 3))
        p1 = Patch(points=PointCloud(pts[:4]), reference_point=pts[0],
                   radius=1.0, original_indices=np.arange(4))
        p2 = Patch(points=PointCloud(pts[4:]), reference_point=pts[4],
                   radius=1.0, original_indices=np.arange(4, 8))
        out = stitch_patches([p1, p2], [p1.points, p2.points], 8)
        assert np.array_equal(out.points, pts)

    def test_overlap_weighted_mean(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
        p1 = Patch(points=PointCloud(pts[:2]), reference_point=pts[0],
                   radius=1.0, original_indices=np.array([0, 1]))
        p2 = Patch(points=PointCloud(pts[1:]), reference_point=pts[2],
                   radius=1.0, original_indices=np.array([1, 2]))
        d1 = PointCloud(np.array([[0, 0, 0], [1.1, 0, 0]]))
        d2 = PointCloud(np.array([[0.9, 0, 0], [2, 0, 0]]))
        out = stitch_patches([p1, p2], [d1, d2], 3)
        w1 = stitch_weights(p1).weights[1]
        w2 = stitch_weights(p2).weights[0]
        expected = (w1 * 1.1 + w2 * 0.9) / (w1 + w2)
        assert out.points[1][0] == pytest.approx(expected, rel=1e-12)

    def test_identity_denoising_is_exact(self):
        cloud = random_cloud(200, seed=10)
        patches = extract_patches(cloud, 80)
        denoised = [PointCloud(p.points.points.copy()) for p in patches]
        out = stitch_patches(patches, denoised, 200)
        assert np.array_equal(out.points, cloud.points)

    def test_uncovered_index_rejected(self):
        p1 = Patch(points=PointCloud(np.zeros((2, 3)) + [[0, 0, 0], [1, 0, 0]]),
                   reference_point=np.zeros(3), radius=1.0,
                   original_indices=np.array([0, 1]))
        with pytest.raises(CoverageError):
            stitch_patches([p1], [p1.points], 3)
