"""Reconstruction loss, total loss aggregation, and CD / P2M metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidInputError
from .geometry import PointCloud, TriangleMesh
from .patches import StitchWeights

Array = np.ndarray

METRIC_REPORT_SCALE = 1e5  # presentation-layer factor matching common tables


@dataclass
class LossBreakdown:
    """Per-iteration loss components and their weighted total."""

    recon: list
    render: list
    alpha: float

    @property
    def total(self) -> float:
        return float(sum(r + self.alpha * v for r, v in zip(self.recon, self.render)))


def recon_loss_t(pred, gt_points: Array, weights: Array) -> Tensor:
    """Weighted squared distance from each predicted point to its nearest
    ground-truth point. The nearest-neighbor assignment is held fixed in the
    backward pass (the min is locally smooth away from ties)."""
    pred = ad.as_tensor(pred)
    gt_points = np.asarray(gt_points, dtype=np.float64)
    if gt_points.size == 0:
        raise InvalidInputError("ground-truth cloud must be nonempty")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != pred.value.shape[0]:
        raise InvalidInputError("weights must align with predicted points")
    tree = cKDTree(gt_points)
    _, nn = tree.query(pred.value)
    nearest = gt_points[nn]
    diff = pred.value - nearest
    value = float((weights * (diff ** 2).sum(axis=1)).sum())

    def vjp(g):
        return g * 2.0 * weights[:, None] * diff

    return Tensor(value, parents=((pred, vjp),))


def recon_loss(pred: PointCloud, adaptive_gt: PointCloud,
               weights: StitchWeights) -> float:
    return recon_loss_t(pred.points, adaptive_gt.points, weights.weights).item()


def total_loss(recon_terms, render_terms, alpha: float):
    """Sum over iterations of recon_t + alpha * render_t (Tensors or floats)."""
    if len(recon_terms) != len(render_terms):
        raise InvalidInputError("recon and render terms must align per iteration")
    total = None
    for r, v in zip(recon_terms, render_terms):
        term = r + alpha * v
        total = term if total is None else total + term
    return total


def chamfer_distance(P: PointCloud, Q: PointCloud) -> float:
    """Symmetric mean nearest-neighbor distance (unsquared L2 both ways)."""
    p, q = P.points, Q.points
    d_pq, _ = cKDTree(q).query(p)
    d_qp, _ = cKDTree(p).query(q)
    return float(d_pq.mean() + d_qp.mean())


def _closest_point_on_triangles(points: Array, tri: Array) -> Array:
    """Squared distance from each point to each triangle, shape (nP, nF).

    Closest point via barycentric-region clamping (Ericson's method),
    vectorized over all point/triangle pairs.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]      # (nF, 3)
    ab = b - a
    ac = c - a
    p = points[:, None, :]                          # (nP, 1, 3)
    ap = p - a[None]
    d1 = (ab[None] * ap).sum(-1)
    d2 = (ac[None] * ap).sum(-1)
    bp = p - b[None]
    d3 = (ab[None] * bp).sum(-1)
    d4 = (ac[None] * bp).sum(-1)
    cp = p - c[None]
    d5 = (ab[None] * cp).sum(-1)
    d6 = (ac[None] * cp).sum(-1)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(denom != 0.0, vb / denom, 0.0)
        w = np.where(denom != 0.0, vc / denom, 0.0)
        v_edge_ab = np.where(d1 - d3 != 0.0, d1 / (d1 - d3), 0.0)
        w_edge_ac = np.where(d2 - d6 != 0.0, d2 / (d2 - d6), 0.0)
        den_bc = (d4 - d3) + (d5 - d6)
        w_edge_bc = np.where(den_bc != 0.0, (d4 - d3) / den_bc, 0.0)

    closest = a[None] + v[..., None] * ab[None] + w[..., None] * ac[None]

    # edge BC region
    cond_bc = ((d4 - d3) >= 0) & ((d5 - d6) >= 0) & (va <= 0)
    pt = b[None] + np.clip(w_edge_bc, 0, 1)[..., None] * (c - b)[None]
    closest = np.where(cond_bc[..., None], pt, closest)
    # edge AC region
    cond_ac = (d2 >= 0) & (d6 <= 0) & (vb <= 0)
    pt = a[None] + np.clip(w_edge_ac, 0, 1)[..., None] * ac[None]
    closest = np.where(cond_ac[..., None], pt, closest)
    # edge AB region
    cond_ab = (d1 >= 0) & (d3 <= 0) & (vc <= 0)
    pt = a[None] + np.clip(v_edge_ab, 0, 1)[..., None] * ab[None]
    closest = np.where(cond_ab[..., None], pt, closest)
    # vertex regions
    cond_c = (d6 >= 0) & (d5 <= d6)
    closest = np.where(cond_c[..., None], np.broadcast_to(c[None], closest.shape), closest)
    cond_b = (d3 >= 0) & (d4 <= d3)
    closest = np.where(cond_b[..., None], np.broadcast_to(b[None], closest.shape), closest)
    cond_a = (d1 <= 0) & (d2 <= 0)
    closest = np.where(cond_a[..., None], np.broadcast_to(a[None], closest.shape), closest)

    return ((p - closest) ** 2).sum(-1)


def point_to_mesh(P: PointCloud, M: TriangleMesh) -> float:
    """P2F + F2P with squared point-to-triangle distances.

    P2F averages over points the distance to the nearest face; F2P averages
    over faces the distance to the nearest point (face treated as a region).
    """
    if M.faces.shape[0] == 0:
        raise InvalidInputError("mesh must contain at least one face")
    tri = M.vertices[M.faces]                       # (nF, 3, 3)
    d2 = _closest_point_on_triangles(P.points, tri)  # (nP, nF)
    p2f = d2.min(axis=1).mean()
    f2p = d2.min(axis=0).mean()
    return float(p2f + f2p)


def format_metric_report(metrics: dict[str, float]) -> str:
    """Line-oriented report: name<TAB>value, plus the x1e5 presentation value."""
    lines = []
    for name, value in metrics.items():
        lines.append(f"{name}\t{value:.12g}")
        lines.append(f"{name}_x1e5\t{value * METRIC_REPORT_SCALE:.12g}")
    return "\n".join(lines) + "\n"
