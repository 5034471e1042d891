"""Differentiable multi-view point rendering and the rendering loss.

Points are projected orthographically onto axis-aligned planes, splatted as
truncated Gaussian densities into a voxel grid, converted to occupancies via
1 - exp(-density), and marched along depth as ray termination probabilities.
Every stage is differentiable w.r.t. the input point coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidInputError
from .geometry import PointCloud

Array = np.ndarray

PLANES = ("XY", "YZ", "XZ")

# World-to-camera rotations viewing along +z, +x, +y respectively.
_BASE_ROTATIONS = {
    "XY": np.eye(3),
    "YZ": np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]),
    "XZ": np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
}


@dataclass
class Camera:
    """Rigid pose plus an orthographic plane projection."""

    rotation: Array
    translation: Array
    image_size: tuple[int, int] = (64, 64)
    projection: str = "orthographic_plane"

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (3, 3):
            raise InvalidInputError("rotation must be 3x3")
        if np.abs(self.rotation @ self.rotation.T - np.eye(3)).max() > 1e-9:
            raise InvalidInputError("rotation must be orthonormal")
        if min(self.image_size) < 4:
            raise InvalidInputError("image size must be at least 4x4")


@dataclass
class RenderedView:
    """A rendered H x W image in [0, 1] with the camera that produced it."""

    image: Array
    camera: Camera


@dataclass
class RenderConfig:
    views: int = 32
    depth_bins: int = 32
    splat_sigma: float = 1.0
    image_size: tuple[int, int] = (64, 64)
    planes: tuple[str, ...] = PLANES
    truncation_sigmas: float = 3.0
    density_scale: float = 1.0

    def __post_init__(self):
        if self.views < 1:
            raise InvalidInputError("views must be >= 1")
        if self.splat_sigma <= 0:
            raise InvalidInputError("splat_sigma must be positive")
        if self.depth_bins < 2:
            raise InvalidInputError("depth_bins must be >= 2")
        for p in self.planes:
            if p not in PLANES:
                raise InvalidInputError(f"unknown plane {p!r}")


def _rot_about_z(theta: float) -> Array:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def camera_set(config: RenderConfig) -> list[Camera]:
    """Deterministic K-pose layout: K/3 in-plane rotations per plane,
    remainder assigned round-robin, angles evenly spaced in [0, pi)."""
    counts = {p: config.views // len(config.planes) for p in config.planes}
    for i in range(config.views % len(config.planes)):
        counts[config.planes[i]] += 1
    cams = []
    for plane in config.planes:
        m = counts[plane]
        for j in range(m):
            theta = np.pi * j / m
            rot = _rot_about_z(theta) @ _BASE_ROTATIONS[plane]
            cams.append(Camera(rotation=rot, translation=np.zeros(3),
                               image_size=config.image_size))
    return cams


def project_points(points, camera: Camera) -> Tensor:
    """Rigid transform then orthographic map of [-1, 1]^3 onto [0, 1]^3."""
    pts = ad.as_tensor(points)
    cam = pts @ Tensor(camera.rotation.T) + Tensor(camera.translation)
    return (cam + 1.0) * 0.5


def splat_occupancy(projected, config: RenderConfig) -> Tensor:
    """Deposit truncated Gaussian densities into an (H, W, depth) grid.

    ``projected`` holds (u, v, depth) triples in [0, 1] (points outside are
    clipped away by the truncation window). Differentiable w.r.t. the
    projected coordinates.
    """
    proj = ad.as_tensor(projected)
    H, W = config.image_size
    D = config.depth_bins
    sigma = config.splat_sigma
    reach = int(np.ceil(config.truncation_sigmas * sigma))
    pv = proj.value
    n = pv.shape[0]
    dims = np.array([W, H, D], dtype=np.float64)
    # voxel-center coordinates: voxel i covers [(i)/dim, (i+1)/dim)
    coords = pv * dims - 0.5  # (n, 3) in voxel units (x, y, depth)

    grid = np.zeros((H, W, D), dtype=np.float64)
    if n == 0:
        return Tensor(grid)

    win = 2 * reach + 1
    offsets = np.arange(-reach, reach + 1, dtype=np.float64)
    base = np.floor(coords).astype(np.int64)  # (n, 3)
    # per-axis voxel indices and residuals, shape (n, win)
    idx = base[:, :, None] + offsets[None, None, :].astype(np.int64)
    delta = idx.astype(np.float64) - coords[:, :, None]
    w1d = np.exp(-delta ** 2 / (2.0 * sigma ** 2))
    r2 = (delta / sigma) ** 2
    valid = (idx >= 0) & (idx < np.array([W, H, D])[None, :, None])
    w1d = w1d * valid

    wx, wy, wd = w1d[:, 0], w1d[:, 1], w1d[:, 2]
    trunc2 = config.truncation_sigmas ** 2
    # 3-D window weights with spherical truncation at truncation_sigmas
    w3 = wy[:, :, None, None] * wx[:, None, :, None] * wd[:, None, None, :]
    rad2 = (r2[:, 1][:, :, None, None] + r2[:, 0][:, None, :, None]
            + r2[:, 2][:, None, None, :])
    inside = rad2 <= trunc2
    w3 = w3 * inside

    ix = np.clip(idx[:, 0], 0, W - 1)
    iy = np.clip(idx[:, 1], 0, H - 1)
    idp = np.clip(idx[:, 2], 0, D - 1)
    flat_idx = (iy[:, :, None, None] * (W * D)
                + ix[:, None, :, None] * D
                + idp[:, None, None, :])
    np.add.at(grid.reshape(-1), flat_idx.reshape(-1), w3.reshape(-1))

    def vjp(g):
        gwin = g.reshape(-1)[flat_idx.reshape(-1)].reshape(w3.shape)
        gwin = gwin * inside
        # d w3 / d coord_axis = w3 * (delta_axis / sigma^2)
        dcoords = np.empty_like(coords)
        fac = delta / sigma ** 2
        prod = gwin * (wy[:, :, None, None] * wx[:, None, :, None]
                       * wd[:, None, None, :])
        dcoords[:, 0] = (prod * fac[:, 0][:, None, :, None]).sum(axis=(1, 2, 3))
        dcoords[:, 1] = (prod * fac[:, 1][:, :, None, None]).sum(axis=(1, 2, 3))
        dcoords[:, 2] = (prod * fac[:, 2][:, None, None, :]).sum(axis=(1, 2, 3))
        return dcoords * dims[None, :]

    return Tensor(grid, parents=((proj, vjp),))


def occupancy_from_density(density, config: RenderConfig) -> Tensor:
    """Smooth clamp of raw densities into [0, 1): o = 1 - exp(-scale * d)."""
    d = ad.as_tensor(density)
    return 1.0 - ad.exp(ad.neg(d * config.density_scale))


def ray_terminate(occupancy) -> Tensor:
    """March along the last (depth) axis accumulating termination probability.

    termination at bin d is o_d * prod_{d' < d} (1 - o_{d'}); the pixel value
    is the total probability the ray stops anywhere, in [0, 1].
    """
    occ = ad.as_tensor(occupancy)
    o = occ.value
    trans = 1.0 - o
    # prefix[d] = prod_{d' < d} (1 - o_{d'}); suffix likewise after d
    prefix = np.concatenate(
        [np.ones_like(o[..., :1]), np.cumprod(trans, axis=-1)[..., :-1]], axis=-1)
    suffix = np.concatenate(
        [np.cumprod(trans[..., ::-1], axis=-1)[..., -2::-1],
         np.ones_like(o[..., :1])], axis=-1)
    image = (o * prefix).sum(axis=-1)

    def vjp(g):
        return g[..., None] * prefix * suffix

    return Tensor(image, parents=((occ, vjp),))


def render_view_t(points, camera: Camera, config: RenderConfig) -> Tensor:
    proj = project_points(points, camera)
    density = splat_occupancy(proj, config)
    occ = occupancy_from_density(density, config)
    return ray_terminate(occ)


def render_views_t(points, config: RenderConfig) -> list[Tensor]:
    cams = camera_set(config)
    return [render_view_t(points, cam, config) for cam in cams]


def render_views(cloud: PointCloud, config: RenderConfig) -> list[RenderedView]:
    """Render K deterministic views of a normalized cloud."""
    cams = camera_set(config)
    return [RenderedView(image=render_view_t(cloud.points, cam, config).value,
                         camera=cam)
            for cam in cams]


def render_loss_t(pred_points, target_points, config: RenderConfig) -> Tensor:
    """Mean over views of the mean absolute per-pixel difference."""
    cams = camera_set(config)
    total = None
    for cam in cams:
        vi_pred = render_view_t(pred_points, cam, config)
        vi_tgt = render_view_t(target_points, cam, config)
        term = ad.absolute(vi_pred - vi_tgt).mean()
        total = term if total is None else total + term
    return total * (1.0 / len(cams))


def render_loss(pred: PointCloud, target: PointCloud, config: RenderConfig,
                pred_transform=None, target_transform=None) -> float:
    """Scalar rendering loss between two clouds normalized the same way."""
    if pred_transform is not None and target_transform is not None:
        same = (np.allclose(pred_transform.center, target_transform.center)
                and np.isclose(pred_transform.scale, target_transform.scale))
        if not same:
            raise InvalidInputError(
                "pred and target must share the same normalization transform")
    return render_loss_t(pred.points, target.points, config).item()


def save_pgm(path, image: Array) -> None:
    """Write a grayscale [0,1] image as an ASCII portable graymap."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    h, w = img.shape
    levels = 255
    data = np.rint(img * levels).astype(int)
    with open(path, "w") as fh:
        fh.write(f"P2\n{w} {h}\n{levels}\n")
        for row in data:
            fh.write(" ".join(str(v) for v in row) + "\n")
