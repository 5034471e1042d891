"""Training driver: noisy synthesis, the T-iteration loss of the training
pseudocode (adaptive GT, M modules per iteration, stitch, recon + render
loss per iteration, one backward per example), and Adam updates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .errors import NumericError
from .geometry import NoiseSpec, PointCloud, add_gaussian_noise, normalize_to_unit
from .losses import recon_loss_t, total_loss
from .network import (DenoiseModuleParams, IterationSchedule, adaptive_gt,
                      denoise_points, init_denoise_module)
from .optim import Adam, clip_global_norm
from .patches import Patch, extract_patches, stitch_weights
from .render import RenderConfig, render_loss_t

Array = np.ndarray


def build_model(config: RunConfig, seed: int | None = None) -> list[DenoiseModuleParams]:
    rng = np.random.Generator(np.random.Philox(config.seed if seed is None else seed))
    return [init_denoise_module(rng,
                                embed_dim=config.embed_dim,
                                mamba_layers=config.mamba_layers,
                                state_dim=config.state_dim,
                                expand=config.expand,
                                conv_width=config.conv_width,
                                max_step=config.max_step)
            for _ in range(config.modules)]


def named_parameters(modules: list[DenoiseModuleParams]) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for m, mod in enumerate(modules):
        for name, tensor in mod.named_tensors(f"modules.{m}."):
            out[name] = tensor
    return out


def render_config_from(config: RunConfig) -> RenderConfig:
    return RenderConfig(views=config.views,
                        depth_bins=config.depth_bins,
                        splat_sigma=config.splat_sigma,
                        image_size=(config.image_size, config.image_size))


@dataclass
class PreparedExample:
    """A normalized noisy cloud with its fixed patch decomposition."""

    clean_norm: PointCloud
    noisy_norm: PointCloud
    patches: list[Patch]
    blend_weights: list[Array]      # normalized per-copy stitch weights
    recon_weights: Array            # per-original-point weights, sum 1


def prepare_example(clean: PointCloud, config: RunConfig, noise_seed: int) -> PreparedExample:
    spec = NoiseSpec(sigma_fraction=config.noise_fraction,
                     reference=config.noise_reference, seed=noise_seed)
    noisy = add_gaussian_noise(clean, spec)
    if config.normalize:
        noisy_norm, transform = normalize_to_unit(noisy)
        clean_norm = PointCloud(transform.apply(clean.points))
    else:
        noisy_norm, clean_norm = noisy, clean
    patches = extract_patches(noisy_norm, min(config.patch_size, len(noisy_norm)))
    n = len(noisy_norm)
    raw_weights = [stitch_weights(p).weights for p in patches]
    totals = np.zeros(n)
    for patch, w in zip(patches, raw_weights):
        totals[patch.original_indices] += w
    blend = [w / totals[p.original_indices] for p, w in zip(patches, raw_weights)]
    recon_w = totals / totals.sum()
    return PreparedExample(clean_norm=clean_norm, noisy_norm=noisy_norm,
                           patches=patches, blend_weights=blend,
                           recon_weights=recon_w)


def stitch_patches_t(example: PreparedExample, outputs: list[Tensor]) -> Tensor:
    """Differentiable stitch: scatter-add of blend-weighted patch copies.

    The blend weights are the per-patch Gaussian stitch weights, renormalized
    per original index, and are computed once from the noisy geometry so they
    stay constant across iterations.
    """
    n = len(example.noisy_norm)
    rows = ad.concat([out * Tensor(w[:, None]) for out, w
                      in zip(outputs, example.blend_weights)], axis=0)
    index = np.concatenate([p.original_indices for p in example.patches])
    return ad.scatter_rows_add(rows, index, n)


def example_loss(example: PreparedExample, modules: list[DenoiseModuleParams],
                 config: RunConfig, render_cfg: RenderConfig,
                 gt_seed: int) -> tuple[Tensor, list[float], list[float]]:
    """The full multi-iteration loss for one example.

    Returns (total loss Tensor, per-iteration recon values, render values).
    """
    schedule = IterationSchedule(T=config.iterations, sigma_start=config.sigma_start)
    current = [Tensor(p.points.points.copy()) for p in example.patches]
    recon_terms, render_terms = [], []
    for t in range(1, config.iterations + 1):
        gt_t = adaptive_gt(example.clean_norm, t, schedule, seed=gt_seed + t)
        for params in modules:
            current = [denoise_points(c, p.reference_point, params, config.k_graph)
                       for c, p in zip(current, example.patches)]
        stitched = stitch_patches_t(example, current)
        rec = recon_loss_t(stitched, gt_t.points, example.recon_weights)
        if config.alpha > 0:
            ren = render_loss_t(stitched, Tensor(gt_t.points), render_cfg)
        else:
            ren = Tensor(0.0)
        recon_terms.append(rec)
        render_terms.append(ren)
    loss = total_loss(recon_terms, render_terms, config.alpha)
    return loss, [r.item() for r in recon_terms], [v.item() for v in render_terms]


def train(clean_clouds: list[PointCloud], config: RunConfig,
          log_rows: list | None = None,
          progress=None) -> dict[str, Tensor]:
    """Run the optimization loop and return the trained parameter dict.

    ``log_rows`` (if given) collects ``(step, iter_t, recon, render, total)``
    tuples, one row per iteration term per step.
    """
    modules = build_model(config)
    params = named_parameters(modules)
    opt = Adam(lr=config.lr)
    render_cfg = render_config_from(config)

    examples = [prepare_example(cloud, config, noise_seed=config.seed * 7919 + i)
                for i, cloud in enumerate(clean_clouds)]

    for step in range(1, config.steps + 1):
        example = examples[(step - 1) % len(examples)]
        loss, recs, rens = example_loss(example, modules, config, render_cfg,
                                        gt_seed=config.seed * 104729 + step * 31)
        if not np.isfinite(loss.value):
            raise NumericError(
                f"non-finite loss at step {step}: recon={recs} render={rens}")
        loss.backward()
        grads = ad.collect_gradients(params)
        if config.grad_clip > 0:
            grads = clip_global_norm(grads, config.grad_clip)
        opt.step(params, grads)
        if log_rows is not None:
            for t, (r, v) in enumerate(zip(recs, rens), start=1):
                log_rows.append((step, t, r, v, r + config.alpha * v))
        if progress is not None:
            progress(step, loss.item())
    return params


def write_loss_log(path: str, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "iter_t", "recon", "render", "total"])
        for row in rows:
            writer.writerow([row[0], row[1], f"{row[2]:.17g}",
                             f"{row[3]:.17g}", f"{row[4]:.17g}"])
