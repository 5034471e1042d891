"""Iterative Mamba-based point cloud filtering with differentiable rendering."""

from .geometry import (NoiseSpec, PointCloud, TriangleMesh, add_gaussian_noise,
                       bbox_diagonal, bounding_sphere_radius, denormalize,
                       normalize_to_unit)
from .patches import (DirectedGraph, Patch, StitchWeights, build_knn_graph,
                      extract_patches, stitch_patches, stitch_weights)
from .ssm import (DiscreteSsm, MambaBlockParams, SsmParams, discretize,
                  mamba_block, scan_convolutional, scan_recurrent,
                  selective_scan)
from .network import (DenoiseModuleParams, EdgeConvParams, IterationSchedule,
                      adaptive_gt, denoise_module, edgeconv_layer,
                      iterative_filter)
from .render import (Camera, RenderConfig, RenderedView, project_points,
                     ray_terminate, render_loss, render_views, splat_occupancy)
from .losses import (LossBreakdown, chamfer_distance, point_to_mesh, recon_loss,
                     total_loss)
from .autodiff import Tensor, backward
from .optim import Adam, finite_diff_check

__version__ = "0.1.0"
