"""Occlusion-aware cuboid scene abstraction from depth maps.

Fits sets of cuboids to 2.5D point clouds with sequential weighted RANSAC,
an iterative minimal solver with implicit-function-theorem input gradients,
and occlusion-aware inlier counting and evaluation.
"""

from .geometry import (
    CameraModel,
    Cuboid,
    Face,
    face_distance,
    occludes,
    occlusion_distance,
    oa_distance,
    point_cuboid_distance,
    to_cuboid_frame,
    from_cuboid_frame,
)
from .inliers import InlierParams, f_io, f_oai, inlier_count, soft_inlier
from .metrics import EvalReport, evaluate, recall_curve
from .pipeline import (
    CuboidSet,
    FitConfig,
    Hypothesis,
    generate_hypotheses,
    select_best,
    selection_probabilities,
    sequential_fit,
)
from .sampling import (
    RngStream,
    SamplingWeights,
    sample_minimal_set,
    select_weight_set,
    uniform_weights,
)
from .scene import Scene, backproject, render_synthetic
from .solver import (
    MinimalSet,
    SolverConfig,
    fit_cuboid,
    ift_gradient,
    init_cuboid,
    residuals,
)
from .superquadric import (
    SqEvalConfig,
    Superquadric,
    sq_inside_outside,
    sq_normal,
    sq_oa_distance,
    sq_occludes,
    sq_surface_point,
    sq_visible_points,
)

__version__ = "0.1.0"
