"""patchpose: category-agnostic point-cloud pose estimation from
rotation-invariant patch features.

Core pieces: patch annotation (longest pairwise vectors, direction
clustering, ball neighborhoods), the 60-mode icosahedral rotation
discretization with bounded residual quaternions, chamfer-based pose
search/refinement, desk-scale trainable heads, and symmetry-aware
evaluation. See the CLI (`patchpose --help`) for reproducible experiments.
"""

from .errors import (
    DegenerateCloud,
    DegenerateProjection,
    EmptyCloud,
    EmptyMesh,
    EmptyPatch,
    EmptySet,
    IndexOutOfRange,
    LengthMismatch,
    MissingGroundTruth,
    NonUnitQuaternion,
    ParseError,
    PatchPoseError,
    SchemaError,
    TooFewPoints,
    UnsupportedFormat,
)
from .geometry import (
    NormalizationRecord,
    PerturbationConfig,
    TriangleMesh,
    apply_rotation,
    centroid,
    chamfer_distance,
    farthest_point_sample,
    normalize_cloud,
    perturb,
    sample_surface_points,
)
from .icosa import (
    IcosaGroup,
    RotationDecomposition,
    build_icosahedral_group,
    compose_mode_and_delta,
    constrain_delta,
    nearest_group_element,
)
from .patches import (
    PatchAnnotation,
    PatchParams,
    annotate_patch,
    ball_query,
    cluster_by_cosine,
    endpoints_of_clusters,
    pairwise_vectors,
    patch_stability_trial,
    top_m_by_length,
)
from .pose import (
    LossBreakdown,
    LossWeights,
    Pose,
    PoseEstimate,
    RefineConfig,
    estimate_pose_search,
    pose_loss,
    refine_delta,
    score_modes,
)
from .quaternions import geodesic_degrees, random_rotation
from .symmetry import EvalReport, SymmetrySpec, evaluate, expand_ground_truth, orient_by_projection
from .estimators import IcosahedralPoseEstimator, PatchAnnotator, PatchNetClassifier

__version__ = "0.1.0"
