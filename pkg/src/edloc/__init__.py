"""Task-aware edit localization over dual-stream diffusion-transformer internals."""

from .core import (
    AttentionBundle,
    AttentionMap,
    CentroidPair,
    EditMask,
    FeatureBundle,
    InstructionSpec,
    LatentRecord,
    NoiseSchedule,
    TokenLayout,
    ValidationError,
)
from .attention import (
    aggregate,
    attention_mask_without_propagation,
    propagate,
    propagated_map,
    propagated_mask,
    raw_map,
    threshold,
)
from .blending import PreservationPlan, apply_plan, blend, default_apply_at, inverted_latent
from .features import assign, compute_centroids, l2_normalize, refine
from .oracles import (
    brute_components,
    brute_dilate,
    brute_fill_holes,
    brute_largest_component,
    brute_matmul,
    iou,
)
from .pipeline import LocalizeConfig, localize_all, localize_stream, localize_timestep
from .records import (
    MissingRecordError,
    RecordFormatError,
    RecordSet,
    canonical_name,
    read_bundle,
    read_manifest,
    read_store,
    validate_store,
    write_bundle,
    write_manifest,
    write_store,
)
from .synth import SceneParams, SyntheticScene, generate_scene, noiseless_params, suite_params
from .taskmask import (
    MorphologyConfig,
    TASK_POLICY,
    combine,
    dilate,
    fill_holes,
    largest_component,
    postprocess,
)

__version__ = "0.1.0"
