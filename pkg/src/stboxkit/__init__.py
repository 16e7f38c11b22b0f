"""Stochastic-box priors for point-annotated object detection.

Turns class-specific bounding-box size statistics into box priors, picks
boxes for point annotations, simulates point-annotation noise and estimates
how many box annotations a dataset needs.
"""

from stboxkit.core import (
    Annotation,
    AnnotationFormatError,
    CenterBox,
    ImageRecord,
    PointAnnotation,
    concentric_iou,
    iou,
    load_dataset,
    save_dataset,
)
from stboxkit.density import (
    ClassPrior,
    InsufficientSamplesError,
    advise_budget,
    fit_prior,
    grid_mean,
    kl_curve,
    kl_divergence,
)
from stboxkit.stbox import (
    SolverConfig,
    StBox,
    brute_force_mean_iou,
    expected_iou,
    mean_box,
    mean_iou_box,
)
from stboxkit.selection import (
    AnchorLabel,
    LossBatch,
    Prediction,
    SelectionConfig,
    assign_anchors,
    beta,
    regression_loss,
    score,
    select_box,
)
from stboxkit.simulate import (
    DegeneratePartitionError,
    NoiseModel,
    box_quality,
    default_noise_model,
    generate_point,
    partition_dataset,
    weaken,
)

__version__ = "0.1.0"
