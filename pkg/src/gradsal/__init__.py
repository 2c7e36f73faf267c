"""Class-specific object saliency by gradient descent on the input image.

Small convolutional classifiers are trained on a synthetic pixel-labeled
corpus (plain, masked, and dual-output variants); saliency maps come
from iteratively darkening the pixels that carry class evidence, and are
refined into binary segmentations and scored with PR curves and F-beta.
"""

from .dataset import (
    DatasetManifest,
    GenerationConfig,
    LabeledSample,
    generate,
    make_masked,
)
from .metrics import (
    EvalReport,
    PRCurve,
    f_beta,
    max_f_beta,
    pr_curve,
    segmentation_f_beta,
)
from .models import Network, TrainConfig, build_network, load, save, train
from .saliency import (
    GDResult,
    Objective,
    SaliencyConfig,
    SaliencyMap,
    combine,
    compute_input_gradient,
    cost,
    postprocess,
    run_gd,
    smooth,
)
from .segment import SegmentationConfig, jaccard, propose, refine, select
from .tensor import Tensor

__version__ = "0.1.0"
