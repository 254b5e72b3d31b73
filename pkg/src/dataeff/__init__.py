"""Data-efficient image classification from scratch.

LSB-swap augmentation, a focal cosine loss with closed-form gradients, a
small dense classifier with EMA weights, and thresholded plurality voting.
"""

__version__ = "0.1.0"

from .ensemble import (
    EnsembleConfig,
    FusedLabel,
    Vote,
    VoteSet,
    mode_with_tiebreak,
    plurality_vote,
    soft_vote,
    tta_predict,
)
from .image import (
    AugmentationOp,
    AugmentPolicy,
    ImageU8,
    apply_augment,
    decode_image,
    encode_image,
    lsb_swap,
    lsb_swap_corpus,
)
from .losses import (
    LossHyperparams,
    cosine_loss,
    focal_cosine_grad,
    focal_cosine_loss,
    focal_loss,
    normalize_l2,
    softmax,
)
from .trainer import (
    EmaState,
    ModelParams,
    PredictionRecord,
    TrainConfig,
    ema_update,
    forward,
    predict,
    train,
    train_step,
)
