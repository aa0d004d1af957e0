"""Deeply supervised encoder/decoder CNN for binary segmentation, built on numpy."""

__version__ = "0.1.0"

from .architectures import NetworkGraph, build_dscnn, build_model, build_unet, forward
from .data import AugmentSpec, Dataset, SamplePair, augment, load_dataset, make_synthetic
from .errors import (ContractError, DimensionError, FormatError, LoadError, NumericError,
                     SpecError)
from .metrics import EvalSummary, binarize, compare_report, evaluate
from .objectives import (LossReport, SupervisionWeights, dice_binary, soft_dice_loss,
                         supervised_loss, total_objective)
from .optim import Schedule, SgdState, lr_at, sgd_step
from .tensor import Tensor, backward, no_grad, tensor_new
