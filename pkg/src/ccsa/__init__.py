"""Classification plus contrastive semantic alignment (CCSA) for supervised
domain adaptation and domain generalization, on a small numpy autodiff core."""

from .autodiff import ShapeError, Tensor, backward, grad_check
from .data import Dataset, gen_gaussian_domains, gen_rotated_gaussian_domains, load_csv, load_idx
from .eval import MetricsRecord, accuracy, embedding_stats, evaluate
from .losses import LossVariant, LossWeights, ccsa_dg_loss, ccsa_sda_loss
from .nn import NetSpec, NetworkParams, init_params, load_params, save_params
from .pairing import PairSet, build_dg_pairs, build_sda_pairs
from .train import TrainConfig, TrainReport, train_dg, train_pooled_baseline, train_sda

__version__ = "0.1.0"
