"""Fairly adaptive negative sampling for pairwise (BPR) recommenders."""

from .backbone import Adam, EmbeddingModel, init_xavier, lightgcn_forward
from .dataset import DataSplit, GroupMap, InteractionTable, SyntheticSpec, reindex, split, synthesize
from .fairctl import GroupDistribution, MomentumBank, gbce_losses, group_gradients, momentum_update, project_simplex
from .metrics import MetricReport, evaluate, topk_recommend
from .samplers import NegativeSampler, SamplerConfig, fairstatic_distribution
from .trainer import TrainConfig, TrainResult, ablation_variants, bilevel_train

__version__ = "0.1.0"
