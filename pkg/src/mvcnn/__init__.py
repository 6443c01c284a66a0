"""Multichannel variable-size convolutional sentence classifier in numpy."""

from .autodiff import Parameter, adagrad_step, finite_difference_check
from .embeddings import EmbeddingVersion, MultichannelTable, coverage_stats, init_multichannel, load_embeddings
from .mutual import complete_all, impute, train_all_projections, train_projection
from .network import MVCNN, NetworkConfig, build_model, dynamic_k, kmax_pool, wide_conv
from .pretrain import PretrainConfig, run_pretraining
from .text import Dataset, Vocabulary, build_batches, load_tsv, normalize_tweet, tokenize
from .training import TrainConfig, evaluate, train_supervised

__version__ = "0.1.0"
