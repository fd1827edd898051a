"""Ranked List Loss and baseline metric-learning losses with a desk-scale trainer."""

from .baselines import ProxySet, lifted_struct_loss, npair_mc_loss, proxy_nca_loss, triplet_loss
from .core import l2_normalize, pairwise_distances
from .data import Dataset, SynthSpec, export_embeddings, generate_synthetic, load_dataset, save_dataset
from .estimator import RankedListEmbedding
from .evaluation import RecallReport, evaluate_model, rank_gallery, recall_at_k
from .gradients import baseline_gradients, finite_difference_check, rll_batch_gradients
from .pipeline import EmbeddingModel, TrainConfig, sample_batch, sgd_update, train
from .rll import (
    RllParams,
    TemperatureSchedule,
    rll_batch_loss,
    rll_query_loss,
    schedule_temperature,
    simpler_params,
)

__version__ = "0.1.0"
