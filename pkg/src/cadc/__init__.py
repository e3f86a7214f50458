"""Collaborative-aware compression of recommendation training data.

Pretrain user/item embeddings with matrix factorization on the full
interaction log, train a two-tower model on a uniformly sampled fraction of
the log with those embeddings frozen, and evaluate HR@10 / NDCG@10.
"""
from .dataset import (Interaction, InteractionDataset, Interactions, NegativeSet, SplitDataset,
                      item_frequency, oversample_tail, parse_interactions, parse_side_features,
                      sample_negatives, sample_uniform, split_leave_last_two, undersample_head)
from .evaluation import MetricsReport, evaluate, hr_at_k, ndcg_at_k, rank_of_target
from .mf import (MfConfig, MfMlpModel, MfModel, export_embeddings, mf_loss, mf_predict, train_mf,
                 train_mf_mlp)
from .ttnn import (IntegrationStrategy, TtnnConfig, TtnnModel, build_ttnn, logq_correct,
                   train_ttnn, ttnn_score)

__version__ = "0.1.0"
