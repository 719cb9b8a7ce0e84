"""Pairwise-preference ranking and expression generation toolkit."""

from .face import Emotion, TRAINABLE_EMOTIONS, latent_intensity, render
from .dataset import CandidatePool, PoolEntry, cosine_similarity, enumerate_pairs, preprocess, select_diverse
from .ranking import ComparisonAnswer, ComparisonQuery, Ranking, SortSession, insert_item, kendall_tau
from .model import PreferenceRanker, TrainConfig, bce_loss, build_labels, evaluate_accuracy, kfold_cv, mean_bce
from .bayesopt import BOTrace, GaussianProcess, expected_improvement, optimize, propose, random_search

__version__ = "0.1.0"
