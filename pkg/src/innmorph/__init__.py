"""Invertible neural networks for morphological inflection and lemmatization."""

from ._kernels import BACKEND
from .embedding import EmbeddingTable, compose_word_vector, load_embeddings, nearest_word
from .flow import IoLayout, InnModel, inn_forward, inn_inverse, inn_logdet
from .latent import LatentSpec
from .loss import LossWeights
from .morphdata import MorphRecord, ToyLangConfig, generate_toy_language, parse_dataset
from .training import TrainConfig, load_model, save_model, train_inflection, train_lemmatization

__version__ = "0.1.0"
