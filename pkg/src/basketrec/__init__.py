"""Within-basket recommendations from (user, item, item) embeddings."""

from .corpus import Basket, FrequencyTable, TransactionLog, Vocabulary, load_baskets, split_holdout
from .index import CatalogIndex, IndexParams, build_catalog, load_index, save_index
from .model import TrainConfig, TripleModel, load_model, save_model, train
from .recommend import BasketContext, PostProcessConfig, RecommendConfig, RecommendationSet, recommend

__version__ = "0.1.0"

__all__ = [
    "Basket",
    "BasketContext",
    "CatalogIndex",
    "FrequencyTable",
    "IndexParams",
    "PostProcessConfig",
    "RecommendConfig",
    "RecommendationSet",
    "TrainConfig",
    "TransactionLog",
    "TripleModel",
    "Vocabulary",
    "build_catalog",
    "load_baskets",
    "load_index",
    "load_model",
    "recommend",
    "save_index",
    "save_model",
    "split_holdout",
    "train",
]
