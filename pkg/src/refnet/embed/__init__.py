from .attri2vec import Attri2VecConfig, attri2vec_map, train_attri2vec
from .base import FEATURE_SETS, MODELS, EmbeddingMatrix, node_features, pca_2d, pca_csv, social_lookup
from .graphsage import SageConfig, train_graphsage
from .skipgram import train_skipgram
from .walks import WalkConfig, biased_walks


def train_node2vec(net, cfg: WalkConfig = WalkConfig(), seed: int = 0, dim: int = 128, **kw):
    """Walks plus skip-gram; returns ``(vectors, loss_history)``."""
    walks = biased_walks(net, cfg, seed=seed)
    return train_skipgram(walks, net.node_count, dim=dim, window=cfg.window,
                          negatives=cfg.negatives_per_positive, seed=seed, **kw)


__all__ = [
    "Attri2VecConfig", "EmbeddingMatrix", "FEATURE_SETS", "MODELS", "SageConfig", "WalkConfig",
    "attri2vec_map", "biased_walks", "node_features", "pca_2d", "pca_csv", "social_lookup",
    "train_attri2vec", "train_graphsage", "train_node2vec", "train_skipgram",
]
