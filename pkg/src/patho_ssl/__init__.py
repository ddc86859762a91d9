"""Self-supervised tile-similarity embeddings for tiled slide images.

The pipeline: generate or load labeled slides, sample similar/dissimilar
tile pairs by spatial proximity, train a siamese conv net with a
contrastive loss, then evaluate the 128-d descriptors with distance-ratio
and cross-slide retrieval metrics.
"""

__version__ = "0.1.0"

from .kernels import BACKEND

__all__ = ["BACKEND", "__version__"]
