"""graphhash: binary document hashing with graph-correlated Gaussian priors.

Pipeline: ingest a sparse bag-of-words corpus, TFIDF-weight it, build a
KNN affinity graph over the training split, sample spanning trees of the
graph, train a correlated variational model whose prior couples
neighboring documents, then binarize posterior means into compact codes
and evaluate Hamming-distance retrieval.
"""

from . import corpus, datasets, forest, gauss, graph, hashcodes, model, trainer
from .errors import ConfigError, DataError, DivergenceError, GraphHashError, ParseError

__version__ = "0.1.0"

__all__ = [
    "corpus",
    "datasets",
    "forest",
    "gauss",
    "graph",
    "hashcodes",
    "model",
    "trainer",
    "ConfigError",
    "DataError",
    "DivergenceError",
    "GraphHashError",
    "ParseError",
    "__version__",
]
