"""Exception hierarchy shared across the toolkit.

Everything user-facing derives from XmodalError so the CLI can map
validation failures to exit code 1 and keep genuine bugs at exit code 2.
"""


class XmodalError(Exception):
    """Base class for all expected, user-correctable failures."""


class EmbeddingFormatError(XmodalError):
    """Word-embedding file violates the word2vec text format."""


class AlignmentError(XmodalError):
    """Alignment construction or composition is invalid."""


class TokenizeError(XmodalError):
    """Sentence cannot be tokenized/encoded (e.g. all tokens out of vocabulary)."""


class FeatureMapError(XmodalError):
    """Feature-map payload is malformed or inconsistent."""


class PoolingError(XmodalError):
    """Pooling parameters are out of range for the given spatial grid."""


class BatchError(XmodalError):
    """A training batch violates the mining preconditions."""


class ManifestError(XmodalError):
    """Dataset manifest fails validation."""


class TrainingError(XmodalError):
    """Training aborted (bad config, divergence, degenerate corpus)."""


class RetrievalError(XmodalError):
    """Index construction or search request is invalid."""


class ServiceError(XmodalError):
    """Service configuration or request handling failure."""
