"""Multi-view retrieval with learned single-view query routing.

Late-interaction scoring compares every query view against every document
view; this package adds a trainable routing head that picks one query view
per query, which collapses retrieval to a single nearest-neighbor search
and makes the whole pipeline compatible with an inverted-file index.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, no_grad
from .encoder import Encoder, EncoderConfig, ViewMatrix, cls_view
from .router import RouterParams, RoutingOutput, route
from .scoring import (
    Score,
    score_max_max,
    score_mean_view,
    score_routed,
    score_single_view,
    score_sum_max,
)

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "Encoder",
    "EncoderConfig",
    "ViewMatrix",
    "cls_view",
    "RouterParams",
    "RoutingOutput",
    "route",
    "Score",
    "score_single_view",
    "score_sum_max",
    "score_max_max",
    "score_routed",
    "score_mean_view",
    "__version__",
]
