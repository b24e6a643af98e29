"""Meta-learning with a learned example hallucinator for low-shot classification."""

from .episodes import EpisodeConfig, meta_train, meta_test_classify
from .hallucination import AugmentationPolicy, augment
from .labeled import LabeledSet, SplitSpec
from .metalearners import LearnerConfig

__version__ = "0.1.0"

__all__ = [
    "AugmentationPolicy",
    "EpisodeConfig",
    "LabeledSet",
    "LearnerConfig",
    "SplitSpec",
    "augment",
    "meta_test_classify",
    "meta_train",
]
