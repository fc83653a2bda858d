"""Speculative decoding over a reduced, self-updating draft vocabulary.

The draft model proposes tokens from a small active vocabulary (a static
frequency core plus an ARC-managed dynamic buffer). Verification is exact
rejection sampling, so output follows the target distribution whatever the
vocabulary. Out-of-vocabulary verifications trigger retrieval of related
tokens, and a low-rank adapter is distilled online from verified positions.
"""
from .alignment import AlignmentController, CurriculumConfig, DistillConfig, curriculum_weight, distill_loss
from .cache import ArcCache
from .config import ResolvedConfig, default_config, load_config
from .engine import VARIANTS, EngineConfig, LatencyModel, Paths, SpeculativeEngine, verify
from .errors import BuildError, ConfigError, InputError, InvariantViolation, SpecVocError
from .models import DraftModel, Featurizer, LowRankAdapter, TargetModel
from .vocab import ActiveVocab, StaticVocab, build_static, coverage
from .world import DomainSpec, ModelSpec, World, build_world, gen_corpus

__version__ = "0.1.0"

__all__ = [
    "AlignmentController", "CurriculumConfig", "DistillConfig", "curriculum_weight", "distill_loss",
    "ArcCache", "ResolvedConfig", "default_config", "load_config",
    "VARIANTS", "EngineConfig", "LatencyModel", "Paths", "SpeculativeEngine", "verify",
    "BuildError", "ConfigError", "InputError", "InvariantViolation", "SpecVocError",
    "DraftModel", "Featurizer", "LowRankAdapter", "TargetModel",
    "ActiveVocab", "StaticVocab", "build_static", "coverage",
    "DomainSpec", "ModelSpec", "World", "build_world", "gen_corpus",
]
