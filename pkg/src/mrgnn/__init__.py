"""Multi-resolution graph neural network for entity-pair interaction prediction."""

__version__ = "0.1.0"

from .graph import AtomNode, BondKind, FeaturizerConfig, MolecularGraph, featurize, validate
from .model import ModelConfig, MrGnnModel, forward_pair, load_checkpoint, save_checkpoint
from .smiles import SmilesError, parse

__all__ = [
    "__version__",
    "AtomNode",
    "BondKind",
    "FeaturizerConfig",
    "MolecularGraph",
    "featurize",
    "validate",
    "ModelConfig",
    "MrGnnModel",
    "forward_pair",
    "load_checkpoint",
    "save_checkpoint",
    "SmilesError",
    "parse",
]
