"""Amplification of invalid-transaction gossip in Ethereum-style networks:
closed-form model, peer-count inference, txpool and gossip simulation,
observation-log detection and egress economics."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
