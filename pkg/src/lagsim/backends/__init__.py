"""Concrete model backends for the decoding harness."""

from .nets import RandomAttentionBackend, RandomRecurrentBackend, make_backend, quantize
from .remote import RemoteChatBackend, RemoteConfig
from .ruletable import RuleTableBackend

__all__ = [
    "RandomAttentionBackend",
    "RandomRecurrentBackend",
    "RemoteChatBackend",
    "RemoteConfig",
    "RuleTableBackend",
    "make_backend",
    "quantize",
]
