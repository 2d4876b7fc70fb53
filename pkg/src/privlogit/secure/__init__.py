"""Secure fixed-point arithmetic over Paillier ciphertexts."""
from .backend import DomainError, OpKind, ProtocolError, SecureBackend, SecureEvalError
from .counters import OpCounters
from .reference import ReferenceBackend, reference_backend
from .twoserver import KeyHolder, TwoServerBackend

__all__ = [
    "DomainError", "KeyHolder", "OpCounters", "OpKind", "ProtocolError", "ReferenceBackend",
    "SecureBackend", "SecureEvalError", "TwoServerBackend", "reference_backend",
]
