"""Distributed secure fitting protocols and their transports."""
from .session import (AbortCode, NodeStats, Protocol, ProtocolAbort, ProtocolTrace, SessionConfig,
                      aggregate_neg_hessian, run_privlogit_hessian, run_privlogit_local, run_secure_newton,
                      run_session, secure_convergence_check, setup_once)
from .transport import InProcHub, TransportError, TransportTimeout
from .wire import Envelope, MsgType, PartyId, Role, WireError

__all__ = [
    "AbortCode", "Envelope", "InProcHub", "MsgType", "NodeStats", "PartyId", "Protocol", "ProtocolAbort",
    "ProtocolTrace", "Role", "SessionConfig", "TransportError", "TransportTimeout", "WireError",
    "aggregate_neg_hessian", "run_privlogit_hessian", "run_privlogit_local", "run_secure_newton",
    "run_session", "secure_convergence_check", "setup_once",
]
