"""Decoupled-TCP endpoint state machine."""

from .actions import ArmTimer, ConnEvent, Deliver, Emit, Signal, TimerKind
from .config import EndpointConfig, EndpointError, Interface, InterfaceRole, SixTuple
from .connection import ConnParams, Connection, Transition
from .endpoint import Endpoint, Listener, Match, TransitionRecord
from .states import ConnState, StateEvent, TRANSITIONS, next_state

__all__ = [
    "ArmTimer", "ConnEvent", "ConnParams", "ConnState", "Connection", "Deliver", "Emit",
    "Endpoint", "EndpointConfig", "EndpointError", "Interface", "InterfaceRole",
    "Listener", "Match", "Signal", "SixTuple", "StateEvent", "TRANSITIONS", "TimerKind",
    "Transition", "TransitionRecord", "next_state",
]
