"""Executable model of a user/drone/control-server authentication scheme for
the Internet of Drones, with an adversary harness for its known weaknesses."""

from .crypto import Digest, get_group
from .errors import (
    AuthFailure,
    DuplicateIdentity,
    EncodingError,
    FormatError,
    IodLabError,
    NotForMe,
    ProtocolReject,
    SessionRejected,
    StaleTimestamp,
    UnknownDrone,
    UnknownScenario,
    UnknownUser,
)
from .sim import SimConfig, Simulation, run_honest_session, run_registration, run_scenario

__version__ = "0.1.0"
