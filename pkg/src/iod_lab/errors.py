"""Exception hierarchy shared by every layer of the lab."""


class IodLabError(Exception):
    """Base class for all errors raised by iod_lab."""


class EncodingError(IodLabError):
    """Malformed digest, group element or scalar encoding."""


class DuplicateIdentity(IodLabError):
    """Identity already present in the control server database."""


class ProtocolReject(IodLabError):
    """A party refused to continue the authentication exchange."""


class SessionRejected(ProtocolReject):
    """Local login check on the mobile device failed."""


class StaleTimestamp(ProtocolReject):
    pass


class UnknownUser(ProtocolReject):
    pass


class UnknownDrone(ProtocolReject):
    pass


class AuthFailure(ProtocolReject):
    pass


class NotForMe(ProtocolReject):
    """M2 addressed to a different drone pseudonym."""


class UnknownScenario(IodLabError):
    pass


class FormatError(IodLabError):
    """File content does not match the expected persisted format."""
