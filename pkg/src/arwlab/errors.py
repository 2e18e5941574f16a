"""Exception hierarchy shared by every arwlab module."""


class ArwlabError(Exception):
    """Base class for all errors raised by arwlab."""


class NetworkError(ArwlabError, ValueError):
    """Malformed network input (negative weight, bad index, bad insertion law).

    ``entry`` names the offending item, e.g. ``"edges[3]"`` or ``"nu[1]"``.
    """

    def __init__(self, message, entry=None):
        super().__init__(message if entry is None else f"{entry}: {message}")
        self.entry = entry


class DegenerateNetworkError(ArwlabError):
    """The network violates a standing assumption (leak-free class, unreachable site)."""


class ParameterError(ArwlabError, ValueError):
    """Out-of-range parameter for a generator, simulator or estimator."""


class CapacityError(ArwlabError):
    """An exact computation was requested beyond its size cap."""


class RunawayWalkError(ArwlabError):
    """A walk or a stabilization exceeded its hard step cap."""
