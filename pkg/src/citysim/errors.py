"""Exception types raised across the simulator."""


class CitySimError(Exception):
    """Base class for all simulator errors."""

    code = "error"


class DuplicateIdError(CitySimError):
    code = "duplicate_id"


class NotFoundError(CitySimError):
    code = "not_found"


class NoFreeSpaceError(CitySimError):
    code = "no_free_space"


class ConfigInvalidError(CitySimError):
    code = "config_invalid"


class NoPathError(CitySimError):
    code = "no_path"


class ScenarioInvalidError(CitySimError):
    code = "scenario_invalid"


class UnknownAgentError(CitySimError):
    code = "unknown_agent"


class MalformedActionError(CitySimError):
    code = "malformed_action"


class BusyError(CitySimError):
    code = "busy"


class WrongEmbodimentError(CitySimError):
    code = "wrong_embodiment"


class OutOfRangeError(CitySimError):
    code = "out_of_range"


class InvalidTargetError(CitySimError):
    code = "invalid_target"


class UnparseableClauseError(CitySimError):
    code = "unparseable_clause"

    def __init__(self, clause: str):
        super().__init__(f"cannot parse clause: {clause!r}")
        self.clause = clause


class TargetNotFoundError(CitySimError):
    code = "target_not_found"


class InsufficientSpaceError(CitySimError):
    code = "insufficient_space"


class InsufficientFundsError(CitySimError):
    code = "insufficient_funds"


class WrongStateError(CitySimError):
    code = "wrong_state"


class InfeasibleMapError(CitySimError):
    code = "infeasible_map"


class EndpointUnavailableError(CitySimError):
    code = "endpoint_unavailable"
