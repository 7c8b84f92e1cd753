"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to, plus a short
machine-readable ``code`` string used in the JSON error payload.
"""


class P2RError(Exception):
    exit_code = 2
    code = "error"

    def __init__(self, message, *, code=None, **details):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.details = details

    def to_json(self):
        payload = {"error": self.code, "message": str(self)}
        payload.update({k: v for k, v in self.details.items() if _jsonable(v)})
        return payload


def _jsonable(v):
    return isinstance(v, (str, int, float, bool, list, dict, type(None)))


class UsageError(P2RError):
    exit_code = 1
    code = "usage"


class DataError(P2RError):
    """Malformed or inconsistent input data."""

    exit_code = 2
    code = "data"


class ComputationError(P2RError):
    """Non-finite values, divergence."""

    exit_code = 3
    code = "computation"


class BackendError(P2RError):
    exit_code = 4
    code = "backend"
