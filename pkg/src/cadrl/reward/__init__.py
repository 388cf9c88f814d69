from .engine import *  # noqa: F401,F403
from .engine import __all__ as _engine_all
from .remote import EvalTimeout, HTTPStatus, MalformedResponse, RemoteEvalError, score_remote

__all__ = list(_engine_all) + ["EvalTimeout", "HTTPStatus", "MalformedResponse", "RemoteEvalError", "score_remote"]
