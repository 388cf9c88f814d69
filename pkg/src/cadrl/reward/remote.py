"""HTTP client for an external evaluator speaking ``POST /v1/score``."""

from __future__ import annotations

import json
import logging
import socket
import time
import urllib.error
import urllib.request

from .engine import EvalRequest, EvalResponse, ScoreOutOfRange, Violation

log = logging.getLogger(__name__)

MAX_RETRIES = 2
RETRY_BACKOFF = 0.05


class RemoteEvalError(Exception):
    pass


class EvalTimeout(RemoteEvalError):
    pass


class MalformedResponse(RemoteEvalError):
    pass


class HTTPStatus(RemoteEvalError):
    def __init__(self, code: int):
        super().__init__(f"evaluator returned HTTP {code}")
        self.code = code


def parse_response(body: bytes) -> EvalResponse:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedResponse(f"response is not UTF-8 JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedResponse("response must be a JSON object")
    score = doc.get("score")
    if isinstance(score, bool) or not isinstance(score, int):
        raise MalformedResponse(f"score must be an integer, got {score!r}")
    raw = doc.get("violations", [])
    if not isinstance(raw, list):
        raise MalformedResponse("violations must be a list")
    violations = []
    for item in raw:
        if not isinstance(item, dict) or not isinstance(item.get("tag"), str):
            raise MalformedResponse(f"bad violation entry {item!r}")
        violations.append(Violation(item["tag"], str(item.get("detail", ""))))
    try:
        return EvalResponse(score, tuple(violations))
    except ScoreOutOfRange as exc:
        raise MalformedResponse(str(exc)) from None


def _score_url(endpoint: str) -> str:
    endpoint = endpoint.rstrip("/")
    return endpoint if endpoint.endswith("/v1/score") else endpoint + "/v1/score"


def score_remote(request: EvalRequest, endpoint: str, timeout: float = 2.0) -> EvalResponse:
    """POST the request and validate the reply.

    Timeouts, connection failures and 5xx replies are retried up to
    ``MAX_RETRIES`` times. Unreachable endpoints surface as ``EvalTimeout``.
    Each call builds its own request object, so concurrent use is safe.
    """
    data = json.dumps(request.to_json()).encode("utf-8")
    url = _score_url(endpoint)
    last: RemoteEvalError | None = None
    for attempt in range(MAX_RETRIES + 1):
        if attempt:
            time.sleep(RETRY_BACKOFF * attempt)
        req = urllib.request.Request(url, data=data, method="POST",
                                     headers={"Content-Type": "application/json; charset=utf-8"})
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                body = resp.read()
        except urllib.error.HTTPError as exc:
            if exc.code < 500:
                raise HTTPStatus(exc.code) from None
            last = HTTPStatus(exc.code)
        except (socket.timeout, TimeoutError) as exc:
            last = EvalTimeout(f"no reply from {url} within {timeout}s: {exc}")
        except (urllib.error.URLError, ConnectionError) as exc:
            last = EvalTimeout(f"evaluator unreachable at {url}: {exc}")
        else:
            return parse_response(body)
        log.debug("evaluator attempt %d failed: %s", attempt + 1, last)
    raise last
