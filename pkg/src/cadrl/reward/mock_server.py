"""Reference evaluator server: the heuristic judge behind ``POST /v1/score``.

Run standalone with ``python -m cadrl.reward.mock_server --port 8765``.
"""

from __future__ import annotations

import argparse
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..corpus import StructPromptError
from ..lang import ParseError, UnknownLexeme, parse, strip_reasoning, tokenize
from .engine import Deductions, score_struct


def score_payload(doc: dict, deductions: Deductions = Deductions()) -> dict:
    try:
        program = parse(strip_reasoning(tokenize(doc["program"])))
    except (UnknownLexeme, ParseError):
        program = None
    return score_struct(program, doc["struct_prompt"], deductions).to_json()


class _Handler(BaseHTTPRequestHandler):
    server: "MockEvaluator._Server"

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _reply(self, code: int, body: bytes):
        self.send_response(code)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        owner = self.server.owner
        owner.requests += 1
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        if owner.delay:
            time.sleep(owner.delay)
        if self.path != "/v1/score":
            self._reply(404, b'{"error": "not found"}')
            return
        if owner.fixed_response is not None:
            body = owner.fixed_response
            if isinstance(body, dict):
                body = json.dumps(body).encode("utf-8")
            self._reply(owner.status, body)
            return
        try:
            doc = json.loads(raw.decode("utf-8"))
            reply = score_payload(doc, owner.deductions)
        except (KeyError, TypeError, ValueError, StructPromptError) as exc:
            self._reply(400, json.dumps({"error": str(exc)}).encode("utf-8"))
            return
        self._reply(200, json.dumps(reply).encode("utf-8"))


class MockEvaluator:
    """Threaded local evaluator; usable as a context manager.

    ``fixed_response`` (dict or raw bytes) and ``status`` override the
    heuristic reply; ``delay`` sleeps before answering.
    """

    class _Server(ThreadingHTTPServer):
        daemon_threads = True
        owner: "MockEvaluator"

    def __init__(self, host: str = "127.0.0.1", port: int = 0, *, fixed_response=None, status: int = 200,
                 delay: float = 0.0, deductions: Deductions = Deductions()):
        self.fixed_response = fixed_response
        self.status = status
        self.delay = delay
        self.deductions = deductions
        self.requests = 0
        self._httpd = self._Server((host, port), _Handler)
        self._httpd.owner = self
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockEvaluator":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "MockEvaluator":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8765)
    args = ap.parse_args(argv)
    server = MockEvaluator(args.host, args.port)
    print(f"serving on {server.url}/v1/score")
    try:
        server._httpd.serve_forever()
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
