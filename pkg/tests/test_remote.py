"""Remote client against golden fixtures and a scripted in-process HTTP server."""

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from bgforge.errors import DimensionViolation, ProtocolError, Timeout, Unreachable
from bgforge.remote import (
    BackendDescriptor,
    InpaintJob,
    encode_request,
    healthcheck,
    submit,
    validate_job,
)

GOLDEN = Path(__file__).parent / "golden"


def golden_job() -> InpaintJob:
    return InpaintJob(
        image=(GOLDEN / "image.png").read_bytes(),
        mask=(GOLDEN / "mask.png").read_bytes(),
        prompt="Generate a clean background",
        steps=38,
        guidance_scale=7.5,
        seed=123456789,
        width=8,
        height=8,
    )


class ScriptedHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):  # keep test output clean
        pass

    def _respond(self, code, body: bytes, content_type="application/json"):
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        server = self.server
        server.seen_headers.append(dict(self.headers))
        if self.path != "/v1/health":
            self._respond(404, b'{"error":"not found"}')
            return
        action = server.next_action()
        if action[0] == "body":
            self._respond(200, action[1])
        else:
            self._respond(action[1], action[2])

    def do_POST(self):
        server = self.server
        server.seen_headers.append(dict(self.headers))
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        server.requests.append(raw)
        if self.path != "/v1/inpaint":
            self._respond(404, b'{"error":"not found"}')
            return
        action = server.next_action()
        kind = action[0]
        if kind == "status":
            self._respond(action[1], action[2])
        elif kind == "sleep":
            import time

            time.sleep(action[1])
            self._respond(200, b"{}")
        elif kind == "mirror":
            payload = json.loads(raw)
            body = json.dumps(
                {"backend_info": "mirror", "image": payload["image"], "wall_ms": 0},
                sort_keys=True,
                separators=(",", ":"),
            ).encode()
            self._respond(200, body)
        elif kind == "image":
            body = json.dumps(
                {"backend_info": "fake", "image": base64.b64encode(action[1]).decode(), "wall_ms": 1},
                sort_keys=True,
                separators=(",", ":"),
            ).encode()
            self._respond(200, body)
        elif kind == "garbage":
            self._respond(200, b"not json at all")


class ScriptedServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self):
        super().__init__(("127.0.0.1", 0), ScriptedHandler)
        self.script = []
        self.requests = []
        self.seen_headers = []
        self._lock = threading.Lock()

    def next_action(self):
        with self._lock:
            if not self.script:
                return ("status", 500, b'{"error":"script exhausted"}')
            return self.script.pop(0)

    @property
    def endpoint(self):
        return f"http://127.0.0.1:{self.server_address[1]}"


@pytest.fixture
def server():
    srv = ScriptedServer()
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()
    srv.server_close()


class TestSerialization:
    def test_golden_request_bytes(self):
        assert encode_request(golden_job()) == (GOLDEN / "request.json").read_bytes()

    def test_identical_jobs_identical_payloads(self):
        assert encode_request(golden_job()) == encode_request(golden_job())

    def test_canonical_key_order(self):
        keys = list(json.loads(encode_request(golden_job())))
        assert keys == sorted(keys)

    def test_golden_response_parses(self):
        from bgforge.remote import _parse_result

        result = _parse_result((GOLDEN / "response.json").read_bytes(), golden_job())
        assert result.image == (GOLDEN / "image.png").read_bytes()
        assert result.backend_info == "mirror"
        assert result.wall_time_ms == 0

    def test_job_validation(self):
        job = golden_job()
        bad = InpaintJob(job.image, job.mask, job.prompt, 0, job.guidance_scale, job.seed, 8, 8)
        with pytest.raises(DimensionViolation):
            validate_job(bad)
        wrong_dims = InpaintJob(job.image, job.mask, job.prompt, 5, 7.5, 1, 16, 16)
        with pytest.raises(DimensionViolation):
            validate_job(wrong_dims)


class TestSubmit:
    def test_mirror_roundtrip(self, server):
        server.script = [("mirror",)]
        result = submit(golden_job(), server.endpoint, timeout=5, retries=0)
        assert result.image == golden_job().image
        assert result.backend_info == "mirror"
        # on-the-wire request matched the golden bytes
        assert server.requests[0] == (GOLDEN / "request.json").read_bytes()

    def test_retry_then_success(self, server):
        server.script = [
            ("status", 500, b'{"error":"warming up"}'),
            ("status", 500, b'{"error":"warming up"}'),
            ("mirror",),
        ]
        result = submit(golden_job(), server.endpoint, timeout=5, retries=3, backoff=0.01)
        assert result.backend_info == "mirror"
        assert len(server.requests) == 3

    def test_retries_exhausted(self, server):
        server.script = [("status", 500, b"{}")] * 3
        with pytest.raises(ProtocolError) as err:
            submit(golden_job(), server.endpoint, timeout=5, retries=2, backoff=0.01)
        assert err.value.status == 500
        assert len(server.requests) == 3

    def test_client_error_not_retried(self, server):
        server.script = [("status", 400, b'{"error":"bad mask"}')]
        with pytest.raises(ProtocolError) as err:
            submit(golden_job(), server.endpoint, timeout=5, retries=3, backoff=0.01)
        assert err.value.status == 400
        assert len(server.requests) == 1

    def test_timeout(self, server):
        server.script = [("sleep", 2.0)]
        with pytest.raises(Timeout):
            submit(golden_job(), server.endpoint, timeout=0.3, retries=0)

    def test_wrong_result_dimensions(self, server):
        import io

        wrong = io.BytesIO()
        Image.fromarray(np.zeros((4, 4, 3), np.uint8), "RGB").save(wrong, format="PNG")
        server.script = [("image", wrong.getvalue())]
        with pytest.raises(DimensionViolation):
            submit(golden_job(), server.endpoint, timeout=5, retries=0)

    def test_garbage_success_body(self, server):
        server.script = [("garbage",)]
        with pytest.raises(ProtocolError):
            submit(golden_job(), server.endpoint, timeout=5, retries=0)

    def test_unreachable_port(self):
        with pytest.raises(Unreachable):
            submit(golden_job(), "http://127.0.0.1:1", timeout=0.5, retries=0)

    def test_bearer_token_sent(self, server, monkeypatch):
        monkeypatch.setenv("BGFORGE_REMOTE_TOKEN", "sekrit")
        server.script = [("mirror",)]
        submit(golden_job(), server.endpoint, timeout=5, retries=0)
        assert server.seen_headers[0].get("Authorization") == "Bearer sekrit"

    def test_no_token_no_header(self, server, monkeypatch):
        monkeypatch.delenv("BGFORGE_REMOTE_TOKEN", raising=False)
        server.script = [("mirror",)]
        submit(golden_job(), server.endpoint, timeout=5, retries=0)
        assert "Authorization" not in server.seen_headers[0]


class TestHealthcheck:
    def test_parses_descriptor(self, server):
        server.script = [("body", (GOLDEN / "health.json").read_bytes())]
        desc = healthcheck(server.endpoint, timeout=5)
        assert desc == BackendDescriptor(model="mirror", latent_factor=8, max_steps=50)

    def test_malformed_metadata(self, server):
        server.script = [("body", b'{"model":"x"}')]
        with pytest.raises(ProtocolError):
            healthcheck(server.endpoint, timeout=5)

    def test_unreachable(self):
        with pytest.raises(Unreachable):
            healthcheck("http://127.0.0.1:1", timeout=0.5)
