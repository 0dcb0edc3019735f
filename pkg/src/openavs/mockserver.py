"""Deterministic mock backends for offline runs of both wire protocols.

``scripted`` mode replays fixture replies keyed by a digest of the request's
(system, user) content. ``derived`` mode computes replies from content digests,
so any request gets a stable, content-sensitive answer without fixtures.
The segmenter always answers with a phrase-derived rectangle mask.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import math
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from openavs import dataio
from openavs.errors import UnknownFixtureError
from openavs.model import BinaryMask

_FRAME_BLOCK_RE = re.compile(r"<frame(\d+)>\n(.*?)\n</frame\1>", re.DOTALL)

MOCK_DETECTION_SCORE = 0.9


class MockMode(Enum):
    SCRIPTED = "scripted"
    DERIVED = "derived"


def request_digest(system: str, user_parts: list) -> str:
    """Stable hex digest of a chat request's (system, user) content."""
    canon = json.dumps(
        {"system": system, "user": user_parts},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def phrase_digest64(phrase: str) -> int:
    return int.from_bytes(hashlib.sha256(phrase.encode("utf-8")).digest()[:8], "big")


def phrase_rectangle(phrase: str, width: int, height: int) -> tuple[int, int, int, int]:
    """Half-open rectangle (x0, y0, x1, y1) derived from the phrase digest."""
    h = phrase_digest64(phrase)
    x0 = h % max(1, width // 2)
    y0 = (h >> 16) % max(1, height // 2)
    x1 = min(x0 + width // 4, width)
    y1 = min(y0 + height // 4, height)
    return x0, y0, x1, y1


def phrase_mask(phrase: str, width: int, height: int) -> BinaryMask:
    x0, y0, x1, y1 = phrase_rectangle(phrase, width, height)
    bits = np.zeros((height, width), dtype=np.uint8)
    bits[y0:y1, x0:x1] = 1
    return BinaryMask(bits)


def _user_text(user_parts: list) -> str:
    return "".join(p.get("text", "") for p in user_parts if p.get("type") == "text")


def _has_media(user_parts: list) -> bool:
    return any(p.get("type") in ("image_url", "input_audio") for p in user_parts)


def derived_chat_reply(system: str, user_parts: list) -> str:
    """Digest-derived reply: describer caption, per-frame answers, or one final answer."""
    if _has_media(user_parts):
        return f"sound of object-{request_digest(system, user_parts)[:4]}"
    text = _user_text(user_parts)
    blocks = _FRAME_BLOCK_RE.findall(text)
    if blocks:
        answers = []
        for _, inner in blocks:
            h = hashlib.sha256(inner.encode("utf-8")).hexdigest()[:4]
            answers.append(f"<answer>object-{h}</answer>")
        return "\n".join(answers)
    h = hashlib.sha256(text.encode("utf-8")).hexdigest()[:4]
    return f"<answer>object-{h}</answer>"


def mock_chat_reply(
    mode: MockMode, system: str, user_parts: list, fixtures: dict[str, str] | None = None
) -> str:
    if mode is MockMode.SCRIPTED:
        digest = request_digest(system, user_parts)
        if fixtures is None or digest not in fixtures:
            raise UnknownFixtureError(digest)
        return fixtures[digest]
    return derived_chat_reply(system, user_parts)


@dataclass
class CallLog:
    """Thread-safe request counters for instrumented test runs."""

    describe_calls: int = 0
    translate_calls: int = 0
    segment_calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def bump(self, field_name: str) -> None:
        with self._lock:
            setattr(self, field_name, getattr(self, field_name) + 1)

    def reset(self) -> None:
        with self._lock:
            self.describe_calls = 0
            self.translate_calls = 0
            self.segment_calls = 0


class MockAgentServer:
    """In-process HTTP server speaking both protocols deterministically."""

    def __init__(
        self,
        mode: MockMode = MockMode.DERIVED,
        fixtures: dict[str, str] | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.mode = mode
        self.fixtures = fixtures or {}
        self.calls = CallLog()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # silence per-request stderr noise
                pass

            def _send(self, status: int, payload: dict) -> None:
                body = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path == "/healthz":
                    self._send(200, {"status": "ok", "mode": outer.mode.value})
                else:
                    self._send(404, {"error": f"unknown path {self.path}"})

            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    payload = json.loads(self.rfile.read(length))
                except json.JSONDecodeError as e:
                    self._send(400, {"error": f"malformed JSON: {e}"})
                    return
                if self.path == "/v1/chat/completions":
                    self._send(*outer.handle_chat(payload))
                elif self.path == "/v1/segment":
                    self._send(*outer.handle_segment(payload))
                else:
                    self._send(404, {"error": f"unknown path {self.path}"})

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockAgentServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockAgentServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    # -- protocol handlers ------------------------------------------------

    def handle_chat(self, payload: dict) -> tuple[int, dict]:
        try:
            messages = payload["messages"]
            system = messages[0]["content"]
            user_content = messages[1]["content"]
        except (KeyError, IndexError, TypeError):
            return 400, {"error": "request does not match the chat protocol"}
        user_parts = (
            user_content
            if isinstance(user_content, list)
            else [{"type": "text", "text": str(user_content)}]
        )
        self.calls.bump("describe_calls" if _has_media(user_parts) else "translate_calls")
        try:
            reply = mock_chat_reply(self.mode, system, user_parts, self.fixtures)
        except UnknownFixtureError as e:
            return 404, {"error": "no fixture for request", "digest": str(e)}
        prompt_chars = len(system) + len(_user_text(user_parts))
        return 200, {
            "id": "mock",
            "model": payload.get("model", "mock"),
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": reply},
                    "finish_reason": "stop",
                }
            ],
            "usage": {
                "prompt_tokens": math.ceil(prompt_chars / 4),
                "completion_tokens": math.ceil(len(reply) / 4),
            },
        }

    def handle_segment(self, payload: dict) -> tuple[int, dict]:
        self.calls.bump("segment_calls")
        phrases = payload.get("phrases")
        if not isinstance(phrases, list) or not phrases:
            return 400, {"error": "phrases must be a nonempty list"}
        try:
            image = base64.b64decode(payload["image_png_b64"])
            with Image.open(io.BytesIO(image)) as img:
                width, height = img.size
        except (KeyError, ValueError, OSError):
            return 422, {"error": "image_png_b64 is not a decodable PNG"}
        detections = []
        for phrase in phrases:
            mask = phrase_mask(str(phrase), width, height)
            x0, y0, x1, y1 = phrase_rectangle(str(phrase), width, height)
            detections.append(
                {
                    "phrase": str(phrase),
                    "score": MOCK_DETECTION_SCORE,
                    "box": [x0, y0, x1, y1],
                    "mask_png_b64": base64.b64encode(dataio.encode_mask_png(mask)).decode(
                        "ascii"
                    ),
                }
            )
        return 200, {"detections": detections}
