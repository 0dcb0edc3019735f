"""Transport behavior: chat/segment calls, retry policy, usage accounting."""

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from openavs import dataio
from openavs.clients import ChatClient, SegmenterClient, TokenUsage, estimate_tokens
from openavs.contract import make_test_png, make_test_wav
from openavs.errors import (
    InvalidRequestError,
    MaskShapeMismatchError,
    RetryExhaustedError,
    ServiceError,
)
from openavs.mockserver import phrase_mask
from openavs.model import AgentEndpoint, AgentKind
from openavs.prompting import AssembledRequest, TranslatorMode

from conftest import make_config


class ScriptedHttpServer:
    """Plays back a fixed (status, body) sequence; records request payloads/headers."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length)) if length else {}
                outer.requests.append({"payload": payload, "headers": dict(self.headers)})
                status, body = (
                    outer.responses.pop(0) if outer.responses else (500, {"error": "exhausted"})
                )
                data = json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self):
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()


def chat_ok_body(content, usage=None):
    body = {"choices": [{"message": {"role": "assistant", "content": content}}]}
    if usage is not None:
        body["usage"] = usage
    return body


@pytest.fixture()
def scripted():
    servers = []

    def make(responses):
        server = ScriptedHttpServer(responses)
        servers.append(server)
        return server

    yield make
    for server in servers:
        server.stop()


class TestDescribe:
    def test_against_derived_mock(self, derived_server):
        cfg = make_config(derived_server.url)
        client = ChatClient(cfg)
        endpoint = cfg.audio_describers[0]
        wav = make_test_wav()
        desc, usage = client.describe(
            AgentKind.AUDIO_DESCRIBER, endpoint, 2, video_id="v", frame_index=0, audio_wav=wav
        )
        assert desc.text.startswith("sound of object-")
        assert desc.agent_kind is AgentKind.AUDIO_DESCRIBER
        assert usage.model_id == "mock-audio" and not usage.estimated

        desc2, _ = client.describe(
            AgentKind.AUDIO_DESCRIBER, endpoint, 2, video_id="v", frame_index=0, audio_wav=wav
        )
        assert desc2.text == desc.text

    def test_request_wire_shape(self, scripted):
        server = scripted([(200, chat_ok_body("hi", {"prompt_tokens": 1, "completion_tokens": 1}))])
        cfg = make_config(server.url)
        client = ChatClient(cfg)
        client.describe(
            AgentKind.AUDIO_DESCRIBER,
            AgentEndpoint(server.url, "pengi"),
            2,
            video_id="v",
            frame_index=0,
            audio_wav=b"RIFFwav",
        )
        payload = server.requests[0]["payload"]
        assert payload["temperature"] == 0
        assert payload["model"] == "pengi"
        assert payload["messages"][0] == {"role": "system", "content": ""}
        parts = payload["messages"][1]["content"]
        assert parts[0] == {"type": "text", "text": "Generate audio caption"}
        assert parts[1]["input_audio"]["format"] == "wav"
        assert base64.b64decode(parts[1]["input_audio"]["data"]) == b"RIFFwav"

    def test_media_kind_mismatch(self, derived_server):
        cfg = make_config(derived_server.url)
        client = ChatClient(cfg)
        with pytest.raises(InvalidRequestError):
            client.describe(
                AgentKind.AUDIO_DESCRIBER,
                cfg.audio_describers[0],
                0,
                video_id="v",
                frame_index=0,
                image_png=b"png",  # audio kind must not carry an image
                audio_wav=b"wav",
            )

    def test_errors_carry_frame_kind_variant(self, scripted):
        server = scripted([(404, {"error": "nope"})])
        cfg = make_config(server.url)
        client = ChatClient(cfg)
        with pytest.raises(ServiceError, match="frame=3 kind=AUDIO_DESCRIBER variant=1"):
            client.describe(
                AgentKind.AUDIO_DESCRIBER,
                AgentEndpoint(server.url, "pengi"),
                1,
                video_id="v",
                frame_index=3,
                audio_wav=b"wav",
            )

    def test_bearer_token_sent_when_set(self, scripted, monkeypatch):
        monkeypatch.setenv("OPENAVS_API_KEY", "sk-test")
        server = scripted([(200, chat_ok_body("x", {"prompt_tokens": 0, "completion_tokens": 0}))])
        cfg = make_config(server.url)
        ChatClient(cfg).describe(
            AgentKind.AUDIO_DESCRIBER,
            AgentEndpoint(server.url, "m"),
            0,
            video_id="v",
            frame_index=0,
            audio_wav=b"w",
        )
        assert server.requests[0]["headers"]["Authorization"] == "Bearer sk-test"

    def test_no_header_without_key(self, scripted, monkeypatch):
        monkeypatch.delenv("OPENAVS_API_KEY", raising=False)
        server = scripted([(200, chat_ok_body("x", {"prompt_tokens": 0, "completion_tokens": 0}))])
        cfg = make_config(server.url)
        ChatClient(cfg).describe(
            AgentKind.AUDIO_DESCRIBER,
            AgentEndpoint(server.url, "m"),
            0,
            video_id="v",
            frame_index=0,
            audio_wav=b"w",
        )
        assert "Authorization" not in server.requests[0]["headers"]


class TestTranslate:
    def request(self):
        return AssembledRequest(
            system_prompt="sys",
            user_input="<frame0>\n engine\n</frame0>",
            mode=TranslatorMode.BASIC,
            covered_frames=(0,),
        )

    def test_usage_echo(self, scripted):
        server = scripted(
            [(200, chat_ok_body("<answer>engine</answer>", {"prompt_tokens": 1200, "completion_tokens": 40}))]
        )
        cfg = make_config(server.url)
        reply, usage = ChatClient(cfg).translate(self.request(), AgentEndpoint(server.url, "llm"))
        assert reply == "<answer>engine</answer>"
        assert usage == TokenUsage(1200, 40, "llm")

    def test_missing_usage_estimated(self, scripted):
        server = scripted([(200, chat_ok_body("<answer>x</answer>"))])
        cfg = make_config(server.url)
        request = self.request()
        _, usage = ChatClient(cfg).translate(request, AgentEndpoint(server.url, "llm"))
        assert usage.estimated
        expected_prompt = estimate_tokens(len(request.system_prompt) + len(request.user_input))
        assert usage.prompt_tokens == expected_prompt
        assert usage.completion_tokens == estimate_tokens(len("<answer>x</answer>"))

    def test_empty_input_rejected(self, derived_server):
        cfg = make_config(derived_server.url)
        empty = AssembledRequest("sys", "  ", TranslatorMode.BASIC, (0,))
        with pytest.raises(InvalidRequestError):
            ChatClient(cfg).translate(empty, cfg.translator)

    def test_reply_returned_unmodified(self, scripted):
        raw = "  leading spaces kept\n<answer>ok</answer>\ntrailing too  "
        server = scripted([(200, chat_ok_body(raw, {"prompt_tokens": 0, "completion_tokens": 0}))])
        cfg = make_config(server.url)
        reply, _ = ChatClient(cfg).translate(self.request(), AgentEndpoint(server.url, "llm"))
        assert reply == raw


class TestRetryPolicy:
    def test_429_thrice_then_success(self, scripted):
        server = scripted(
            [
                (429, {"error": "slow down"}),
                (429, {"error": "slow down"}),
                (429, {"error": "slow down"}),
                (200, chat_ok_body("ok", {"prompt_tokens": 0, "completion_tokens": 0})),
            ]
        )
        sleeps = []
        cfg = make_config(server.url, retries=3)
        client = ChatClient(cfg, sleep=sleeps.append)
        reply, _ = client.translate(
            AssembledRequest("s", "u", TranslatorMode.BASIC, (0,)),
            AgentEndpoint(server.url, "llm"),
        )
        assert reply == "ok"
        assert sleeps == [1.0, 2.0, 4.0]
        assert len(server.requests) == 4

    def test_5xx_retries_exhaust(self, scripted):
        server = scripted([(503, {"error": "down"})] * 5)
        cfg = make_config(server.url, retries=2)
        client = ChatClient(cfg, sleep=lambda _s: None)
        with pytest.raises(RetryExhaustedError):
            client.translate(
                AssembledRequest("s", "u", TranslatorMode.BASIC, (0,)),
                AgentEndpoint(server.url, "llm"),
            )
        assert len(server.requests) == 3  # initial + 2 retries

    def test_plain_4xx_fails_immediately(self, scripted):
        server = scripted([(400, {"error": "bad"})] * 3)
        cfg = make_config(server.url, retries=3)
        client = ChatClient(cfg, sleep=lambda _s: None)
        with pytest.raises(ServiceError):
            client.translate(
                AssembledRequest("s", "u", TranslatorMode.BASIC, (0,)),
                AgentEndpoint(server.url, "llm"),
            )
        assert len(server.requests) == 1


class TestSegment:
    def test_against_mock_rule(self, derived_server):
        cfg = make_config(derived_server.url)
        client = SegmenterClient(cfg)
        png = make_test_png(48, 32)
        detections = client.segment(png, ["drum"])
        assert len(detections) == 1
        det = detections[0]
        assert det.phrase == "drum" and det.score == 0.9
        assert det.mask == phrase_mask("drum", 48, 32)

    def test_below_threshold_filtered(self, derived_server):
        cfg = make_config(derived_server.url, detection_score_threshold=0.95)
        client = SegmenterClient(cfg)
        assert client.segment(make_test_png(), ["drum"]) == []

    def test_empty_detections(self, scripted):
        server = scripted([(200, {"detections": []})])
        cfg = make_config(server.url)
        assert SegmenterClient(cfg).segment(make_test_png(), ["x"]) == []

    def test_mask_shape_mismatch(self, scripted):
        wrong = phrase_mask("x", 10, 10)
        server = scripted(
            [
                (
                    200,
                    {
                        "detections": [
                            {
                                "phrase": "x",
                                "score": 0.9,
                                "box": [0, 0, 1, 1],
                                "mask_png_b64": base64.b64encode(
                                    dataio.encode_mask_png(wrong)
                                ).decode(),
                            }
                        ]
                    },
                )
            ]
        )
        cfg = make_config(server.url)
        with pytest.raises(MaskShapeMismatchError):
            SegmenterClient(cfg).segment(make_test_png(48, 32), ["x"])

    def test_empty_phrases_rejected(self, derived_server):
        cfg = make_config(derived_server.url)
        with pytest.raises(InvalidRequestError):
            SegmenterClient(cfg).segment(make_test_png(), [])

    def test_thresholds_forwarded(self, scripted):
        server = scripted([(200, {"detections": []})])
        cfg = make_config(server.url, box_threshold=0.5, text_threshold=0.4)
        SegmenterClient(cfg).segment(make_test_png(), ["x"])
        payload = server.requests[0]["payload"]
        assert payload["box_threshold"] == 0.5
        assert payload["text_threshold"] == 0.4


class TestInflightLimit:
    def test_concurrent_calls_capped_per_endpoint(self):
        import time
        from concurrent.futures import ThreadPoolExecutor
        from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

        peak = {"now": 0, "max": 0}
        lock = threading.Lock()

        class SlowHandler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                with lock:
                    peak["now"] += 1
                    peak["max"] = max(peak["max"], peak["now"])
                time.sleep(0.05)
                with lock:
                    peak["now"] -= 1
                length = int(self.headers.get("Content-Length", "0"))
                self.rfile.read(length)
                data = json.dumps({"detections": []}).encode()
                self.send_response(200)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        httpd = ThreadingHTTPServer(("127.0.0.1", 0), SlowHandler)
        thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = httpd.server_address[:2]
            cfg = make_config(f"http://{host}:{port}", max_inflight=2)
            client = SegmenterClient(cfg)
            png = make_test_png()
            with ThreadPoolExecutor(max_workers=8) as pool:
                futures = [pool.submit(client.segment, png, ["x"]) for _ in range(8)]
                for fut in futures:
                    fut.result()
            assert peak["max"] <= 2
        finally:
            httpd.shutdown()
            httpd.server_close()
