"""Wire-protocol conformance checks, runnable against any server implementation.

The same assertions back two test suites: the packaged mock server here, and
any external service claiming to speak these protocols (e.g. a model gateway
in stub mode). Checks are value-agnostic: they pin the shapes, determinism,
and error behavior the clients rely on, not specific model outputs.
"""

from __future__ import annotations

import io
import math
import struct
import wave

import numpy as np
from PIL import Image

from openavs.clients import ChatClient, SegmenterClient
from openavs.errors import InvalidRequestError
from openavs.model import AgentEndpoint, AgentKind, PipelineConfig, Variant
from openavs.prompting import AssembledRequest, TranslatorMode


def make_test_png(width: int = 48, height: int = 32, seed: int = 0) -> bytes:
    """Deterministic little RGB image with a bright square on a dark field."""
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 40, size=(height, width, 3), dtype=np.uint8)
    x0, y0 = width // 4, height // 4
    pixels[y0 : y0 + height // 2, x0 : x0 + width // 2] = (250, 250, 250)
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def make_test_wav(duration_s: float = 0.05, freq_hz: float = 440.0) -> bytes:
    """Deterministic 16-bit 16 kHz mono WAV tone."""
    rate = 16000
    n = int(rate * duration_s)
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(rate)
        frames = b"".join(
            struct.pack("<h", int(10000 * math.sin(2 * math.pi * freq_hz * t / rate)))
            for t in range(n)
        )
        wav.writeframes(frames)
    return buf.getvalue()


def _config(base_url: str) -> PipelineConfig:
    cfg = PipelineConfig(variant=Variant.LITE)
    cfg.segmenter_url = base_url
    cfg.timeout_s = 10.0
    cfg.retries = 0
    return cfg


def check_chat_describe(base_url: str, model_id: str = "contract-audio") -> None:
    client = ChatClient(_config(base_url))
    endpoint = AgentEndpoint(url=base_url, model_id=model_id)
    wav = make_test_wav()
    desc, usage = client.describe(
        AgentKind.AUDIO_DESCRIBER,
        endpoint,
        variant=2,
        video_id="contract",
        frame_index=0,
        audio_wav=wav,
    )
    assert isinstance(desc.text, str) and desc.text.strip(), "describer reply must be text"
    assert usage.prompt_tokens >= 0 and usage.completion_tokens >= 0
    assert usage.model_id == model_id

    desc2, _ = client.describe(
        AgentKind.AUDIO_DESCRIBER,
        endpoint,
        variant=2,
        video_id="contract",
        frame_index=0,
        audio_wav=wav,
    )
    assert desc2.text == desc.text, "identical media bytes must produce identical text"


def check_chat_translate(base_url: str, model_id: str = "contract-llm") -> None:
    client = ChatClient(_config(base_url))
    endpoint = AgentEndpoint(url=base_url, model_id=model_id)
    request = AssembledRequest(
        system_prompt="Answer inside <answer></answer> tags.",
        user_input="<frame0>\n a test tone\n</frame0>",
        mode=TranslatorMode.BASIC,
        covered_frames=(0,),
    )
    reply, usage = client.translate(request, endpoint)
    assert isinstance(reply, str) and reply
    assert usage.prompt_tokens >= 0 and usage.completion_tokens >= 0

    reply2, _ = client.translate(request, endpoint)
    assert reply2 == reply, "translator must be deterministic for identical requests"

    empty = AssembledRequest("sys", "   ", TranslatorMode.BASIC, (0,))
    try:
        client.translate(empty, endpoint)
    except InvalidRequestError:
        pass
    else:
        raise AssertionError("empty user input must be rejected client-side")


def check_segment(base_url: str) -> None:
    cfg = _config(base_url)
    cfg.detection_score_threshold = 0.0
    client = SegmenterClient(cfg)
    png = make_test_png()
    detections = client.segment(png, ["bright square"])
    assert detections, "segmenter returned no detections for a visible object"
    for det in detections:
        assert 0.0 <= det.score <= 1.0
        assert det.mask.shape == (32, 48), f"mask shape {det.mask.shape} != frame (32, 48)"
        x0, y0, x1, y1 = det.box
        assert x0 <= x1 and y0 <= y1

    try:
        client.segment(png, [])
    except InvalidRequestError:
        pass
    else:
        raise AssertionError("empty phrase list must be rejected client-side")


def check_segment_rejects_bad_payload(base_url: str) -> None:
    """Protocol-level guards: empty phrases and undecodable images are 4xx."""
    import requests

    r = requests.post(
        base_url + "/v1/segment",
        json={"image_png_b64": "", "phrases": [], "box_threshold": 0.3, "text_threshold": 0.2},
        timeout=10,
    )
    assert r.status_code == 400, f"empty phrases should be 400, got {r.status_code}"

    r = requests.post(
        base_url + "/v1/segment",
        json={
            "image_png_b64": "bm90IGEgcG5n",
            "phrases": ["thing"],
            "box_threshold": 0.3,
            "text_threshold": 0.2,
        },
        timeout=10,
    )
    assert r.status_code in (400, 422), f"bad image should be 4xx, got {r.status_code}"


def check_all(base_url: str, chat_model: str = "contract-audio") -> None:
    check_chat_describe(base_url, chat_model)
    check_chat_translate(base_url)
    check_segment(base_url)
    check_segment_rejects_bad_payload(base_url)
