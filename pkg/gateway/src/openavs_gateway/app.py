"""FastAPI application exposing the chat and segmentation wire protocols.

Error mapping: 400 for malformed requests, 422 for media that is present but
undecodable (or sent to a route that cannot accept it), 503 while a real
backend's weights are still loading.
"""

from __future__ import annotations

import base64
import binascii
import math

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from openavs_gateway.backends import (
    BackendRegistry,
    ChatReply,
    HfAudioCaptioner,
    HfImageCaptioner,
    HfTextGenerator,
    NotReadyError,
    StubChatBackend,
)
from openavs_gateway.config import GatewayConfig
from openavs_gateway.media import (
    MediaDecodeError,
    decode_audio_part,
    decode_image_part,
    decode_request_image,
    encode_mask_png,
)


def _error(status: int, message: str, **extra) -> JSONResponse:
    return JSONResponse({"error": message, **extra}, status_code=status)


def _split_parts(content) -> tuple[str, list[dict], list[dict]]:
    """(joined text, image parts, audio parts) from a user content value."""
    if isinstance(content, str):
        return content, [], []
    texts, images, audios = [], [], []
    for part in content:
        kind = part.get("type")
        if kind == "text":
            texts.append(part.get("text", ""))
        elif kind == "image_url":
            images.append(part)
        elif kind == "input_audio":
            audios.append(part)
    return "".join(texts), images, audios


def create_app(config: GatewayConfig | None = None) -> FastAPI:
    config = config or GatewayConfig.stub()
    registry = BackendRegistry(config)
    app = FastAPI(title="openavs-gateway")
    app.state.config = config
    app.state.registry = registry

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", **registry.states()}

    @app.post("/v1/chat/completions")
    async def chat(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")
        if not isinstance(body, dict) or not isinstance(body.get("messages"), list):
            return _error(400, "request does not match the chat protocol")

        system = ""
        user_content = None
        for message in body["messages"]:
            if not isinstance(message, dict):
                return _error(400, "messages must be role/content objects")
            if message.get("role") == "system":
                system = message.get("content") or ""
            elif message.get("role") == "user":
                user_content = message.get("content")
        if user_content is None:
            return _error(400, "no user message present")

        model_id = str(body.get("model", ""))
        route = config.route_for(model_id)
        if route is None:
            return _error(
                400,
                f"no route configured for model {model_id!r}",
                routes=sorted(k for k in config.chat_routes if k != "*"),
            )
        backend = registry.chat_backend(route.model_id)

        text, image_parts, audio_parts = _split_parts(user_content)
        if route.kind == "audio" and image_parts:
            return _error(422, "image part sent to an audio-only route")
        if route.kind == "vision" and audio_parts:
            return _error(422, "audio part sent to a vision-only route")
        if route.kind == "text" and (image_parts or audio_parts):
            return _error(422, "media part sent to a text-only route")
        if route.kind == "audio" and not audio_parts:
            return _error(400, "audio route requires an input_audio part")
        if route.kind == "vision" and not image_parts:
            return _error(400, "vision route requires an image_url part")

        try:
            images = [decode_image_part(p) for p in image_parts]
            audios = [decode_audio_part(p) for p in audio_parts]
        except MediaDecodeError as e:
            return _error(422, str(e))

        try:
            reply = _dispatch(backend, system, text, image_parts, audio_parts, images, audios)
        except NotReadyError as e:
            return _error(503, str(e))

        prompt_chars = len(system) + len(text)
        estimated = reply.prompt_tokens is None or reply.completion_tokens is None
        usage = {
            "prompt_tokens": (
                reply.prompt_tokens
                if reply.prompt_tokens is not None
                else math.ceil(prompt_chars / 4)
            ),
            "completion_tokens": (
                reply.completion_tokens
                if reply.completion_tokens is not None
                else math.ceil(len(reply.text) / 4)
            ),
            "estimated": estimated,
        }
        return {
            "id": "gateway",
            "model": model_id,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": reply.text},
                    "finish_reason": "stop",
                }
            ],
            "usage": usage,
        }

    @app.post("/v1/segment")
    async def segment(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")
        if not isinstance(body, dict):
            return _error(400, "request does not match the segmentation protocol")
        phrases = body.get("phrases")
        if not isinstance(phrases, list) or not phrases or not all(
            isinstance(p, str) and p.strip() for p in phrases
        ):
            return _error(400, "phrases must be a nonempty list of nonempty strings")
        if "image_png_b64" not in body:
            return _error(400, "image_png_b64 is required")
        try:
            image = decode_request_image(str(body["image_png_b64"]))
        except MediaDecodeError as e:
            return _error(422, str(e))
        try:
            box_threshold = float(body.get("box_threshold", 0.35))
            text_threshold = float(body.get("text_threshold", 0.25))
        except (TypeError, ValueError):
            return _error(400, "thresholds must be numbers")

        try:
            detections = registry.segmenter.segment(
                image,
                [p.strip() for p in phrases],
                box_threshold,
                text_threshold,
                config.segmenter.phrase_separator,
            )
        except NotReadyError as e:
            return _error(503, str(e))

        return {
            "detections": [
                {
                    "phrase": det.phrase,
                    "score": det.score,
                    "box": list(det.box),
                    "mask_png_b64": encode_mask_png(det.mask),
                }
                for det in detections
            ]
        }

    return app


def _dispatch(backend, system, text, image_parts, audio_parts, images, audios) -> ChatReply:
    if isinstance(backend, StubChatBackend):
        image_bytes = [_part_bytes(p.get("image_url", {}).get("url", "")) for p in image_parts]
        audio_bytes = [_part_bytes(p.get("input_audio", {}).get("data", "")) for p in audio_parts]
        return backend.generate(system + "\x00" + text, image_bytes, audio_bytes)
    if isinstance(backend, HfAudioCaptioner):
        waveform, rate = audios[0]
        return backend.generate_audio(waveform, rate)
    if isinstance(backend, HfImageCaptioner):
        return backend.generate_image(images[0])
    if isinstance(backend, HfTextGenerator):
        return backend.generate_text(system, text)
    raise NotReadyError("route has no usable backend")


def _part_bytes(value: str) -> bytes:
    idx = value.find("base64,")
    raw = value[idx + len("base64,"):] if idx >= 0 else value
    try:
        return base64.b64decode(raw)
    except (binascii.Error, ValueError):
        return raw.encode()
