"""HTTP clients for the chat and segmentation wire protocols.

Both protocols are bit-exact contracts: the chat side follows the familiar
``/v1/chat/completions`` shape with media parts, the segmentation side is this
project's ``/v1/segment`` JSON exchange. All calls retry transient failures
with exponential backoff and respect a per-endpoint in-flight cap.
"""

from __future__ import annotations

import base64
import math
import os
import threading
import time
from dataclasses import dataclass

import requests

from openavs import dataio
from openavs.errors import (
    InvalidRequestError,
    MaskShapeMismatchError,
    RetryExhaustedError,
    ServiceError,
    TransportError,
)
from openavs.metrics import binarize_prediction
from openavs.model import AgentEndpoint, AgentKind, BinaryMask, Description, PipelineConfig
from openavs.prompting import AssembledRequest, media_prompt

CHAT_PATH = "/v1/chat/completions"
SEGMENT_PATH = "/v1/segment"
API_KEY_ENV = "OPENAVS_API_KEY"

RETRYABLE_STATUSES = frozenset({429})  # plus every 5xx


@dataclass(frozen=True)
class TokenUsage:
    """Token counts as reported by the service; estimated=True when we had to guess."""

    prompt_tokens: int
    completion_tokens: int
    model_id: str
    estimated: bool = False


@dataclass(frozen=True)
class Detection:
    phrase: str
    score: float
    box: tuple[float, float, float, float]
    mask: BinaryMask


def estimate_tokens(chars: int) -> int:
    return math.ceil(chars / 4)


def _is_retryable(exc: Exception) -> bool:
    if isinstance(exc, TransportError):
        return True
    if isinstance(exc, ServiceError):
        return exc.status in RETRYABLE_STATUSES or exc.status >= 500
    return False


class _EndpointLimiter:
    """Caps outstanding requests per endpoint URL."""

    def __init__(self, max_inflight: int):
        self._max = max(1, max_inflight)
        self._semaphores: dict[str, threading.Semaphore] = {}
        self._lock = threading.Lock()

    def acquire(self, url: str) -> threading.Semaphore:
        with self._lock:
            sem = self._semaphores.get(url)
            if sem is None:
                sem = threading.Semaphore(self._max)
                self._semaphores[url] = sem
        return sem


class HttpAgentClient:
    """Shared POST machinery: auth header, retries with backoff, in-flight cap."""

    def __init__(self, config: PipelineConfig, sleep=time.sleep, session=None):
        self.config = config
        self._sleep = sleep
        self._session = session or requests.Session()
        self._limiter = _EndpointLimiter(config.max_inflight)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _post_once(self, url: str, payload: dict) -> dict:
        try:
            resp = self._session.post(
                url, json=payload, headers=self._headers(), timeout=self.config.timeout_s
            )
        except requests.Timeout as e:
            raise TransportError(f"timeout after {self.config.timeout_s}s: {url}") from e
        except requests.ConnectionError as e:
            raise TransportError(f"connection failed: {url}: {e}") from e
        if resp.status_code != 200:
            raise ServiceError(resp.status_code, resp.text)
        try:
            return resp.json()
        except ValueError as e:
            raise ServiceError(resp.status_code, f"unparseable response body: {e}") from e

    def post_json(self, url: str, payload: dict) -> dict:
        """POST with up to ``retries`` retries (backoff 1s, 2s, 4s, ...)."""
        sem = self._limiter.acquire(url)
        last: Exception | None = None
        with sem:
            for attempt in range(self.config.retries + 1):
                try:
                    return self._post_once(url, payload)
                except (TransportError, ServiceError) as e:
                    if not _is_retryable(e):
                        raise
                    last = e
                    if attempt < self.config.retries:
                        self._sleep(float(2**attempt))
        raise RetryExhaustedError(
            f"gave up on {url} after {self.config.retries + 1} attempts: {last}"
        ) from last


def _usage_from_response(
    body: dict, model_id: str, prompt_text_chars: int, reply: str
) -> TokenUsage:
    usage = body.get("usage") or {}
    if "prompt_tokens" in usage and "completion_tokens" in usage:
        return TokenUsage(
            prompt_tokens=int(usage["prompt_tokens"]),
            completion_tokens=int(usage["completion_tokens"]),
            model_id=model_id,
        )
    return TokenUsage(
        prompt_tokens=estimate_tokens(prompt_text_chars),
        completion_tokens=estimate_tokens(len(reply)),
        model_id=model_id,
        estimated=True,
    )


def _reply_content(body: dict) -> str:
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as e:
        raise ServiceError(200, f"chat response missing choices[0].message.content: {e}") from e
    if not isinstance(content, str):
        raise ServiceError(200, f"chat content is {type(content).__name__}, expected string")
    return content


class ChatClient(HttpAgentClient):
    """Describer and translator calls over the chat protocol."""

    def describe(
        self,
        kind: AgentKind,
        endpoint: AgentEndpoint,
        variant: int,
        *,
        video_id: str,
        frame_index: int,
        image_png: bytes | None = None,
        audio_wav: bytes | None = None,
    ) -> tuple[Description, TokenUsage]:
        """One media-to-text call; the reply text becomes a Description."""
        needs_audio = kind in (AgentKind.AUDIO_DESCRIBER, AgentKind.MULTIMODAL_DESCRIBER)
        needs_image = kind in (AgentKind.VISUAL_DESCRIBER, AgentKind.MULTIMODAL_DESCRIBER)
        if needs_audio != (audio_wav is not None) or needs_image != (image_png is not None):
            raise InvalidRequestError(
                f"{kind.name} expects audio={needs_audio} image={needs_image}"
            )

        prompt = media_prompt(kind, variant)
        parts: list[dict] = [{"type": "text", "text": prompt}]
        if image_png is not None:
            b64 = base64.b64encode(image_png).decode("ascii")
            parts.append(
                {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}
            )
        if audio_wav is not None:
            parts.append(
                {
                    "type": "input_audio",
                    "input_audio": {
                        "data": base64.b64encode(audio_wav).decode("ascii"),
                        "format": "wav",
                    },
                }
            )
        payload = {
            "model": endpoint.model_id,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": ""},
                {"role": "user", "content": parts},
            ],
        }
        try:
            body = self.post_json(endpoint.url + CHAT_PATH, payload)
        except Exception as e:
            raise _annotated(e, f"frame={frame_index} kind={kind.name} variant={variant}") from e
        reply = _reply_content(body)
        usage = _usage_from_response(body, endpoint.model_id, len(prompt), reply)
        description = Description(
            video_id=video_id,
            frame_index=frame_index,
            agent_kind=kind,
            model_id=endpoint.model_id,
            prompt_variant=variant,
            text=reply,
        )
        return description, usage

    def translate(
        self, request: AssembledRequest, endpoint: AgentEndpoint
    ) -> tuple[str, TokenUsage]:
        """One translator call at temperature 0; the raw reply is returned unparsed."""
        if not request.user_input.strip():
            raise InvalidRequestError("translator user input is empty")
        payload = {
            "model": endpoint.model_id,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": [{"type": "text", "text": request.user_input}]},
            ],
        }
        body = self.post_json(endpoint.url + CHAT_PATH, payload)
        reply = _reply_content(body)
        usage = _usage_from_response(
            body,
            endpoint.model_id,
            len(request.system_prompt) + len(request.user_input),
            reply,
        )
        return reply, usage


class SegmenterClient(HttpAgentClient):
    """Open-vocabulary segmentation calls over the /v1/segment protocol."""

    def segment(self, frame_png: bytes, phrases: list[str]) -> list[Detection]:
        """Detections scored at or above the configured threshold, service order kept."""
        if not phrases:
            raise InvalidRequestError("phrase list is empty")
        frame_shape = dataio.image_size(frame_png)
        payload = {
            "image_png_b64": base64.b64encode(frame_png).decode("ascii"),
            "phrases": list(phrases),
            "box_threshold": self.config.box_threshold,
            "text_threshold": self.config.text_threshold,
        }
        body = self.post_json(self.config.segmenter_url + SEGMENT_PATH, payload)
        detections = []
        for det in body.get("detections") or []:
            mask_grid = dataio.decode_mask_png(base64.b64decode(det["mask_png_b64"]))
            if mask_grid.shape != frame_shape:
                raise MaskShapeMismatchError(
                    f"detection mask {mask_grid.shape} vs frame {frame_shape}"
                )
            score = float(det["score"])
            if score < self.config.detection_score_threshold:
                continue
            detections.append(
                Detection(
                    phrase=str(det["phrase"]),
                    score=score,
                    box=tuple(float(v) for v in det["box"]),
                    mask=binarize_prediction(mask_grid),
                )
            )
        return detections


def _annotated(e: Exception, context: str) -> Exception:
    if isinstance(e, ServiceError):
        err = ServiceError(e.status, e.body)
        err.args = (f"{context}: {err.args[0]}",)
        return err
    if isinstance(e, (TransportError, RetryExhaustedError, InvalidRequestError)):
        return type(e)(f"{context}: {e}")
    return e
