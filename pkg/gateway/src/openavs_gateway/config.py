"""Gateway configuration: which backend serves each route, device, thresholds."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

ROUTE_KINDS = ("audio", "vision", "text", "omni")

# Default checkpoints for real mode; any HF-compatible alternative may be set.
DEFAULT_AUDIO_MODEL = "MIT/ast-finetuned-audioset-10-10-0.4593"
DEFAULT_VISION_MODEL = "Salesforce/blip-image-captioning-base"
DEFAULT_DETECTOR_MODEL = "IDEA-Research/grounding-dino-tiny"
DEFAULT_MASK_MODEL = "facebook/sam-vit-base"


@dataclass(frozen=True)
class ChatRoute:
    """One model id on the chat endpoint: what media it accepts, who answers."""

    model_id: str
    kind: str  # audio | vision | text | omni
    backend: str  # "stub" or an HF checkpoint name

    def __post_init__(self):
        if self.kind not in ROUTE_KINDS:
            raise ValueError(f"route kind must be one of {ROUTE_KINDS}, got {self.kind!r}")


@dataclass
class SegmenterConfig:
    backend: str = "stub"  # "stub" or "real"
    detector_model: str = DEFAULT_DETECTOR_MODEL
    mask_model: str = DEFAULT_MASK_MODEL
    device: str = "cpu"
    phrase_separator: str = " . "


@dataclass
class GatewayConfig:
    """Routes plus the segmenter stack. '*' is an optional catch-all chat route."""

    chat_routes: dict[str, ChatRoute] = field(default_factory=dict)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    device: str = "cpu"

    @classmethod
    def stub(cls) -> "GatewayConfig":
        """All routes answered by canned deterministic functions; no weights."""
        routes = {
            "stub-audio": ChatRoute("stub-audio", "audio", "stub"),
            "stub-vision": ChatRoute("stub-vision", "vision", "stub"),
            "stub-llm": ChatRoute("stub-llm", "text", "stub"),
            "*": ChatRoute("*", "omni", "stub"),
        }
        return cls(chat_routes=routes)

    @classmethod
    def real(cls) -> "GatewayConfig":
        routes = {
            "audio-captioner": ChatRoute("audio-captioner", "audio", DEFAULT_AUDIO_MODEL),
            "vision-describer": ChatRoute("vision-describer", "vision", DEFAULT_VISION_MODEL),
        }
        return cls(chat_routes=routes, segmenter=SegmenterConfig(backend="real"))

    @classmethod
    def from_file(cls, path: str | Path) -> "GatewayConfig":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        routes = {
            model_id: ChatRoute(model_id, spec.get("kind", "omni"), spec.get("backend", "stub"))
            for model_id, spec in payload.get("chat_routes", {}).items()
        }
        seg = payload.get("segmenter", {})
        return cls(
            chat_routes=routes,
            segmenter=SegmenterConfig(
                backend=seg.get("backend", "stub"),
                detector_model=seg.get("detector_model", DEFAULT_DETECTOR_MODEL),
                mask_model=seg.get("mask_model", DEFAULT_MASK_MODEL),
                device=seg.get("device", payload.get("device", "cpu")),
                phrase_separator=seg.get("phrase_separator", " . "),
            ),
            device=payload.get("device", "cpu"),
        )

    def route_for(self, model_id: str) -> ChatRoute | None:
        return self.chat_routes.get(model_id) or self.chat_routes.get("*")
