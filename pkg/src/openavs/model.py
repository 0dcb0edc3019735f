"""Domain types shared by all pipeline stages, plus the per-clip knowledge bank.

The knowledge bank buffers every description produced during perception so the
translation stage can assemble them into a single consistency-aware request.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np

from openavs.errors import (
    ConfigError,
    DuplicateKeyError,
    FrozenBankError,
    VideoMismatchError,
)

# Recorded in place of an empty model reply so the bank key-space stays complete.
NO_DESCRIPTION = "(no description)"


class AgentKind(Enum):
    """The closed set of agent roles; enum order defines iteration rank."""

    AUDIO_DESCRIBER = 0
    VISUAL_DESCRIBER = 1
    MULTIMODAL_DESCRIBER = 2
    TRANSLATOR = 3
    SEGMENTER = 4


class Variant(Enum):
    """Pipeline capability tiers."""

    LITE = "lite"
    STANDARD = "standard"
    LARGE = "large"


@dataclass(frozen=True)
class Description:
    """One text output from one media agent for one frame under one prompt variant."""

    video_id: str
    frame_index: int
    agent_kind: AgentKind
    model_id: str
    prompt_variant: int
    text: str

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")
        if self.prompt_variant < 0:
            raise ValueError(f"prompt_variant must be >= 0, got {self.prompt_variant}")
        cleaned = self.text.strip()
        if not cleaned:
            cleaned = NO_DESCRIPTION
        object.__setattr__(self, "text", cleaned)

    @property
    def key(self) -> tuple[int, int, str, int]:
        return (self.frame_index, self.agent_kind.value, self.model_id, self.prompt_variant)


class KnowledgeBank:
    """Store of all descriptions for one clip, keyed by (frame, kind, model, variant).

    Safe for concurrent insertion during perception; fresh inserts are rejected
    once :meth:`freeze` is called, which the orchestrator does before translation.
    Iteration is deterministic regardless of insertion order.
    """

    def __init__(self, video_id: str):
        self.video_id = video_id
        self._entries: dict[tuple[int, int, str, int], Description] = {}
        self._lock = threading.Lock()
        self._frozen = False

    def insert(self, d: Description) -> None:
        if d.video_id != self.video_id:
            raise VideoMismatchError(
                f"description for video {d.video_id!r} inserted into bank for {self.video_id!r}"
            )
        with self._lock:
            if self._frozen:
                raise FrozenBankError(f"bank for {self.video_id!r} is frozen")
            if d.key in self._entries:
                raise DuplicateKeyError(f"duplicate description key {d.key}")
            self._entries[d.key] = d

    def freeze(self) -> None:
        with self._lock:
            self._frozen = True

    @property
    def frozen(self) -> bool:
        return self._frozen

    def query(self, frame_index: int, kind: AgentKind) -> list[Description]:
        """All entries for one frame and agent kind, in deterministic order."""
        return [d for d in self if d.frame_index == frame_index and d.agent_kind == kind]

    def frame_indices(self) -> list[int]:
        return sorted({k[0] for k in self._entries})

    def __iter__(self) -> Iterator[Description]:
        return iter(self._entries[k] for k in sorted(self._entries))

    def __len__(self) -> int:
        return len(self._entries)

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "entries": [
                {
                    "frame_index": d.frame_index,
                    "agent_kind": d.agent_kind.name,
                    "model_id": d.model_id,
                    "prompt_variant": d.prompt_variant,
                    "text": d.text,
                }
                for d in self
            ],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "KnowledgeBank":
        bank = cls(payload["video_id"])
        for e in payload["entries"]:
            bank.insert(
                Description(
                    video_id=payload["video_id"],
                    frame_index=e["frame_index"],
                    agent_kind=AgentKind[e["agent_kind"]],
                    model_id=e["model_id"],
                    prompt_variant=e["prompt_variant"],
                    text=e["text"],
                )
            )
        return bank


@dataclass(frozen=True)
class SegmentationDirective:
    """Per-frame refined phrase list handed to the segmenter.

    ``silent`` means the translator declared no sounding object for the frame,
    which is equivalent to an empty phrase list.
    """

    video_id: str
    frame_index: int
    phrases: tuple[str, ...]
    silent: bool

    def __post_init__(self):
        if self.silent != (len(self.phrases) == 0):
            raise ValueError("silent directives must have no phrases, and vice versa")
        for p in self.phrases:
            if not p or p != p.strip() or "\n" in p:
                raise ValueError(f"phrase must be trimmed, nonempty, single-line: {p!r}")


class BinaryMask:
    """H x W grid of {0, 1}; 1 marks a sounding-object pixel."""

    __slots__ = ("bits",)

    def __init__(self, bits: np.ndarray):
        arr = np.asarray(bits)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"mask must be a nonempty 2-D grid, got shape {arr.shape}")
        arr = arr.astype(np.uint8)
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        self.bits = arr

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape  # type: ignore[return-value]

    @classmethod
    def zeros(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    def union(self, other: "BinaryMask") -> "BinaryMask":
        if self.shape != other.shape:
            raise ValueError(f"cannot union shapes {self.shape} and {other.shape}")
        return BinaryMask(self.bits | other.bits)

    def invert(self) -> "BinaryMask":
        return BinaryMask(1 - self.bits)

    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.shape, self.bits.tobytes()))

    def __repr__(self):
        return f"BinaryMask({self.height}x{self.width}, ones={self.count()})"


@dataclass
class VideoSample:
    """One clip: ordered frames, aligned 1-second audio segments, optional ground truth."""

    id: str
    frames: list[str]
    audio_segments: list[str]
    gt_masks: list[str] | None = None
    clip_label: str | None = None

    def normalize(self) -> list[str]:
        """Align frame/segment lengths by truncating to the shorter list.

        Returns warnings for any repair performed. Raises if nothing is left.
        """
        warnings: list[str] = []
        n = min(len(self.frames), len(self.audio_segments))
        if len(self.frames) != len(self.audio_segments):
            warnings.append(
                f"{self.id}: frame/segment count mismatch "
                f"({len(self.frames)} frames, {len(self.audio_segments)} segments); truncated to {n}"
            )
            self.frames = self.frames[:n]
            self.audio_segments = self.audio_segments[:n]
        if n < 1:
            raise ValueError(f"{self.id}: sample has no frame/segment pairs")
        if self.gt_masks is not None:
            if len(self.gt_masks) < n:
                raise ValueError(
                    f"{self.id}: {len(self.gt_masks)} gt masks for {n} frames"
                )
            if len(self.gt_masks) > n:
                warnings.append(
                    f"{self.id}: {len(self.gt_masks)} gt masks truncated to {n}"
                )
                self.gt_masks = self.gt_masks[:n]
        return warnings

    @property
    def n_frames(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class AgentEndpoint:
    """One chat-capable service: base URL plus the model name sent on the wire."""

    url: str
    model_id: str


@dataclass
class PipelineConfig:
    """Everything a run needs: variant, consistency flags, endpoints, thresholds."""

    variant: Variant = Variant.LITE
    audio_prompt_variants: list[int] = field(default_factory=lambda: [0, 1, 2])
    enable_prompt_consistency: bool = True
    enable_frame_consistency: bool = True
    enable_model_consistency: bool = False
    audio_describers: list[AgentEndpoint] = field(default_factory=list)
    visual_describer: AgentEndpoint | None = None
    multimodal_describer: AgentEndpoint | None = None
    translator: AgentEndpoint | None = None
    segmenter_url: str = ""
    box_threshold: float = 0.35
    text_threshold: float = 0.25
    detection_score_threshold: float = 0.3
    timeout_s: float = 60.0
    retries: int = 3
    max_inflight: int = 8

    @classmethod
    def defaults_for(cls, variant: Variant) -> "PipelineConfig":
        """Consistency flags each tier ships with; endpoints stay unset."""
        cfg = cls(variant=variant)
        if variant is Variant.LITE:
            cfg.enable_prompt_consistency = True
            cfg.enable_frame_consistency = True
            cfg.enable_model_consistency = False
        else:
            cfg.enable_prompt_consistency = True
            cfg.enable_frame_consistency = False
            cfg.enable_model_consistency = True
        return cfg

    def validate(self) -> None:
        if not self.audio_prompt_variants:
            raise ConfigError("at least one audio prompt variant is required")
        for thr_name in ("box_threshold", "text_threshold", "detection_score_threshold"):
            v = getattr(self, thr_name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{thr_name} must be in [0, 1], got {v}")
        if self.variant is Variant.LITE:
            if self.enable_model_consistency:
                raise ConfigError("lite variant cannot enable model consistency")
            if self.visual_describer is not None:
                raise ConfigError("lite variant does not use a visual describer")
        else:
            if not self.enable_model_consistency:
                raise ConfigError(f"{self.variant.value} variant requires model consistency")
        if self.variant is Variant.LARGE:
            distinct = {e.model_id for e in self.audio_describers}
            if len(distinct) < 2:
                raise ConfigError(
                    "large variant needs at least two distinct audio describer models, "
                    f"got {sorted(distinct)}"
                )

    def validate_endpoints(self) -> None:
        """Stricter check used right before a run: every required service is set."""
        self.validate()
        if not self.audio_describers:
            raise ConfigError("no audio describer endpoint configured")
        if self.translator is None:
            raise ConfigError("no translator endpoint configured")
        if not self.segmenter_url:
            raise ConfigError("no segmenter endpoint configured")
        if self.variant is not Variant.LITE and self.visual_describer is None:
            raise ConfigError(f"{self.variant.value} variant requires a visual describer")
