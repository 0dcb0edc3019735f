"""Model backends: canned deterministic stubs and lazily loaded real checkpoints.

Real backends import torch/transformers only inside their load path, keep a
per-backend inference lock, and report 503 via NotReadyError until loaded.
Stub backends answer immediately from content digests, so the full protocol
surface is testable with no weights on disk.
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass
from enum import Enum

import numpy as np
from PIL import Image

from openavs_gateway.config import ChatRoute, SegmenterConfig

_FRAME_BLOCK_RE = re.compile(r"<frame(\d+)>\n(.*?)\n</frame\1>", re.DOTALL)

STUB_DETECTION_SCORE = 0.9


class NotReadyError(Exception):
    """Backend exists but its model is not loaded yet; maps to HTTP 503."""


class BackendState(Enum):
    STUB = "stub"
    UNLOADED = "unloaded"
    LOADING = "loading"
    READY = "ready"
    FAILED = "failed"


@dataclass
class ChatReply:
    text: str
    prompt_tokens: int | None = None  # None: gateway estimates and flags it
    completion_tokens: int | None = None


@dataclass
class RawDetection:
    phrase: str
    score: float
    box: tuple[float, float, float, float]
    mask: np.ndarray  # bool, HxW


def _digest(*chunks: bytes) -> str:
    h = hashlib.sha256()
    for chunk in chunks:
        h.update(chunk)
        h.update(b"\x00")
    return h.hexdigest()


class _LazyModel:
    """Background, one-shot model loading with a 503 window."""

    def __init__(self):
        self.state = BackendState.UNLOADED
        self._lock = threading.Lock()
        self._infer_lock = threading.Lock()
        self._error: str | None = None

    def _load(self) -> None:  # pragma: no cover - overridden
        raise NotImplementedError

    def _load_in_background(self) -> None:
        try:
            self._load()
        except Exception as e:  # noqa: BLE001 - any load failure must surface as 503
            self._error = f"{type(e).__name__}: {e}"
            self.state = BackendState.FAILED
        else:
            self.state = BackendState.READY

    def ensure_ready(self) -> None:
        if self.state is BackendState.READY:
            return
        with self._lock:
            if self.state is BackendState.UNLOADED:
                self.state = BackendState.LOADING
                threading.Thread(target=self._load_in_background, daemon=True).start()
        if self.state is not BackendState.READY:
            detail = f": {self._error}" if self._error else ""
            raise NotReadyError(f"model not loaded ({self.state.value}){detail}")


# -- chat backends -------------------------------------------------------------


class StubChatBackend:
    """Digest-derived captions and translator answers; deterministic, no models."""

    state = BackendState.STUB

    def __init__(self, kind: str):
        self.kind = kind

    def generate(self, text: str, images: list[bytes], audios: list[bytes]) -> ChatReply:
        token = _digest(text.encode(), *images, *audios)[:8]
        if audios and images:
            reply = f"a scene where object-{token} is making sound"
        elif audios:
            reply = f"a steady tone resembling object-{token}"
        elif images:
            reply = f"a scene containing object-{token}"
        else:
            blocks = _FRAME_BLOCK_RE.findall(text)
            if blocks:
                answers = [
                    f"<answer>object-{hashlib.sha256(inner.encode()).hexdigest()[:4]}</answer>"
                    for _, inner in blocks
                ]
                reply = "\n".join(answers)
            else:
                reply = f"<answer>object-{hashlib.sha256(text.encode()).hexdigest()[:4]}</answer>"
        return ChatReply(text=reply)


class HfAudioCaptioner(_LazyModel):
    """Audio-classification checkpoint phrased as a one-line caption."""

    def __init__(self, checkpoint: str, device: str = "cpu"):
        super().__init__()
        self.checkpoint = checkpoint
        self.device = device
        self._pipe = None

    def _load(self) -> None:
        from transformers import pipeline

        self._pipe = pipeline(
            "audio-classification", model=self.checkpoint, device=self.device
        )

    def generate_audio(self, waveform: np.ndarray, rate: int) -> ChatReply:
        self.ensure_ready()
        with self._infer_lock:
            scores = self._pipe({"raw": waveform, "sampling_rate": rate}, top_k=3)
        labels = ", ".join(s["label"].lower() for s in scores)
        return ChatReply(text=f"This is a sound of {labels}.")


class HfImageCaptioner(_LazyModel):
    def __init__(self, checkpoint: str, device: str = "cpu"):
        super().__init__()
        self.checkpoint = checkpoint
        self.device = device
        self._pipe = None

    def _load(self) -> None:
        from transformers import pipeline

        self._pipe = pipeline("image-to-text", model=self.checkpoint, device=self.device)

    def generate_image(self, image: Image.Image) -> ChatReply:
        self.ensure_ready()
        with self._infer_lock:
            out = self._pipe(image)
        text = out[0]["generated_text"].strip() if out else ""
        return ChatReply(text=text)


class HfTextGenerator(_LazyModel):
    def __init__(self, checkpoint: str, device: str = "cpu"):
        super().__init__()
        self.checkpoint = checkpoint
        self.device = device
        self._pipe = None

    def _load(self) -> None:
        from transformers import pipeline

        self._pipe = pipeline("text-generation", model=self.checkpoint, device=self.device)

    def generate_text(self, system: str, user: str) -> ChatReply:
        self.ensure_ready()
        prompt = f"{system}\n\n{user}\n" if system else user
        with self._infer_lock:
            out = self._pipe(prompt, max_new_tokens=256, do_sample=False, return_full_text=False)
        reply = out[0]["generated_text"]
        tokenizer = self._pipe.tokenizer
        return ChatReply(
            text=reply,
            prompt_tokens=len(tokenizer(prompt)["input_ids"]),
            completion_tokens=len(tokenizer(reply)["input_ids"]),
        )


# -- segmenter backends ----------------------------------------------------------


class StubSegmenter:
    """Phrase-digest rectangles with a fixed score, filtered by box_threshold."""

    state = BackendState.STUB

    def segment(
        self,
        image: Image.Image,
        phrases: list[str],
        box_threshold: float,
        text_threshold: float,
        separator: str,
    ) -> list[RawDetection]:
        width, height = image.size
        detections = []
        for phrase in phrases:
            if STUB_DETECTION_SCORE < box_threshold:
                continue
            h = int.from_bytes(hashlib.sha256(phrase.encode()).digest()[:8], "big")
            x0 = h % max(1, width // 2)
            y0 = (h >> 16) % max(1, height // 2)
            x1 = min(x0 + max(1, width // 4), width)
            y1 = min(y0 + max(1, height // 4), height)
            mask = np.zeros((height, width), dtype=bool)
            mask[y0:y1, x0:x1] = True
            detections.append(
                RawDetection(phrase, STUB_DETECTION_SCORE, (x0, y0, x1, y1), mask)
            )
        return detections


class RealSegmenter(_LazyModel):
    """Grounded open-vocabulary detector feeding box prompts to a mask predictor."""

    def __init__(self, config: SegmenterConfig):
        super().__init__()
        self.config = config
        self._detector = None
        self._detector_processor = None
        self._sam = None
        self._sam_processor = None

    def _load(self) -> None:
        import torch  # noqa: F401
        from transformers import (
            AutoModelForZeroShotObjectDetection,
            AutoProcessor,
            SamModel,
            SamProcessor,
        )

        device = self.config.device
        self._detector_processor = AutoProcessor.from_pretrained(self.config.detector_model)
        self._detector = AutoModelForZeroShotObjectDetection.from_pretrained(
            self.config.detector_model
        ).to(device)
        self._sam_processor = SamProcessor.from_pretrained(self.config.mask_model)
        self._sam = SamModel.from_pretrained(self.config.mask_model).to(device)

    def segment(
        self,
        image: Image.Image,
        phrases: list[str],
        box_threshold: float,
        text_threshold: float,
        separator: str,
    ) -> list[RawDetection]:
        self.ensure_ready()
        import torch

        query = separator.join(p.strip().lower() for p in phrases)
        if not query.endswith("."):
            query += "."
        device = self.config.device
        with self._infer_lock, torch.no_grad():
            inputs = self._detector_processor(
                images=image, text=query, return_tensors="pt"
            ).to(device)
            outputs = self._detector(**inputs)
            results = self._detector_processor.post_process_grounded_object_detection(
                outputs,
                inputs.input_ids,
                box_threshold=box_threshold,
                text_threshold=text_threshold,
                target_sizes=[image.size[::-1]],
            )[0]
            boxes = results["boxes"].cpu().tolist()
            scores = results["scores"].cpu().tolist()
            labels = results["labels"]
            if not boxes:
                return []
            sam_inputs = self._sam_processor(
                image, input_boxes=[boxes], return_tensors="pt"
            ).to(device)
            sam_out = self._sam(**sam_inputs)
            masks = self._sam_processor.image_processor.post_process_masks(
                sam_out.pred_masks.cpu(),
                sam_inputs["original_sizes"].cpu(),
                sam_inputs["reshaped_input_sizes"].cpu(),
            )[0]
            iou = sam_out.iou_scores.cpu()[0]

        detections = []
        for i, (box, score) in enumerate(zip(boxes, scores)):
            best = int(iou[i].argmax())
            mask = masks[i][best].numpy().astype(bool)
            label = labels[i] if i < len(labels) else query
            detections.append(
                RawDetection(str(label), float(score), tuple(float(v) for v in box), mask)
            )
        return detections


# -- registry --------------------------------------------------------------------


class BackendRegistry:
    """Owns exactly one backend per configured route, created up front."""

    def __init__(self, config):
        self.config = config
        self._chat: dict[str, object] = {}
        for model_id, route in config.chat_routes.items():
            self._chat[model_id] = self._build_chat_backend(route, config.device)
        if config.segmenter.backend == "stub":
            self.segmenter = StubSegmenter()
        else:
            self.segmenter = RealSegmenter(config.segmenter)

    @staticmethod
    def _build_chat_backend(route: ChatRoute, device: str):
        if route.backend == "stub":
            return StubChatBackend(route.kind)
        if route.kind == "audio":
            return HfAudioCaptioner(route.backend, device)
        if route.kind == "vision":
            return HfImageCaptioner(route.backend, device)
        if route.kind == "text":
            return HfTextGenerator(route.backend, device)
        raise ValueError(f"route kind {route.kind!r} has no real backend; use a stub")

    def chat_backend(self, model_id: str):
        return self._chat.get(model_id)

    def states(self) -> dict:
        return {
            "chat_routes": {
                model_id: backend.state.value for model_id, backend in self._chat.items()
            },
            "segmenter": self.segmenter.state.value,
        }
