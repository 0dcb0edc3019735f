"""Prompt catalogs, translator request assembly, and reply parsing.

Every string sent to a media or translation agent is built here, byte-exactly,
so requests are reproducible and digest-stable. The five translator system
prompts live as plain-text fixtures under ``openavs/prompts/``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources

from openavs.errors import (
    MissingFrameError,
    MissingModalityError,
    NoAnswerTagsError,
    UnknownVariantError,
)
from openavs.model import (
    AgentKind,
    KnowledgeBank,
    PipelineConfig,
    SegmentationDirective,
)

# Fixed instruction catalog per media agent kind. Audio 0-2 are the sound-model
# prompts; audio 3 is the general one used by larger audio models.
AUDIO_PROMPTS = (
    "This is a sound of",
    "Generate metadata",
    "Generate audio caption",
    "Please describe the audio in detail",
)
VISUAL_PROMPTS = ("Please describe the image in detail",)
MULTIMODAL_PROMPTS = ("Please describe the audio and the image in detail",)

_CATALOG = {
    AgentKind.AUDIO_DESCRIBER: AUDIO_PROMPTS,
    AgentKind.VISUAL_DESCRIBER: VISUAL_PROMPTS,
    AgentKind.MULTIMODAL_DESCRIBER: MULTIMODAL_PROMPTS,
}

# Replies whose normalized answer text means "no sounding object".
SILENCE_SENTINELS = frozenset({"none", "silence", "no sound", "nothing", "n/a", ""})

_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_FRAME_RE = re.compile(r"<frame(\d+)>\n(.*?)\n</frame\1>", re.DOTALL)
_EXP_RE = re.compile(r"<exp(\d+)>(.*?)</exp\1>", re.DOTALL)

# Description text containing any of these would corrupt the tag structure.
_TAG_MARKERS = ("<answer>", "<frame", "<exp")


class TranslatorMode(Enum):
    BASIC = "basic"
    PROMPT_CONSISTENCY = "prompt"
    FRAME_CONSISTENCY = "frame"
    PROMPT_AND_FRAME = "prompt+frame"
    MODEL_CONSISTENCY = "model"


_FIXTURE_FILES = {
    TranslatorMode.BASIC: "basic.txt",
    TranslatorMode.PROMPT_CONSISTENCY: "prompt_consistency.txt",
    TranslatorMode.FRAME_CONSISTENCY: "frame_consistency.txt",
    TranslatorMode.PROMPT_AND_FRAME: "prompt_and_frame.txt",
    TranslatorMode.MODEL_CONSISTENCY: "model_consistency.txt",
}


@dataclass(frozen=True)
class AssembledRequest:
    """A ready-to-send translator call: system prompt, user input, frame coverage."""

    system_prompt: str
    user_input: str
    mode: TranslatorMode
    covered_frames: tuple[int, ...]


def media_prompt(kind: AgentKind, variant: int) -> str:
    """The exact catalog instruction for a media agent kind and variant index."""
    catalog = _CATALOG.get(kind)
    if catalog is None:
        raise UnknownVariantError(f"{kind.name} has no prompt catalog")
    if not 0 <= variant < len(catalog):
        raise UnknownVariantError(
            f"{kind.name} variant {variant} outside catalog of {len(catalog)}"
        )
    return catalog[variant]


@lru_cache(maxsize=None)
def translator_system_prompt(mode: TranslatorMode) -> str:
    """Fixture text for the mode, LF-normalized, without the file's final newline."""
    raw = (
        resources.files("openavs.prompts")
        .joinpath(_FIXTURE_FILES[mode])
        .read_text(encoding="utf-8")
    )
    text = raw.replace("\r\n", "\n")
    return text[:-1] if text.endswith("\n") else text


def select_mode(config: PipelineConfig) -> TranslatorMode:
    """Map consistency flags to a translator mode; model consistency dominates."""
    if config.enable_model_consistency:
        return TranslatorMode.MODEL_CONSISTENCY
    return {
        (False, False): TranslatorMode.BASIC,
        (True, False): TranslatorMode.PROMPT_CONSISTENCY,
        (False, True): TranslatorMode.FRAME_CONSISTENCY,
        (True, True): TranslatorMode.PROMPT_AND_FRAME,
    }[(config.enable_prompt_consistency, config.enable_frame_consistency)]


def _sanitize(text: str) -> str:
    # keep every description on one line; only newline runs are collapsed so
    # newline-free texts round-trip byte-exactly
    if "\n" in text:
        text = re.sub(r"[ \t]*\n[ \t]*", " ", text)
    if any(marker in text for marker in _TAG_MARKERS):
        return text.replace("<", "‹")
    return text


def frame_tagged_user_input(
    bank: KnowledgeBank, use_exp_tags: bool, n_frames: int | None = None
) -> str:
    """One ``<frameN>`` block per frame; with exp tags, one ``<expK>`` line per variant.

    ``n_frames`` defaults to the highest audio frame index in the bank plus one.
    """
    if n_frames is None:
        audio_frames = [d.frame_index for d in bank if d.agent_kind is AgentKind.AUDIO_DESCRIBER]
        n_frames = max(audio_frames) + 1 if audio_frames else 0
    blocks = []
    for i in range(n_frames):
        descs = bank.query(i, AgentKind.AUDIO_DESCRIBER)
        if not descs:
            raise MissingFrameError(f"no audio description for frame {i} of {n_frames}")
        if use_exp_tags:
            lines = [
                f" <exp{k}>{_sanitize(d.text)}</exp{k}>"
                for k, d in enumerate(descs, start=1)
            ]
        else:
            lines = [f" {_sanitize(descs[0].text)}"]
        blocks.append(f"<frame{i}>\n" + "\n".join(lines) + f"\n</frame{i}>")
    return "\n".join(blocks)


def model_consistency_user_input(bank: KnowledgeBank, frame_index: int) -> str:
    """Tag-free single-frame input: image agent lines, blank line, audio agent lines."""
    image_descs = bank.query(frame_index, AgentKind.VISUAL_DESCRIBER) + bank.query(
        frame_index, AgentKind.MULTIMODAL_DESCRIBER
    )
    audio_descs = bank.query(frame_index, AgentKind.AUDIO_DESCRIBER)
    if not image_descs or not audio_descs:
        raise MissingModalityError(
            f"frame {frame_index} has {len(image_descs)} image-side and "
            f"{len(audio_descs)} audio descriptions; both sides are required"
        )
    image_lines = [f"Image agent {j}: {_sanitize(d.text)}" for j, d in enumerate(image_descs)]
    audio_lines = [f"Audio agent {j}: {_sanitize(d.text)}" for j, d in enumerate(audio_descs)]
    return "\n".join(image_lines) + "\n\n" + "\n".join(audio_lines)


def assemble_clip_request(
    bank: KnowledgeBank,
    mode: TranslatorMode,
    n_frames: int | None = None,
) -> AssembledRequest:
    """The single whole-clip translator request used by frame-tagged modes."""
    if mode is TranslatorMode.MODEL_CONSISTENCY:
        raise ValueError("model consistency assembles per frame; use assemble_frame_request")
    use_exp = mode in (TranslatorMode.PROMPT_CONSISTENCY, TranslatorMode.PROMPT_AND_FRAME)
    user_input = frame_tagged_user_input(bank, use_exp, n_frames)
    covered = tuple(int(m.group(1)) for m in _FRAME_RE.finditer(user_input))
    return AssembledRequest(
        system_prompt=translator_system_prompt(mode),
        user_input=user_input,
        mode=mode,
        covered_frames=covered,
    )


def assemble_frame_request(bank: KnowledgeBank, frame_index: int) -> AssembledRequest:
    """The per-frame translator request used by model-consistency mode."""
    return AssembledRequest(
        system_prompt=translator_system_prompt(TranslatorMode.MODEL_CONSISTENCY),
        user_input=model_consistency_user_input(bank, frame_index),
        mode=TranslatorMode.MODEL_CONSISTENCY,
        covered_frames=(frame_index,),
    )


def _normalize_answer(span: str) -> str:
    s = span.strip().lower()
    if s.endswith("."):
        s = s[:-1].rstrip()
    return s


def _span_to_directive(span: str, video_id: str, frame_index: int) -> SegmentationDirective:
    if _normalize_answer(span) in SILENCE_SENTINELS:
        return SegmentationDirective(video_id, frame_index, (), silent=True)
    phrases = []
    for part in span.split(","):
        phrase = " ".join(part.split())
        if phrase:
            phrases.append(phrase)
    if not phrases:
        return SegmentationDirective(video_id, frame_index, (), silent=True)
    return SegmentationDirective(video_id, frame_index, tuple(phrases), silent=False)


def parse_frame_answers(
    reply: str, n_frames: int, video_id: str = ""
) -> tuple[list[SegmentationDirective], list[str]]:
    """Map answer spans to frames in order; pad by replicating the last span.

    Returns exactly ``n_frames`` directives plus any underflow/overflow warnings.
    """
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    spans = _ANSWER_RE.findall(reply)
    if not spans:
        raise NoAnswerTagsError("reply contains no <answer></answer> span")
    warnings = []
    directives = [
        _span_to_directive(span, video_id, j) for j, span in enumerate(spans[:n_frames])
    ]
    if len(spans) < n_frames:
        warnings.append(
            f"{len(spans)} answer spans for {n_frames} frames; last answer replicated"
        )
        last = directives[-1]
        for j in range(len(spans), n_frames):
            directives.append(
                SegmentationDirective(video_id, j, last.phrases, last.silent)
            )
    elif len(spans) > n_frames:
        warnings.append(
            f"{len(spans)} answer spans for {n_frames} frames; extras discarded"
        )
    return directives, warnings


def parse_final_answer(
    reply: str, video_id: str = "", frame_index: int = 0
) -> SegmentationDirective:
    """Single-line mode: the last answer span wins (reasoning may mention tags earlier)."""
    spans = _ANSWER_RE.findall(reply)
    if not spans:
        raise NoAnswerTagsError("reply contains no <answer></answer> span")
    return _span_to_directive(spans[-1], video_id, frame_index)


def extract_frame_texts(user_input: str) -> dict[int, list[str]]:
    """Invert frame-tagged assembly: frame index -> description texts in order.

    Used to verify that assembled inputs round-trip back to their descriptions.
    """
    out: dict[int, list[str]] = {}
    for m in _FRAME_RE.finditer(user_input):
        idx = int(m.group(1))
        inner = m.group(2)
        exps = _EXP_RE.findall(inner)
        if exps:
            out[idx] = [text for _, text in sorted(exps, key=lambda e: int(e[0]))]
        else:
            out[idx] = [line[1:] if line.startswith(" ") else line for line in inner.split("\n")]
    return out
