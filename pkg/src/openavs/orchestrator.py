"""The perception -> understanding -> execution loop, per clip and per dataset.

Perception fans out one describer call per (frame, model, prompt variant) and
buffers the replies in the knowledge bank. Understanding issues one translator
call for the whole clip in frame-tagged modes, or one per frame under model
consistency. Execution turns each directive into a mask via the segmenter,
skipping frames the translator declared silent.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace

from openavs import dataio
from openavs.clients import ChatClient, SegmenterClient, TokenUsage
from openavs.costs import Ledger
from openavs.errors import NoAnswerTagsError, OpenAVSError
from openavs.model import (
    AgentKind,
    BinaryMask,
    KnowledgeBank,
    PipelineConfig,
    SegmentationDirective,
    Variant,
    VideoSample,
)
from openavs.prompting import (
    TranslatorMode,
    assemble_clip_request,
    assemble_frame_request,
    parse_final_answer,
    parse_frame_answers,
    select_mode,
)

logger = logging.getLogger(__name__)

REMINDER_LINE = "Remember to enclose each answer in <answer></answer> tags."


@dataclass
class PipelineResult:
    """Everything one clip run produced, in frame order."""

    video_id: str
    masks: list[BinaryMask]
    directives: list[SegmentationDirective]
    usages: list[TokenUsage]
    warnings: list[str]
    bank: KnowledgeBank | None = None


@dataclass
class ClipOutcome:
    video_id: str
    result: PipelineResult | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _gather(fn, keys, max_workers: int) -> list:
    """Run fn over keys concurrently; return results in key order, fail fast."""
    keys = list(keys)
    if not keys:
        return []
    results = {}
    with ThreadPoolExecutor(max_workers=max(1, min(max_workers, len(keys)))) as pool:
        futures = {pool.submit(fn, k): k for k in keys}
        try:
            for fut in as_completed(futures):
                results[futures[fut]] = fut.result()
        except BaseException:
            for fut in futures:
                fut.cancel()
            raise
    return [results[k] for k in keys]


def run_perception(
    sample: VideoSample, config: PipelineConfig, chat: ChatClient
) -> tuple[KnowledgeBank, list[TokenUsage]]:
    """Describe every frame with every configured (model, variant); freeze the bank."""
    bank = KnowledgeBank(sample.id)
    jobs: list[tuple[AgentKind, object, int, int]] = []
    for i in range(sample.n_frames):
        for endpoint in config.audio_describers:
            for variant in config.audio_prompt_variants:
                jobs.append((AgentKind.AUDIO_DESCRIBER, endpoint, variant, i))
        if config.variant is not Variant.LITE:
            jobs.append((AgentKind.VISUAL_DESCRIBER, config.visual_describer, 0, i))

    def describe_one(job):
        kind, endpoint, variant, i = job
        if kind is AgentKind.AUDIO_DESCRIBER:
            media = {"audio_wav": dataio.read_bytes(sample.audio_segments[i])}
        else:
            media = {"image_png": dataio.read_bytes(sample.frames[i])}
        return chat.describe(
            kind, endpoint, variant, video_id=sample.id, frame_index=i, **media
        )

    outputs = _gather(describe_one, jobs, config.max_inflight)
    keyed = sorted(outputs, key=lambda pair: pair[0].key)
    usages = []
    for description, usage in keyed:
        bank.insert(description)
        usages.append(usage)
    bank.freeze()
    return bank, usages


def _translate_parsed(chat, config, request, parse):
    """One translator call, with a single re-ask when the reply has no answer tags."""
    usages = []
    warnings = []
    reply, usage = chat.translate(request, config.translator)
    usages.append(usage)
    try:
        parsed = parse(reply)
    except NoAnswerTagsError:
        warnings.append(
            f"{request.mode.value} translator reply had no answer tags; re-asked once"
        )
        retry = replace(request, user_input=request.user_input + "\n" + REMINDER_LINE)
        reply, usage = chat.translate(retry, config.translator)
        usages.append(usage)
        parsed = parse(reply)  # a second miss aborts the clip
    return parsed, usages, warnings


def run_understanding(
    bank: KnowledgeBank,
    config: PipelineConfig,
    chat: ChatClient,
    n_frames: int,
    video_id: str,
) -> tuple[list[SegmentationDirective], list[TokenUsage], list[str]]:
    mode = select_mode(config)
    if mode is not TranslatorMode.MODEL_CONSISTENCY:
        request = assemble_clip_request(bank, mode, n_frames)
        (directives, parse_warnings), usages, warnings = _translate_parsed(
            chat, config, request, lambda reply: parse_frame_answers(reply, n_frames, video_id)
        )
        return directives, usages, warnings + parse_warnings

    def one_frame(i: int):
        request = assemble_frame_request(bank, i)
        return _translate_parsed(
            chat, config, request, lambda reply: parse_final_answer(reply, video_id, i)
        )

    directives, usages, warnings = [], [], []
    for directive, frame_usages, frame_warnings in _gather(
        one_frame, range(n_frames), config.max_inflight
    ):
        directives.append(directive)
        usages.extend(frame_usages)
        warnings.extend(frame_warnings)
    return directives, usages, warnings


def run_execution(
    directives: list[SegmentationDirective],
    sample: VideoSample,
    config: PipelineConfig,
    segmenter: SegmenterClient,
) -> tuple[list[BinaryMask], list[str]]:
    """Silent frames become all-zero masks; others get the union of detection masks."""
    if len(directives) != sample.n_frames:
        raise ValueError(
            f"{sample.id}: {len(directives)} directives for {sample.n_frames} frames"
        )

    def one_frame(i: int) -> tuple[BinaryMask, list[str]]:
        frame_bytes = dataio.read_bytes(sample.frames[i])
        height, width = dataio.image_size(frame_bytes)
        directive = directives[i]
        if directive.silent:
            return BinaryMask.zeros(height, width), []
        detections = segmenter.segment(frame_bytes, list(directive.phrases))
        if not detections:
            return (
                BinaryMask.zeros(height, width),
                [f"frame {i}: no detections for phrases {list(directive.phrases)}"],
            )
        mask = BinaryMask.zeros(height, width)
        for det in detections:
            mask = mask.union(det.mask)
        return mask, []

    masks, warnings = [], []
    for mask, frame_warnings in _gather(one_frame, range(sample.n_frames), config.max_inflight):
        masks.append(mask)
        warnings.extend(frame_warnings)
    return masks, warnings


def run_pipeline(
    sample: VideoSample,
    config: PipelineConfig,
    chat: ChatClient | None = None,
    segmenter: SegmenterClient | None = None,
    ledger: Ledger | None = None,
) -> PipelineResult:
    """All three stages over one normalized clip; partial results are never emitted."""
    config.validate_endpoints()
    warnings = sample.normalize()
    chat = chat or ChatClient(config)
    segmenter = segmenter or SegmenterClient(config)

    bank, perception_usages = run_perception(sample, config, chat)
    directives, understanding_usages, stage_warnings = run_understanding(
        bank, config, chat, sample.n_frames, sample.id
    )
    warnings.extend(stage_warnings)
    masks, exec_warnings = run_execution(directives, sample, config, segmenter)
    warnings.extend(exec_warnings)

    if ledger is not None:
        for usage in perception_usages:
            ledger.record(sample.id, "perception", usage)
        for usage in understanding_usages:
            ledger.record(sample.id, "understanding", usage)

    return PipelineResult(
        video_id=sample.id,
        masks=masks,
        directives=directives,
        usages=perception_usages + understanding_usages,
        warnings=warnings,
        bank=bank,
    )


def run_dataset(
    samples: list[VideoSample],
    config: PipelineConfig,
    out_dir: str | None = None,
    ledger: Ledger | None = None,
    workers: int = 1,
    overlays: bool = False,
    sleep=time.sleep,
) -> list[ClipOutcome]:
    """Fail fast per clip, continue per dataset; outcomes keep manifest order."""
    chat = ChatClient(config, sleep=sleep)
    segmenter = SegmenterClient(config, sleep=sleep)

    def one_clip(idx: int) -> ClipOutcome:
        sample = samples[idx]
        try:
            result = run_pipeline(sample, config, chat, segmenter, ledger)
        except (OpenAVSError, ValueError) as e:
            logger.warning("clip %s failed: %s", sample.id, e)
            return ClipOutcome(sample.id, error=f"{type(e).__name__}: {e}")
        if out_dir is not None:
            dataio.save_predictions(out_dir, result)
            if overlays:
                for i, mask in enumerate(result.masks):
                    dataio.save_overlay(
                        sample.frames[i],
                        mask,
                        f"{out_dir}/{sample.id}/overlay_{i:05}.png",
                    )
        return ClipOutcome(sample.id, result=result)

    return _gather(one_clip, range(len(samples)), workers)
