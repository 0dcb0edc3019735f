"""Config-file loading and override layering for runs.

Precedence: CLI flags beat config-file values beat built-in defaults. The
bearer token is never read from the file; it comes from the environment only.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path

from openavs.costs import PriceTable
from openavs.errors import ConfigError
from openavs.model import AgentEndpoint, PipelineConfig, Variant

DEFAULT_WORKERS_CAP = 8


def default_workers() -> int:
    return min(os.cpu_count() or 1, DEFAULT_WORKERS_CAP)


@dataclass
class LoadedConfig:
    pipeline: PipelineConfig
    prices: PriceTable
    workers: int


def load_config_file(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        payload = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: line {e.lineno}: {e.msg}") from e
    if not isinstance(payload, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return payload


def _endpoint_list(urls, models, section: str) -> list[AgentEndpoint]:
    if isinstance(urls, str):
        urls = [urls] * len(models)
    if len(urls) != len(models):
        raise ConfigError(
            f"endpoints.{section}: {len(urls)} URLs for {len(models)} models"
        )
    return [AgentEndpoint(url=u, model_id=m) for u, m in zip(urls, models)]


def build_config(
    payload: dict | None = None,
    *,
    variant: str | None = None,
    prompt_consistency: bool | None = None,
    frame_consistency: bool | None = None,
    endpoint_override: str | None = None,
    workers: int | None = None,
) -> LoadedConfig:
    """Materialize a runnable config from file payload plus CLI overrides."""
    payload = payload or {}

    variant_name = variant or payload.get("variant", Variant.LITE.value)
    try:
        tier = Variant(variant_name)
    except ValueError:
        raise ConfigError(
            f"unknown variant {variant_name!r}; expected one of "
            f"{[v.value for v in Variant]}"
        ) from None

    cfg = PipelineConfig.defaults_for(tier)

    prompts = payload.get("prompts", {})
    cfg.audio_prompt_variants = list(prompts.get("audio_variants", cfg.audio_prompt_variants))
    if "prompt_consistency" in prompts:
        cfg.enable_prompt_consistency = bool(prompts["prompt_consistency"])
    if "frame_consistency" in prompts:
        cfg.enable_frame_consistency = bool(prompts["frame_consistency"])
    if "model_consistency" in prompts:
        cfg.enable_model_consistency = bool(prompts["model_consistency"])
    if prompt_consistency is not None:
        cfg.enable_prompt_consistency = prompt_consistency
    if frame_consistency is not None:
        cfg.enable_frame_consistency = frame_consistency

    endpoints = payload.get("endpoints", {})
    models = payload.get("models", {})
    audio_models = models.get("audio", [])
    if isinstance(audio_models, str):
        audio_models = [audio_models]
    audio_urls = endpoint_override or endpoints.get("audio", "")
    if audio_models:
        cfg.audio_describers = _endpoint_list(audio_urls, audio_models, "audio")
    # the lite tier never uses the visual describer, even when the file lists one
    visual_url = endpoint_override or endpoints.get("visual")
    if visual_url and models.get("visual") and tier is not Variant.LITE:
        cfg.visual_describer = AgentEndpoint(url=visual_url, model_id=models["visual"])
    translator_url = endpoint_override or endpoints.get("translator")
    if translator_url and models.get("translator"):
        cfg.translator = AgentEndpoint(url=translator_url, model_id=models["translator"])
    cfg.segmenter_url = endpoint_override or endpoints.get("segmenter", "")

    thresholds = payload.get("thresholds", {})
    cfg.box_threshold = float(thresholds.get("box", cfg.box_threshold))
    cfg.text_threshold = float(thresholds.get("text", cfg.text_threshold))
    cfg.detection_score_threshold = float(
        thresholds.get("detection_score", cfg.detection_score_threshold)
    )

    runtime = payload.get("runtime", {})
    cfg.timeout_s = float(runtime.get("timeout_s", cfg.timeout_s))
    cfg.retries = int(runtime.get("retries", cfg.retries))
    cfg.max_inflight = int(runtime.get("max_inflight", cfg.max_inflight))

    cfg.validate()

    prices = PriceTable.default()
    describer_models = [e.model_id for e in cfg.audio_describers]
    if cfg.visual_describer:
        describer_models.append(cfg.visual_describer.model_id)
    if cfg.multimodal_describer:
        describer_models.append(cfg.multimodal_describer.model_id)
    prices = prices.with_free_models(describer_models)
    for model_id, rates in payload.get("pricing", {}).items():
        try:
            prices.set(
                model_id,
                Decimal(str(rates["input_per_1m"])),
                Decimal(str(rates["output_per_1m"])),
            )
        except (KeyError, TypeError, InvalidOperation) as e:
            raise ConfigError(f"pricing.{model_id}: {e}") from e

    effective_workers = workers or int(runtime.get("workers", 0)) or default_workers()
    return LoadedConfig(pipeline=cfg, prices=prices, workers=effective_workers)
