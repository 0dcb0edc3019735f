"""Shared fixtures: a live derived-mode mock server, clip factories, configs."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from openavs.contract import make_test_wav
from openavs.mockserver import MockAgentServer, MockMode
from openavs.model import AgentEndpoint, PipelineConfig, Variant


@pytest.fixture(scope="session")
def derived_server():
    with MockAgentServer(MockMode.DERIVED) as server:
        yield server


@pytest.fixture()
def mock_calls(derived_server):
    derived_server.calls.reset()
    return derived_server.calls


def solid_png(width: int, height: int, rgb: tuple[int, int, int]) -> bytes:
    img = Image.new("RGB", (width, height), rgb)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def write_clip(
    root: Path,
    clip_id: str,
    n_frames: int = 5,
    size: tuple[int, int] = (48, 32),
    seed: int = 7,
) -> dict:
    """Write PNG frames + WAV segments for one clip; return manifest entry."""
    clip_dir = root / clip_id
    clip_dir.mkdir(parents=True, exist_ok=True)
    width, height = size
    frames, segments = [], []
    for i in range(n_frames):
        rgb = ((37 * (seed + i)) % 256, (91 * (seed + i)) % 256, (53 * (seed + i)) % 256)
        frame = clip_dir / f"frame_{i}.png"
        frame.write_bytes(solid_png(width, height, rgb))
        frames.append(str(frame.relative_to(root)))
        seg = clip_dir / f"audio_{i}.wav"
        seg.write_bytes(make_test_wav(freq_hz=200.0 + 50.0 * (seed + i)))
        segments.append(str(seg.relative_to(root)))
    return {
        "id": clip_id,
        "frames": frames,
        "audio_segments": segments,
        "gt_masks": None,
        "clip_label": None,
    }


def make_config(
    url: str,
    variant: Variant = Variant.LITE,
    audio_models: list[str] | None = None,
    audio_variants: list[int] | None = None,
    **overrides,
) -> PipelineConfig:
    cfg = PipelineConfig.defaults_for(variant)
    cfg.audio_describers = [
        AgentEndpoint(url=url, model_id=m) for m in (audio_models or ["mock-audio"])
    ]
    if variant is not Variant.LITE:
        cfg.visual_describer = AgentEndpoint(url=url, model_id="mock-visual")
    cfg.translator = AgentEndpoint(url=url, model_id="mock-llm")
    cfg.segmenter_url = url
    cfg.audio_prompt_variants = audio_variants if audio_variants is not None else [0, 1, 2]
    cfg.timeout_s = 10.0
    cfg.retries = 0
    for key, value in overrides.items():
        setattr(cfg, key, value)
    cfg.validate_endpoints()
    return cfg


def mask_from_rows(rows) -> "np.ndarray":
    return np.array(rows, dtype=np.uint8)


# one pass/fail line per acceptance criterion at the end of the run
def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" in nodeid and report.when == "call":
                name = nodeid.split("::")[-1]
                verdict = "PASS" if status == "passed" else "FAIL"
                lines.append(f"{verdict}  {name}")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
