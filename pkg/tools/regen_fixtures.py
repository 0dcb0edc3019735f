"""Regenerate the committed test fixtures: 3 clips, a manifest, golden masks.

Run from the repo root:  python tools/regen_fixtures.py
Everything is seeded; reruns produce byte-identical files with the same
Pillow version. Goldens come from a derived-mode mock run, so they only
change if the mock rules or the pipeline's request assembly change.
"""

from __future__ import annotations

import io
import json
import shutil
import sys
from pathlib import Path

import numpy as np
from PIL import Image

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from openavs.contract import make_test_wav  # noqa: E402
from openavs.dataio import load_manifest, save_mask  # noqa: E402
from openavs.mockserver import MockAgentServer, MockMode  # noqa: E402
from openavs.model import AgentEndpoint, PipelineConfig, Variant  # noqa: E402
from openavs.orchestrator import run_dataset  # noqa: E402

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
WIDTH, HEIGHT = 64, 48
N_FRAMES = 5
CLIPS = ("clip_drums", "clip_voices", "clip_machines")


def frame_pixels(clip_index: int, frame_index: int) -> np.ndarray:
    rng = np.random.default_rng(1000 * clip_index + frame_index)
    base = rng.integers(0, 60, size=(HEIGHT, WIDTH, 3), dtype=np.uint8)
    x = 8 + 6 * frame_index
    y = 6 + 4 * clip_index
    color = [(220, 80, 60), (70, 200, 90), (90, 110, 230)][clip_index]
    base[y : y + 16, x : x + 20] = color
    return base


def write_png(pixels: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
    path.write_bytes(buf.getvalue())


def gt_grid(clip_index: int, frame_index: int) -> np.ndarray | None:
    if clip_index == 2:
        return None
    grid = np.zeros((HEIGHT, WIDTH), dtype=np.uint8)
    x = 10 + 5 * frame_index
    y = 8 + 3 * clip_index
    if clip_index == 0:
        grid[y : y + 12, x : x + 18] = 255  # plain binary gt
    else:
        grid[y : y + 10, x : x + 10] = 2  # semantic labels needing binarization
        grid[y + 2 : y + 6, x + 12 : x + 20] = 3
    return grid


def write_clips() -> Path:
    clips_dir = FIXTURES / "clips"
    if clips_dir.exists():
        shutil.rmtree(clips_dir)
    samples = []
    for c, clip_id in enumerate(CLIPS):
        frames, segments, gts = [], [], []
        for i in range(N_FRAMES):
            frame_rel = f"{clip_id}/frames/{i}.png"
            write_png(frame_pixels(c, i), clips_dir / frame_rel)
            frames.append(frame_rel)
            wav_rel = f"{clip_id}/audio/{i}.wav"
            wav_path = clips_dir / wav_rel
            wav_path.parent.mkdir(parents=True, exist_ok=True)
            wav_path.write_bytes(make_test_wav(freq_hz=180.0 + 120.0 * c + 35.0 * i))
            segments.append(wav_rel)
            grid = gt_grid(c, i)
            if grid is not None:
                gt_rel = f"{clip_id}/gt_masks/{i}.png"
                gt_path = clips_dir / gt_rel
                gt_path.parent.mkdir(parents=True, exist_ok=True)
                buf = io.BytesIO()
                Image.fromarray(grid, mode="L").save(buf, format="PNG")
                gt_path.write_bytes(buf.getvalue())
                gts.append(gt_rel)
        samples.append(
            {
                "id": clip_id,
                "frames": frames,
                "audio_segments": segments,
                "gt_masks": gts or None,
                "clip_label": ["tabla", "baby_woman", None][c],
            }
        )
    manifest = clips_dir / "manifest.json"
    manifest.write_text(
        json.dumps({"dataset": "fixture3", "samples": samples}, indent=2) + "\n",
        encoding="utf-8",
    )
    return manifest


def variant_config(url: str, variant: Variant) -> PipelineConfig:
    cfg = PipelineConfig.defaults_for(variant)
    models = ["mock-audio-a", "mock-audio-b"] if variant is Variant.LARGE else ["mock-audio-a"]
    cfg.audio_describers = [AgentEndpoint(url, m) for m in models]
    if variant is not Variant.LITE:
        cfg.visual_describer = AgentEndpoint(url, "mock-visual")
    cfg.translator = AgentEndpoint(url, "mock-llm")
    cfg.segmenter_url = url
    cfg.timeout_s = 15.0
    cfg.retries = 0
    cfg.validate_endpoints()
    return cfg


def write_goldens(manifest: Path) -> None:
    golden_root = FIXTURES / "golden"
    if golden_root.exists():
        shutil.rmtree(golden_root)
    with MockAgentServer(MockMode.DERIVED) as server:
        for variant in Variant:
            samples, _ = load_manifest(manifest)
            cfg = variant_config(server.url, variant)
            outcomes = run_dataset(samples, cfg, workers=1)
            for outcome in outcomes:
                assert outcome.ok, f"{variant}: {outcome.error}"
                for i, mask in enumerate(outcome.result.masks):
                    save_mask(
                        mask,
                        golden_root / variant.value / outcome.video_id / f"{i:05}.png",
                    )
    print(f"goldens written under {golden_root}")


if __name__ == "__main__":
    manifest_path = write_clips()
    print(f"clips + manifest written under {FIXTURES / 'clips'}")
    write_goldens(manifest_path)
