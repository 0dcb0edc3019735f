"""End-to-end: the primary pipeline running against this gateway in stub mode."""

from pathlib import Path

from openavs.contract import make_test_png, make_test_wav
from openavs.model import AgentEndpoint, PipelineConfig, Variant, VideoSample
from openavs.orchestrator import run_pipeline


def write_clip(root: Path, n_frames: int = 3) -> VideoSample:
    frames, segments = [], []
    for i in range(n_frames):
        frame = root / f"f{i}.png"
        frame.write_bytes(make_test_png(64, 48, seed=i))
        frames.append(str(frame))
        wav = root / f"a{i}.wav"
        wav.write_bytes(make_test_wav(freq_hz=250.0 + 40 * i))
        segments.append(str(wav))
    return VideoSample("gateway-clip", frames, segments)


def test_lite_pipeline_over_stub_gateway(stub_gateway_url, tmp_path):
    sample = write_clip(tmp_path)
    cfg = PipelineConfig.defaults_for(Variant.LITE)
    cfg.audio_describers = [AgentEndpoint(stub_gateway_url, "stub-audio")]
    cfg.translator = AgentEndpoint(stub_gateway_url, "stub-llm")
    cfg.segmenter_url = stub_gateway_url
    cfg.timeout_s = 15.0
    cfg.retries = 0

    result = run_pipeline(sample, cfg)
    assert len(result.masks) == 3
    assert all(m.shape == (48, 64) for m in result.masks)
    assert all(not d.silent for d in result.directives)
    assert all(m.count() > 0 for m in result.masks)

    again = run_pipeline(sample, cfg)
    assert again.masks == result.masks
