"""Manifest-driven clip ingestion, mask image I/O, and prediction persistence."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from openavs.errors import DecodeError, ManifestError, MissingFileError, ShapeZeroError
from openavs.model import BinaryMask, VideoSample

MANIFEST_KEYS = ("id", "frames", "audio_segments")


def read_bytes(path: str | Path) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(str(p))
    return p.read_bytes()


def image_size(data: bytes) -> tuple[int, int]:
    """(height, width) of an encoded image."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            w, h = img.size
    except (UnidentifiedImageError, OSError) as e:
        raise DecodeError(f"cannot decode image: {e}") from e
    if w == 0 or h == 0:
        raise ShapeZeroError("image has zero pixels")
    return h, w


def decode_mask_png(data: bytes) -> np.ndarray:
    """Raw integer grid from a mask image: palette indices or gray levels.

    Binarization is the evaluation layer's job; this returns labels as stored.
    """
    try:
        with Image.open(io.BytesIO(data)) as img:
            if img.mode not in ("L", "P", "I", "I;16", "1"):
                img = img.convert("L")
            grid = np.asarray(img, dtype=np.int64)
    except (UnidentifiedImageError, OSError) as e:
        raise DecodeError(f"cannot decode mask image: {e}") from e
    if grid.ndim != 2 or grid.size == 0:
        raise ShapeZeroError(f"mask decoded to shape {grid.shape}")
    return grid


def load_mask(path: str | Path) -> np.ndarray:
    return decode_mask_png(read_bytes(path))


def encode_mask_png(mask: BinaryMask) -> bytes:
    """Single-channel PNG with 0/255 values."""
    img = Image.fromarray((mask.bits * 255).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(encode_mask_png(mask))


def save_overlay(
    frame_path: str | Path,
    mask: BinaryMask,
    out_path: str | Path,
    tint: tuple[int, int, int] = (255, 64, 64),
    alpha: float = 0.5,
) -> None:
    """Frame with the mask alpha-blended over it, foreground tinted, for eyeballing."""
    with Image.open(io.BytesIO(read_bytes(frame_path))) as img:
        frame = np.asarray(img.convert("RGB"), dtype=np.float64)
    if frame.shape[:2] != mask.shape:
        raise DecodeError(
            f"overlay frame {frame.shape[:2]} does not match mask {mask.shape}"
        )
    fg = mask.bits.astype(bool)
    blended = frame.copy()
    blended[fg] = (1.0 - alpha) * frame[fg] + alpha * np.array(tint, dtype=np.float64)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(blended.astype(np.uint8), mode="RGB").save(out, format="PNG")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ManifestError(message)


def load_manifest(path: str | Path) -> tuple[list[VideoSample], list[str]]:
    """Parse a manifest, resolve paths against its directory, verify files exist.

    Returns the normalized samples in listed order plus any repair warnings.
    """
    manifest_path = Path(path)
    if not manifest_path.is_file():
        raise MissingFileError(str(manifest_path))
    try:
        payload = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ManifestError(f"{manifest_path}: line {e.lineno}: {e.msg}") from e

    _require(isinstance(payload, dict), f"{manifest_path}: top level must be an object")
    _require("samples" in payload, f"{manifest_path}: missing 'samples'")
    _require(isinstance(payload["samples"], list), f"{manifest_path}: 'samples' must be a list")

    base = manifest_path.parent
    samples: list[VideoSample] = []
    warnings: list[str] = []
    for pos, entry in enumerate(payload["samples"]):
        ctx = f"{manifest_path}: samples[{pos}]"
        _require(isinstance(entry, dict), f"{ctx}: must be an object")
        for key in MANIFEST_KEYS:
            _require(key in entry, f"{ctx}: missing field '{key}'")

        def resolve(rels: list[str], fld: str) -> list[str]:
            _require(isinstance(rels, list) and rels, f"{ctx}: '{fld}' must be a nonempty list")
            out = []
            for rel in rels:
                p = base / rel
                if not p.is_file():
                    raise MissingFileError(f"{ctx}: {fld} path {p}")
                out.append(str(p))
            return out

        gt = entry.get("gt_masks")
        sample = VideoSample(
            id=str(entry["id"]),
            frames=resolve(entry["frames"], "frames"),
            audio_segments=resolve(entry["audio_segments"], "audio_segments"),
            gt_masks=resolve(gt, "gt_masks") if gt else None,
            clip_label=entry.get("clip_label"),
        )
        try:
            warnings.extend(sample.normalize())
        except ValueError as e:
            raise ManifestError(f"{ctx}: {e}") from e
        samples.append(sample)
    return samples, warnings


def dataset_name(path: str | Path) -> str:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return str(payload.get("dataset", ""))
    except (OSError, json.JSONDecodeError):
        return ""


def save_predictions(out_dir: str | Path, result) -> Path:
    """Write {out}/{video_id}/{frame:05}.png masks plus a result.json audit record."""
    video_dir = Path(out_dir) / result.video_id
    video_dir.mkdir(parents=True, exist_ok=True)
    for i, mask in enumerate(result.masks):
        save_mask(mask, video_dir / f"{i:05}.png")
    record = {
        "video_id": result.video_id,
        "directives": [
            {
                "frame_index": d.frame_index,
                "phrases": list(d.phrases),
                "silent": d.silent,
            }
            for d in result.directives
        ],
        "warnings": list(result.warnings),
        "usages": [
            {
                "model_id": u.model_id,
                "prompt_tokens": u.prompt_tokens,
                "completion_tokens": u.completion_tokens,
                "estimated": u.estimated,
            }
            for u in result.usages
        ],
        "bank": result.bank.to_json() if result.bank is not None else None,
    }
    (video_dir / "result.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return video_dir


def load_prediction_mask(out_dir: str | Path, video_id: str, frame_index: int) -> np.ndarray | None:
    p = Path(out_dir) / video_id / f"{frame_index:05}.png"
    if not p.is_file():
        return None
    return load_mask(p)


IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def convert_dataset_tree(root: str | Path, dataset: str = "") -> dict:
    """Build a manifest dict from a directory tree of clips.

    Expected layout per clip directory: frames/ (images), audio/ (wav files),
    optional gt_masks/ (images), optional label.txt. Paths in the returned
    manifest are relative to ``root`` so the manifest belongs beside the data.
    """
    root_path = Path(root)
    if not root_path.is_dir():
        raise MissingFileError(str(root_path))
    samples = []
    for clip_dir in sorted(p for p in root_path.iterdir() if p.is_dir()):
        frames = sorted(
            p for p in (clip_dir / "frames").glob("*") if p.suffix.lower() in IMAGE_SUFFIXES
        ) if (clip_dir / "frames").is_dir() else []
        audio = sorted((clip_dir / "audio").glob("*.wav")) if (clip_dir / "audio").is_dir() else []
        if not frames or not audio:
            continue
        masks = (
            sorted(
                p for p in (clip_dir / "gt_masks").glob("*") if p.suffix.lower() in IMAGE_SUFFIXES
            )
            if (clip_dir / "gt_masks").is_dir()
            else []
        )
        label_file = clip_dir / "label.txt"
        samples.append(
            {
                "id": clip_dir.name,
                "frames": [str(p.relative_to(root_path)) for p in frames],
                "audio_segments": [str(p.relative_to(root_path)) for p in audio],
                "gt_masks": [str(p.relative_to(root_path)) for p in masks] or None,
                "clip_label": label_file.read_text(encoding="utf-8").strip()
                if label_file.is_file()
                else None,
            }
        )
    return {"dataset": dataset or root_path.name, "samples": samples}
