"""Decoding of chat media parts and mask PNG encoding for responses."""

from __future__ import annotations

import base64
import binascii
import io
import wave

import numpy as np
from PIL import Image, UnidentifiedImageError


class MediaDecodeError(Exception):
    """Media payload present but undecodable; maps to HTTP 422."""


def decode_image_part(part: dict) -> Image.Image:
    url = part.get("image_url", {}).get("url", "")
    prefix = "base64,"
    idx = url.find(prefix)
    raw = url[idx + len(prefix):] if idx >= 0 else url
    try:
        data = base64.b64decode(raw, validate=True)
        img = Image.open(io.BytesIO(data))
        img.load()
        return img.convert("RGB")
    except (binascii.Error, UnidentifiedImageError, OSError, ValueError) as e:
        raise MediaDecodeError(f"image part is not decodable: {e}") from e


def decode_audio_part(part: dict) -> tuple[np.ndarray, int]:
    """(mono float32 waveform in [-1, 1], sample rate) from a base64 WAV part."""
    payload = part.get("input_audio", {})
    try:
        data = base64.b64decode(payload.get("data", ""), validate=True)
        with wave.open(io.BytesIO(data), "rb") as wav:
            rate = wav.getframerate()
            n_channels = wav.getnchannels()
            width = wav.getsampwidth()
            frames = wav.readframes(wav.getnframes())
    except (binascii.Error, wave.Error, EOFError, ValueError) as e:
        raise MediaDecodeError(f"audio part is not a decodable WAV: {e}") from e
    if width == 2:
        samples = np.frombuffer(frames, dtype="<i2").astype(np.float32) / 32768.0
    elif width == 1:
        samples = (np.frombuffer(frames, dtype=np.uint8).astype(np.float32) - 128.0) / 128.0
    else:
        raise MediaDecodeError(f"unsupported WAV sample width {width}")
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return samples, rate


def decode_request_image(b64: str) -> Image.Image:
    try:
        data = base64.b64decode(b64, validate=True)
        img = Image.open(io.BytesIO(data))
        img.load()
        return img.convert("RGB")
    except (binascii.Error, UnidentifiedImageError, OSError, ValueError) as e:
        raise MediaDecodeError(f"image_png_b64 is not a decodable image: {e}") from e


def encode_mask_png(mask: np.ndarray) -> str:
    """Boolean/0-1 mask -> base64 of a single-channel {0,255} PNG."""
    img = Image.fromarray((mask.astype(np.uint8) * 255), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")
