"""ERS1 session container.

Layout (little-endian throughout)::

    b"ERS1"  u16 version  u32 header_len  header (UTF-8 JSON)  samples

``samples`` is float32, frame-major: all channels of sample 0, then all
channels of sample 1, and so on. The JSON header holds the sample rate,
channel names, triggers and, in a separate ``manifest`` key, the ground
truth labels.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .core import EegRecording, SessionManifest, TriggerCode, TriggerEvent, validate_recording
from .errors import (
    BadMagicError,
    DataError,
    DecodeError,
    PathError,
    SampleCountMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)

MAGIC = b"ERS1"
VERSION = 1
_PREAMBLE = struct.Struct("<4sHI")


def _header(rec: EegRecording, manifest: Optional[SessionManifest]) -> dict:
    return {
        "sample_rate_hz": rec.sample_rate_hz,
        "n_channels": rec.n_channels,
        "n_samples": rec.n_samples,
        "channel_names": list(rec.channel_names),
        "triggers": [[t.sample_index, t.code.value] for t in rec.triggers],
        "manifest": None if manifest is None else manifest.to_dict(),
    }


def encode_recording(rec: EegRecording, manifest: Optional[SessionManifest] = None) -> bytes:
    header = json.dumps(_header(rec, manifest), sort_keys=True, separators=(",", ":")).encode("utf-8")
    frames = np.ascontiguousarray(rec.samples.T, dtype="<f4")
    return _PREAMBLE.pack(MAGIC, VERSION, len(header)) + header + frames.tobytes()


def decode_recording(blob: bytes) -> tuple[EegRecording, Optional[SessionManifest]]:
    if len(blob) < _PREAMBLE.size:
        raise TruncatedPayloadError(f"file holds {len(blob)} bytes, shorter than the preamble")
    magic, version, header_len = _PREAMBLE.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported ERS1 version {version}, expected {VERSION}")
    body_start = _PREAMBLE.size + header_len
    if len(blob) < body_start:
        raise TruncatedPayloadError(f"header declares {header_len} bytes but file ends early")
    try:
        header = json.loads(blob[_PREAMBLE.size:body_start].decode("utf-8"))
        n_channels = int(header["n_channels"])
        n_samples = int(header["n_samples"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DecodeError(f"unreadable header: {exc}") from exc

    payload = memoryview(blob)[body_start:]
    frame_bytes = 4 * n_channels
    expected = frame_bytes * n_samples
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"header declares {n_samples} samples but payload holds "
            f"{len(payload) // max(frame_bytes, 1)} frames"
        )
    if len(payload) > expected:
        raise SampleCountMismatchError(
            f"header declares {n_samples} samples but payload holds {len(payload)} bytes "
            f"({len(payload) / max(frame_bytes, 1):g} frames)"
        )
    frames = np.frombuffer(payload, dtype="<f4").reshape(n_samples, n_channels)
    try:
        rec = EegRecording(
            samples=frames.T.astype(np.float32),
            sample_rate_hz=header["sample_rate_hz"],
            channel_names=tuple(header["channel_names"]),
            triggers=tuple(TriggerEvent(int(i), TriggerCode(code)) for i, code in header["triggers"]),
        )
        manifest = None if header.get("manifest") is None else SessionManifest.from_dict(header["manifest"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError(f"inconsistent header: {exc}") from exc
    check = validate_recording(rec)
    if not check.ok:
        raise DecodeError("decoded recording is invalid: " + ", ".join(v.invariant for v in check.violations))
    return rec, manifest


def write_recording(path, rec: EegRecording, manifest: Optional[SessionManifest] = None) -> Path:
    path = Path(path)
    try:
        path.write_bytes(encode_recording(rec, manifest))
    except OSError as exc:
        raise PathError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def read_recording(path) -> tuple[EegRecording, Optional[SessionManifest]]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise PathError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return decode_recording(blob)
    except DataError as exc:
        raise type(exc)(f"{os.fspath(path)}: {exc}") from exc
