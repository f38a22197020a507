"""Multichannel WAV and JSON configuration I/O.

Audio travels as float64 in [-1, 1]; integer PCM is normalized on read by
the full-scale convention (int16 / 32768, 24-bit left-justified int32 /
2^31) and float32 passes through losslessly in both directions.  Scenario
and separator files are JSON documents validated against schemas shipped
with the package; violations are reported with their JSON path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np
from scipy.io import wavfile

from .roomsim import ArrayGeometry, Room, Scenario, place_noise_sources
from .separators import SeparatorConfig


class UnsupportedWavFormat(ValueError):
    """WAV codec outside PCM16 / PCM24 / IEEE float32."""


class CorruptWavFile(ValueError):
    """File that cannot be parsed as RIFF/WAV."""


class ConfigError(ValueError):
    """JSON configuration rejected, with JSON-path context."""


_PCM16_SCALE = 32768.0
_PCM32_SCALE = float(2**31)  # 24-bit samples arrive left-justified in int32


@dataclass
class AudioBuffer:
    """Multichannel audio: ``samples`` is (n_channels, n_samples) float64."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if samples.ndim != 2:
            raise ValueError("samples must be a 1-D or (channels, samples) array")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        self.samples = samples

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.samples.shape[1] / float(self.sample_rate)


@dataclass
class WriteInfo:
    """Metadata from a write: how many samples hit the integer rails."""

    clipped_samples: int = 0


def read_wav(path) -> AudioBuffer:
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise CorruptWavFile(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data / _PCM16_SCALE
    elif data.dtype == np.int32:
        samples = data / _PCM32_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedWavFormat(f"{path}: unsupported sample format {data.dtype}")
    if samples.ndim == 1:
        samples = samples[None, :]
    else:
        samples = samples.T
    return AudioBuffer(np.ascontiguousarray(samples), int(rate))


def write_wav(buffer: AudioBuffer, path, fmt: str = "float32") -> WriteInfo:
    """Write a buffer as float32 (lossless round trip) or pcm16.

    pcm16 scales by 32768 and rounds halves away from zero; out-of-range
    samples are clamped to the rails and counted in the returned metadata.
    """
    x = buffer.samples.T  # (n_samples, n_channels)
    if x.shape[1] == 1:
        x = x[:, 0]
    clipped = 0
    if fmt == "float32":
        data = np.ascontiguousarray(x.astype(np.float32))
    elif fmt == "pcm16":
        scaled = x * _PCM16_SCALE
        rounded = np.trunc(scaled + np.copysign(0.5, scaled))
        clipped = int(np.count_nonzero((rounded > 32767.0) | (rounded < -32768.0)))
        data = np.ascontiguousarray(np.clip(rounded, -32768.0, 32767.0).astype(np.int16))
    else:
        raise UnsupportedWavFormat(f"unsupported write format {fmt!r}")
    try:
        wavfile.write(path, buffer.sample_rate, data)
    except OSError as exc:
        raise CorruptWavFile(f"{path}: {exc}") from exc
    return WriteInfo(clipped_samples=clipped)


def _validate(doc, schema_name: str, context: str) -> None:
    schema = json.loads(
        resources.files("ivastream.schemas").joinpath(schema_name).read_text()
    )
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: e.json_path)
    if errors:
        err = errors[0]
        raise ConfigError(f"{context}: {err.json_path}: {err.message}")


def _load_validated(path, schema_name: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    _validate(doc, schema_name, str(path))
    return doc


def load_scenario(path) -> Scenario:
    """Build a fully validated Scenario from a JSON scene file.

    The room takes either a target reverberation time (``t60``) or explicit
    wall reflections; the array is either a planar grid or explicit
    positions; point noises are either placed by seed under the placement
    constraints or given explicitly.
    """
    doc = _load_validated(path, "scenario.schema.json")
    r = doc["room"]
    sample_rate = int(r.get("sample_rate", 16000))
    if "t60" in r:
        room = Room.from_t60(r["dimensions"], r["t60"], sample_rate)
        if "max_image_order" in r:
            room = Room(room.dimensions, room.reflection, sample_rate, r["max_image_order"])
    else:
        room = Room(r["dimensions"], r["reflection"], sample_rate, r.get("max_image_order"))

    a = doc["array"]
    if "positions" in a:
        array = ArrayGeometry(np.asarray(a["positions"], dtype=float))
    else:
        array = ArrayGeometry.grid(
            a["rows"], a["cols"], a["spacing"], tuple(a["center_xy"]), a["z"]
        )

    noise = doc.get("noise")
    if noise is None:
        noise_positions = np.zeros((0, 3))
    elif "positions" in noise:
        noise_positions = np.asarray(noise["positions"], dtype=float).reshape(-1, 3)
    else:
        noise_positions = place_noise_sources(room, noise["count"], noise.get("seed", 0))

    try:
        return Scenario(
            room=room,
            array=array,
            source_positions=np.asarray(doc["sources"], dtype=float),
            noise_positions=noise_positions,
            isir_db=float(doc.get("isir_db", 0.0)),
            isnr_db=None if doc.get("isnr_db", 20.0) is None else float(doc.get("isnr_db", 20.0)),
            white_exponent=float(doc.get("white_exponent", -0.75)),
            seed=int(doc.get("seed", 0)),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_separator_config(path, overrides: dict | None = None) -> SeparatorConfig:
    """Build a validated SeparatorConfig; domain constraints (channel
    bounds, the biiva factor product) are reported as load errors.

    ``overrides`` merges extra key/value pairs over the file contents (the
    CLI's precedence: flags beat the file, the file beats defaults); the
    merged document is re-validated.
    """
    doc = _load_validated(path, "separator.schema.json")
    if overrides:
        doc = {**doc, **{k: v for k, v in overrides.items() if v is not None}}
        _validate(doc, "separator.schema.json", f"{path} (with overrides)")
    try:
        return SeparatorConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
