"""Audio loading, MFCC extraction and the binary feature cache."""

from __future__ import annotations

import csv
import os
import struct
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import scipy.fft
from scipy.io import wavfile

from .errors import AudioLoadError, CacheError, ConfigError, FeatureError


@dataclass
class AudioClip:
    samples: np.ndarray  # mono, float64 in [-1, 1]
    sample_rate: int
    source_path: str = ""

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MfccMatrix:
    frames: np.ndarray  # (T, D) float32
    clip_id: str
    frame_ms: float = 40.0
    hop_ms: float = 20.0

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class FeatureConfig:
    sample_rate: int = 16000
    frame_ms: float = 40.0
    hop_ms: float = 20.0
    n_mels: int = 40
    n_mfcc: int = 28
    log_floor: float = 1e-10
    clip_seconds: float = 10.0

    def __post_init__(self):
        if self.n_mfcc > self.n_mels:
            raise ConfigError(f"n_mfcc ({self.n_mfcc}) cannot exceed n_mels ({self.n_mels})")
        if self.frame_ms <= 0 or self.hop_ms <= 0:
            raise ConfigError("frame_ms and hop_ms must be positive")

    def frame_length(self, sample_rate: Optional[int] = None) -> int:
        return int(round((sample_rate or self.sample_rate) * self.frame_ms / 1000.0))

    def hop_length(self, sample_rate: Optional[int] = None) -> int:
        return int(round((sample_rate or self.sample_rate) * self.hop_ms / 1000.0))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown feature config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# WAV input


def load_wav(path) -> AudioClip:
    """Read a PCM16 or IEEE-float32 RIFF/WAVE file as a mono clip in [-1, 1]."""
    path = str(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except ValueError as exc:
        msg = str(exc)
        if "ata" in msg and ("size" in msg or "Unexpected end" in msg or "reached" in msg):
            raise OSError(f"{path}: truncated WAV file ({msg})") from exc
        raise AudioLoadError(f"{path}: unsupported WAV encoding ({msg})") from exc
    except (EOFError, struct.error) as exc:
        raise OSError(f"{path}: truncated WAV file ({exc})") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioLoadError(
            f"{path}: unsupported WAV sample format {data.dtype} "
            f"(fmt chunk: {data.dtype.itemsize * 8}-bit, {'float' if data.dtype.kind == 'f' else 'integer'}); "
            "expected PCM 16-bit or IEEE float 32-bit"
        )
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioClip(np.clip(samples, -1.0, 1.0), int(rate), path)


def write_wav(path, samples: np.ndarray, sample_rate: int, float32: bool = False) -> None:
    """Write mono or (n, channels) samples in [-1, 1] as PCM16 or float32."""
    samples = np.asarray(samples)
    if float32:
        wavfile.write(str(path), sample_rate, samples.astype(np.float32))
    else:
        pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16)
        wavfile.write(str(path), sample_rate, pcm)


def conform_duration(clip: AudioClip, seconds: float, tolerance: int):
    """Zero-pad or truncate ``clip`` to ``seconds`` unless already within
    ``tolerance`` samples. Returns the clip and a note (None when unchanged)."""
    target = int(round(seconds * clip.sample_rate))
    n = len(clip.samples)
    if abs(n - target) <= tolerance:
        return clip, None
    if n < target:
        samples = np.concatenate([clip.samples, np.zeros(target - n)])
        note = f"padded {n} -> {target} samples"
    else:
        samples = clip.samples[:target]
        note = f"truncated {n} -> {target} samples"
    return AudioClip(samples, clip.sample_rate, clip.source_path), note


# ---------------------------------------------------------------------------
# MFCC pipeline


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers(n_mels: int, sample_rate: int) -> np.ndarray:
    """Centre frequencies (Hz) of the triangular filters spanning 0 Hz to Nyquist."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """(n_mels, n_fft // 2 + 1) triangular filters, peak 1 at each band centre."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lower) / (centre - lower)
    falling = (upper - bins) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_signal(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n = frame_count(len(samples), frame_len, hop)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return samples[idx]


def power_spectrum(frames: np.ndarray) -> np.ndarray:
    """Hamming-windowed |FFT|^2, frames zero-padded to the next power of two."""
    n_fft = next_pow2(frames.shape[1])
    windowed = frames * np.hamming(frames.shape[1])
    return np.abs(np.fft.rfft(windowed, n=n_fft, axis=1)) ** 2


def log_mel_energies(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    """(T, n_mels) log mel-band energies with the configured floor."""
    frame_len, hop = cfg.frame_length(clip.sample_rate), cfg.hop_length(clip.sample_rate)
    if len(clip.samples) < frame_len:
        raise FeatureError(
            f"{clip.source_path or 'clip'}: {len(clip.samples)} samples is shorter than one "
            f"{frame_len}-sample frame"
        )
    spec = power_spectrum(frame_signal(np.asarray(clip.samples, dtype=np.float64), frame_len, hop))
    fb = mel_filterbank(cfg.n_mels, next_pow2(frame_len), clip.sample_rate)
    return np.log(np.maximum(spec @ fb.T, cfg.log_floor))


def dct2_ortho(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return scipy.fft.dct(x, type=2, norm="ortho", axis=axis)


def extract_mfcc(clip: AudioClip, cfg: Optional[FeatureConfig] = None, clip_id: Optional[str] = None) -> MfccMatrix:
    cfg = cfg or FeatureConfig()
    coeffs = dct2_ortho(log_mel_energies(clip, cfg), axis=1)[:, : cfg.n_mfcc]
    return MfccMatrix(coeffs.astype(np.float32), clip_id if clip_id is not None else clip.source_path,
                      cfg.frame_ms, cfg.hop_ms)


# ---------------------------------------------------------------------------
# feature cache
#
# "MFC1" | u32 version | u32 count | per clip: u32 id_len, utf-8 id, u32 T,
# u32 D, T*D little-endian f32 row-major

CACHE_MAGIC = b"MFC1"
CACHE_VERSION = 1


def write_cache(path, matrices: Iterable[MfccMatrix]) -> None:
    matrices = list(matrices)
    if not matrices:
        raise CacheError("refusing to write an empty feature cache")
    parts = [CACHE_MAGIC, struct.pack("<II", CACHE_VERSION, len(matrices))]
    for m in matrices:
        frames = np.asarray(m.frames)
        if frames.ndim != 2:
            raise CacheError(f"clip {m.clip_id!r}: frames must be 2-D, got {frames.shape}")
        raw = m.clip_id.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<II", *frames.shape))
        parts.append(np.ascontiguousarray(frames, dtype="<f4").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def read_cache(path, expected_dim: Optional[int] = None) -> list:
    data = Path(path).read_bytes()
    if data[:4] != CACHE_MAGIC:
        raise CacheError(f"{path}: bad feature cache magic {data[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != CACHE_VERSION:
            raise CacheError(f"{path}: unsupported feature cache version {version}")
        pos = 12
        out = []
        for _ in range(count):
            (n_id,) = struct.unpack_from("<I", data, pos)
            pos += 4
            clip_id = data[pos:pos + n_id].decode("utf-8")
            pos += n_id
            n_frames, dim = struct.unpack_from("<II", data, pos)
            pos += 8
            if expected_dim is not None and dim != expected_dim:
                raise CacheError(f"{path}: clip {clip_id!r} has dimension {dim}, config expects {expected_dim}")
            n_bytes = 4 * n_frames * dim
            if pos + n_bytes > len(data):
                raise CacheError(f"{path}: truncated at clip {clip_id!r}")
            frames = np.frombuffer(data, dtype="<f4", count=n_frames * dim, offset=pos)
            out.append(MfccMatrix(frames.reshape(n_frames, dim).astype(np.float32), clip_id))
            pos += n_bytes
    except (struct.error, UnicodeDecodeError) as exc:
        raise CacheError(f"{path}: corrupt feature cache ({exc})") from exc
    return out


# ---------------------------------------------------------------------------
# manifest


@dataclass
class ManifestEntry:
    path: str
    label: Optional[str] = None


def read_manifest(path) -> list:
    """Parse a ``path,label`` CSV; empty labels become None."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "path" not in reader.fieldnames:
            raise ConfigError(f"{path}: manifest needs a 'path,label' header")
        return [ManifestEntry(row["path"], (row.get("label") or "").strip() or None) for row in reader]


def write_manifest(path, entries: Iterable[ManifestEntry]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label"])
        for e in entries:
            writer.writerow([e.path, e.label or ""])
