"""MFCC front end: pre-emphasis, framing, radix-2 power spectrum, mel
filterbank, log compression and orthonormal DCT-II.

Also holds WAV input and the ``MFC1`` binary feature-file format.
"""

from __future__ import annotations

import enum
import io
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, DataError

LOG_FLOOR = 1e-10
FEATURE_MAGIC = b"MFC1"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sHIHH")


@dataclass(frozen=True)
class RawAudio:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if int(self.sample_rate_hz) <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class MfccConfig:
    sample_rate_hz: int = 16000
    frame_length_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    n_mel_filters: int = 26
    n_coeffs_k: int = 13
    preemphasis: float = 0.97
    window: str = "hamming"

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample_rate_hz must be positive")
        if self.frame_length_ms <= 0 or self.hop_ms <= 0:
            raise ConfigError("frame_length_ms and hop_ms must be positive")
        if self.hop_ms > self.frame_length_ms:
            raise ConfigError("hop_ms must not exceed frame_length_ms")
        n = self.fft_size
        if n < 2 or n & (n - 1):
            raise ConfigError(f"fft_size must be a power of two, got {n}")
        if n < self.frame_samples:
            raise ConfigError(f"fft_size {n} is shorter than the frame ({self.frame_samples} samples)")
        if not 0 < self.n_coeffs_k <= self.n_mel_filters <= n // 2 + 1:
            raise ConfigError("need 0 < n_coeffs_k <= n_mel_filters <= fft_size/2 + 1")
        if not 0.0 <= self.preemphasis < 1.0:
            raise ConfigError("preemphasis must lie in [0, 1)")
        if self.window not in ("hamming", "hann"):
            raise ConfigError(f"unknown window {self.window!r}")

    @property
    def frame_samples(self) -> int:
        return int(round(self.frame_length_ms * self.sample_rate_hz / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate_hz / 1000.0))


@dataclass(frozen=True)
class MfccSequence:
    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise DataError(f"MFCC frames must be a non-empty T x k matrix, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise DataError("MFCC frames contain non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def t_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def k_coeffs(self) -> int:
        return self.frames.shape[1]


def _check_nonempty(audio: RawAudio):
    if audio.samples.size == 0:
        raise DataError("audio is empty")


def preemphasize(audio: RawAudio, coeff: float) -> RawAudio:
    if not 0.0 <= coeff < 1.0:
        raise ConfigError(f"pre-emphasis coefficient must lie in [0, 1), got {coeff}")
    _check_nonempty(audio)
    x = audio.samples
    y = np.empty_like(x)
    y[0] = x[0]
    y[1:] = x[1:] - coeff * x[:-1]
    return RawAudio(y, audio.sample_rate_hz)


def window_coefficients(name: str, length: int) -> np.ndarray:
    if name == "hamming":
        return np.hamming(length)
    if name == "hann":
        return np.hanning(length)
    raise ConfigError(f"unknown window {name!r}")


def frame_count(n_samples: int, frame: int, hop: int) -> int:
    return 1 + (n_samples - frame) // hop


def frame_and_window(audio: RawAudio, config: MfccConfig) -> np.ndarray:
    """Slice ``audio`` into overlapping frames and apply the window.

    Returns a ``T x L`` array with ``T = 1 + floor((N - L) / H)``.
    Trailing samples that do not fill a whole frame are dropped.
    """
    _check_nonempty(audio)
    L, H = config.frame_samples, config.hop_samples
    N = audio.samples.size
    if N < L:
        raise DataError(f"audio has {N} samples, shorter than one frame ({L})")
    T = frame_count(N, L, H)
    idx = np.arange(L)[None, :] + H * np.arange(T)[:, None]
    return audio.samples[idx] * window_coefficients(config.window, L)


def power_spectrum(frames: np.ndarray, fft_size: int) -> np.ndarray:
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ConfigError(f"fft_size must be a power of two, got {fft_size}")
    frames = np.atleast_2d(frames)
    if frames.shape[1] > fft_size:
        raise ConfigError(f"frames of length {frames.shape[1]} exceed fft_size {fft_size}")
    padded = np.zeros((frames.shape[0], fft_size), dtype=np.complex128)
    padded[:, : frames.shape[1]] = frames
    spec = kernels.fft_rows(padded)[:, : fft_size // 2 + 1]
    return (spec.real**2 + spec.imag**2) / fft_size


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(config: MfccConfig) -> np.ndarray:
    """FFT-bin indices of the ``n_mel_filters + 2`` triangle corner points."""
    mels = np.linspace(0.0, hz_to_mel(config.sample_rate_hz / 2.0), config.n_mel_filters + 2)
    return np.rint(config.fft_size * mel_to_hz(mels) / config.sample_rate_hz).astype(np.int64)


def mel_center_frequencies(config: MfccConfig) -> np.ndarray:
    mels = np.linspace(0.0, hz_to_mel(config.sample_rate_hz / 2.0), config.n_mel_filters + 2)
    return mel_to_hz(mels[1:-1])


def mel_filterbank(config: MfccConfig, sample_rate_hz: int | None = None) -> np.ndarray:
    if sample_rate_hz is not None and sample_rate_hz != config.sample_rate_hz:
        raise ConfigError(f"sample rate {sample_rate_hz} does not match config ({config.sample_rate_hz})")
    edges = mel_band_edges(config)
    if np.any(np.diff(edges) <= 0):
        raise ConfigError(
            f"{config.n_mel_filters} mel filters are too many for fft_size {config.fft_size}: "
            "adjacent filters share a corner bin"
        )
    n_bins = config.fft_size // 2 + 1
    fb = np.zeros((config.n_mel_filters, n_bins))
    for m in range(config.n_mel_filters):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        k = np.arange(left, center)
        fb[m, k] = (k - left) / (center - left)
        k = np.arange(center, right + 1)
        fb[m, k] = (right - k) / (right - center)
    return fb


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Rows of the orthonormal DCT-II of length ``n_in``, first ``n_out`` kept."""
    n = np.arange(n_out)[:, None]
    m = np.arange(n_in)[None, :]
    d = np.sqrt(2.0 / n_in) * np.cos(np.pi * n * (m + 0.5) / n_in)
    d[0] /= np.sqrt(2.0)
    return d


class Decision(enum.Enum):
    ACCEPT = "accept"
    TRIM = "trim-to-max"
    REJECT = "reject"


def trim_or_reject(duration_s: float, min_s: float = 3.0, max_s: float = 7.0) -> tuple[Decision, float]:
    """Duration gate. Returns the decision and the duration kept afterwards
    (0.0 for rejected utterances)."""
    if not min_s < max_s:
        raise ConfigError(f"min_s ({min_s}) must be below max_s ({max_s})")
    if not duration_s > 0:
        raise DataError(f"duration must be positive, got {duration_s}")
    if duration_s < min_s:
        return Decision.REJECT, 0.0
    if duration_s > max_s:
        return Decision.TRIM, float(max_s)
    return Decision.ACCEPT, float(duration_s)


def apply_duration_gate(audio: RawAudio, min_s: float = 3.0, max_s: float = 7.0) -> RawAudio:
    """Trim to the leading ``max_s`` seconds, or raise ``DataError`` if too short."""
    decision, _ = trim_or_reject(audio.duration_s, min_s, max_s)
    if decision is Decision.REJECT:
        raise DataError(f"utterance of {audio.duration_s:.3f} s is shorter than {min_s} s")
    if decision is Decision.TRIM:
        keep = int(round(max_s * audio.sample_rate_hz))
        return RawAudio(audio.samples[:keep], audio.sample_rate_hz)
    return audio


def extract_mfcc(
    audio: RawAudio,
    config: MfccConfig = MfccConfig(),
    check_duration: bool = True,
    min_s: float = 3.0,
    max_s: float = 7.0,
) -> MfccSequence:
    """Full pipeline; ``check_duration=False`` bypasses the 3-7 s gate."""
    if audio.sample_rate_hz != config.sample_rate_hz:
        raise DataError(
            f"sample rate {audio.sample_rate_hz} Hz differs from the configured "
            f"{config.sample_rate_hz} Hz (no resampling is performed)"
        )
    if check_duration:
        audio = apply_duration_gate(audio, min_s, max_s)
    emphasized = preemphasize(audio, config.preemphasis)
    frames = frame_and_window(emphasized, config)
    power = power_spectrum(frames, config.fft_size)
    energies = power @ mel_filterbank(config).T
    log_energies = np.log(np.maximum(energies, LOG_FLOOR))
    return MfccSequence(log_energies @ dct_matrix(config.n_coeffs_k, config.n_mel_filters).T)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def read_wav(path) -> RawAudio:
    """Read mono 16-bit signed PCM WAV, scaled to [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE" or w.getsampwidth() != 2 or w.getnchannels() != 1:
                raise DataError(
                    f"{path}: expected mono 16-bit PCM WAV, got {w.getnchannels()} channel(s), "
                    f"{8 * w.getsampwidth()}-bit, compression {w.getcomptype()}"
                )
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (OSError, EOFError, wave.Error) as exc:
        raise DataError(f"{path}: cannot read WAV ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise DataError(f"{path}: WAV file holds no samples")
    return RawAudio(samples, rate)


def write_wav(path, audio: RawAudio):
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate_hz)
        w.writeframes(pcm.tobytes())


def encode_features(seq: MfccSequence) -> bytes:
    T, k = seq.frames.shape
    buf = io.BytesIO()
    buf.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, T, k, 0))
    buf.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())
    return buf.getvalue()


def decode_features(data: bytes, name="<bytes>") -> MfccSequence:
    if len(data) < _FEATURE_HEADER.size:
        raise DataError(f"{name}: truncated feature header")
    magic, version, T, k, _reserved = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC or version != FEATURE_VERSION:
        raise DataError(f"{name}: not an MFC1 v1 feature file")
    body = data[_FEATURE_HEADER.size :]
    if len(body) != 4 * T * k:
        raise DataError(f"{name}: expected {T}x{k} float32 values, found {len(body)} bytes")
    return MfccSequence(np.frombuffer(body, dtype="<f4").reshape(T, k).astype(np.float32))


def write_features(path, seq: MfccSequence):
    from ._io import atomic_write_bytes

    atomic_write_bytes(path, encode_features(seq))


def read_features(path) -> MfccSequence:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read feature file ({exc})") from exc
    return decode_features(data, str(path))
