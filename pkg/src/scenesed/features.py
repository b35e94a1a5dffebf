"""Log-mel front end.

Turns mono waveforms into the (frames x 64) log mel-band energy matrices the
network consumes: framing with end-padding, windowed magnitude spectra, a
triangular mel filterbank on the power spectrum, and a floored natural log.
Also reads/writes the binary feature-file format and ingests 16-bit PCM WAV.

Front-end choices not fixed elsewhere: Hamming analysis window, HTK mel scale
(2595*log10(1 + f/700)) with peak-1 triangles, power (magnitude squared) mel
energies, and a log floor of 1e-10.  A 10 s clip at the default 40 ms / 20 ms
framing yields exactly 500 frames.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FilterbankDegenerate, FormatError, InputTooShort

LOG_FLOOR = 1e-10
LMEL_MAGIC = b"LMEL"


@dataclass
class Waveform:
    """Mono audio: float samples plus their sample rate in Hz."""
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")


@dataclass
class FeatureClip:
    """(frames x bins) log-mel matrix with the framing that produced it."""
    values: np.ndarray
    frame_hop_s: float
    frame_len_s: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 44100
    frame_len_s: float = 0.040
    hop_s: float = 0.020
    n_mels: int = 64
    window: str = "hamming"
    log_floor: float = LOG_FLOOR


DEFAULT_CONFIG = FeatureConfig()


def _window(kind: str, length: int) -> np.ndarray:
    if kind == "hamming":
        return np.hamming(length)
    if kind == "rectangular":
        return np.ones(length)
    raise ValueError(f"unknown window {kind!r}")


def frame_signal(samples: np.ndarray, frame_samples: int, hop_samples: int) -> np.ndarray:
    """Slice a signal into ceil(len/hop) frames, zero-padding the tail.

    The padded length is (n_frames - 1) * hop + frame, so the row count obeys
    floor((padded_len - frame) / hop) + 1 and a 10 s clip at the default
    framing gives exactly 500 rows.
    """
    n = len(samples)
    if n < frame_samples:
        raise InputTooShort(
            f"waveform of {n} samples is shorter than one {frame_samples}-sample frame")
    n_frames = -(-n // hop_samples)  # ceil
    padded_len = (n_frames - 1) * hop_samples + frame_samples
    padded = np.zeros(padded_len, dtype=np.float64)
    padded[:n] = samples
    idx = np.arange(frame_samples)[None, :] + hop_samples * np.arange(n_frames)[:, None]
    return padded[idx]


def stft_magnitude(w: Waveform, frame_len_s: float, hop_s: float,
                   window: str = "hamming") -> np.ndarray:
    """Windowed magnitude spectra, (frames x bins) with bins = frame//2 + 1."""
    frame_samples = int(round(frame_len_s * w.sample_rate))
    hop_samples = int(round(hop_s * w.sample_rate))
    if frame_samples < 2:
        raise ValueError("frame length must cover at least 2 samples")
    if hop_samples < 1:
        raise ValueError("hop must be positive")
    frames = frame_signal(w.samples, frame_samples, hop_samples)
    frames = frames * _window(window, frame_samples)
    return np.abs(np.fft.rfft(frames, axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(n_mels: int, sample_rate: int) -> np.ndarray:
    """Center frequencies in Hz of n_mels filters spanning 0..Nyquist."""
    pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return mel_to_hz(pts[1:-1])


def mel_filterbank(n_fft_bins: int, n_mels: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filterbank, (n_mels x n_fft_bins), peak-1 triangles.

    n_fft_bins is the one-sided spectrum size (n_fft // 2 + 1).
    """
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if n_fft_bins < n_mels:
        raise FilterbankDegenerate(
            f"{n_mels} mel filters need at least {n_mels} spectrum bins, got {n_fft_bins}")
    n_fft = 2 * (n_fft_bins - 1)
    bin_hz = np.arange(n_fft_bins) * sample_rate / n_fft
    pts = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    fb = np.zeros((n_mels, n_fft_bins))
    for m in range(n_mels):
        lo, center, hi = pts[m], pts[m + 1], pts[m + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    if (fb.sum(axis=1) == 0).any():
        raise FilterbankDegenerate(
            f"{n_mels} mel filters leave at least one filter without a spectrum bin; "
            "reduce n_mels or increase the FFT size")
    return fb


def extract_logmel(w: Waveform, config: FeatureConfig = DEFAULT_CONFIG) -> FeatureClip:
    """Waveform -> log mel-band energies, ln(filterbank @ power + floor)."""
    mag = stft_magnitude(w, config.frame_len_s, config.hop_s, config.window)
    fb = mel_filterbank(mag.shape[1], config.n_mels, w.sample_rate)
    mel_energy = (mag ** 2) @ fb.T
    values = np.log(mel_energy + config.log_floor)
    return FeatureClip(values=values, frame_hop_s=config.hop_s,
                       frame_len_s=config.frame_len_s)


def save_feature_file(path, clip: FeatureClip):
    """Little-endian binary: magic LMEL, u32 T, u32 D, float32 row-major."""
    path = Path(path)
    t, d = clip.values.shape
    with open(path, "wb") as fh:
        fh.write(LMEL_MAGIC)
        fh.write(struct.pack("<II", t, d))
        fh.write(np.ascontiguousarray(clip.values, dtype="<f4").tobytes())


def load_feature_file(path, frame_hop_s: float = DEFAULT_CONFIG.hop_s,
                      frame_len_s: float = DEFAULT_CONFIG.frame_len_s) -> FeatureClip:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != LMEL_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    t, d = struct.unpack_from("<II", data, 4)
    expected = 12 + 4 * t * d
    if len(data) != expected:
        raise FormatError(
            f"{path}: payload is {len(data) - 12} bytes, header {t}x{d} needs {4 * t * d}")
    values = np.frombuffer(data, dtype="<f4", count=t * d, offset=12)
    return FeatureClip(values=values.reshape(t, d).astype(np.float64),
                       frame_hop_s=frame_hop_s, frame_len_s=frame_len_s)


def read_wav(path) -> Waveform:
    """Read mono 16-bit PCM WAV into floats in [-1, 1)."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise FormatError(f"{path}: expected mono, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise FormatError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
        raw = fh.readframes(fh.getnframes())
        rate = fh.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(path, w: Waveform):
    """Write a waveform as mono 16-bit PCM (values clipped to [-1, 1))."""
    pcm = np.clip(w.samples, -1.0, 32767.0 / 32768.0)
    pcm = np.round(pcm * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())
