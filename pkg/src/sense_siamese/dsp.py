"""Waveform handling and log-mel spectrogram extraction.

Both sensor channels are reduced to the same time-frequency shape so one
network architecture can serve either modality:

  audio     16 kHz, 10 s  ->  999 frames x 50 mel bands
  geophone   4 kHz, 10 s  ->  999 frames x 50 mel bands

The matching frame counts are not an accident: the analysis window is
fixed in *milliseconds* (20 ms, half-overlapped), so the hop covers the
same wall-clock time at both rates.

All in-memory math is float64; float32 only appears at file boundaries.
"""

from __future__ import annotations

import hashlib
import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ConfigError, FormatError, InvalidInput, ShapeError

AUDIO = "audio"
GEOPHONE = "geophone"
MODALITY_RATES = {AUDIO: 16000, GEOPHONE: 4000}
CLIP_SECONDS = 10.0

# Floor applied before the log so silent bands stay finite.
LOG_FLOOR = 1e-10

_MEL_SCALE = 2595.0
_MEL_BREAK = 700.0


def mel_from_hz(f):
    """Map frequency in Hz to mel. Accepts scalars or arrays."""
    return _MEL_SCALE * np.log10(1.0 + np.asarray(f, dtype=np.float64) / _MEL_BREAK)


def hz_from_mel(m):
    """Inverse of :func:`mel_from_hz`."""
    return _MEL_BREAK * (10.0 ** (np.asarray(m, dtype=np.float64) / _MEL_SCALE) - 1.0)


def hamming_window(length: int) -> np.ndarray:
    """Symmetric Hamming window, mirrored so w[i] == w[length-1-i] holds exactly."""
    if length < 2:
        raise ConfigError(f"window length must be >= 2, got {length}")
    n = np.arange(length, dtype=np.float64)
    w = 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1))
    half = length // 2
    w[length - half :] = w[:half][::-1]
    return w


@dataclass
class Waveform:
    """A single-channel recording tagged with its sensor modality."""

    samples: np.ndarray
    sample_rate: int
    modality: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.modality not in MODALITY_RATES:
            raise InvalidInput(f"unknown modality {self.modality!r}")
        if self.sample_rate <= 0:
            raise InvalidInput(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def prepare(wave: Waveform, seconds: float = CLIP_SECONDS) -> Waveform:
    """Zero-pad or truncate to an exact duration."""
    target = int(round(seconds * wave.sample_rate))
    x = wave.samples
    if len(x) > target:
        x = x[:target]
    elif len(x) < target:
        x = np.concatenate([x, np.zeros(target - len(x), dtype=np.float64)])
    return Waveform(x, wave.sample_rate, wave.modality)


@dataclass
class StftConfig:
    """Short-time analysis parameters, expressed in wall-clock units."""

    window_ms: float = 20.0
    overlap: float = 0.5
    fft_bins: int = 256  # one-sided bins kept (FFT length is twice this)

    def __post_init__(self):
        if self.window_ms <= 0:
            raise ConfigError(f"window_ms must be positive, got {self.window_ms}")
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError(f"overlap must be in [0, 1), got {self.overlap}")
        if self.fft_bins < 2:
            raise ConfigError(f"fft_bins must be >= 2, got {self.fft_bins}")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        win = self.window_samples(sample_rate)
        hop = int(round(win * (1.0 - self.overlap)))
        if hop < 1:
            raise ConfigError("hop works out to zero samples; overlap too large")
        return hop

    @property
    def fft_length(self) -> int:
        return 2 * self.fft_bins

    def frame_count(self, n_samples: int, sample_rate: int) -> int:
        win = self.window_samples(sample_rate)
        hop = self.hop_samples(sample_rate)
        if n_samples < win:
            raise InvalidInput(
                f"signal of {n_samples} samples is shorter than one {win}-sample window"
            )
        return (n_samples - win) // hop + 1


@dataclass
class MelConfig:
    n_bands: int = 50
    f_min: float = 0.0
    f_max: float | None = None  # None means Nyquist

    def __post_init__(self):
        if self.n_bands < 1:
            raise ConfigError(f"n_bands must be >= 1, got {self.n_bands}")
        if self.f_min < 0:
            raise ConfigError(f"f_min must be >= 0, got {self.f_min}")
        if self.f_max is not None and self.f_max <= self.f_min:
            raise ConfigError("f_max must exceed f_min")


def mel_filterbank(mel: MelConfig, stft: StftConfig, sample_rate: int) -> np.ndarray:
    """Triangular filterbank on the mel scale, shape (n_bands, fft_bins).

    Band edges are spaced uniformly in mel and land on fractional FFT-bin
    positions; no bin snapping. Each row is rescaled so its tallest tap is
    exactly 1.0 (peak normalization, not area normalization).
    """
    nyquist = sample_rate / 2.0
    f_max = nyquist if mel.f_max is None else mel.f_max
    if f_max > nyquist:
        raise ConfigError(f"f_max {f_max} exceeds Nyquist {nyquist}")
    edges_mel = np.linspace(mel_from_hz(mel.f_min), mel_from_hz(f_max), mel.n_bands + 2)
    edges_hz = hz_from_mel(edges_mel)
    # fractional bin positions for the one-sided spectrum of length fft_bins
    edges_bin = edges_hz * stft.fft_length / sample_rate
    bins = np.arange(stft.fft_bins, dtype=np.float64)
    fb = np.zeros((mel.n_bands, stft.fft_bins), dtype=np.float64)
    for b in range(mel.n_bands):
        lo, center, hi = edges_bin[b], edges_bin[b + 1], edges_bin[b + 2]
        rising = (bins - lo) / (center - lo)
        falling = (hi - bins) / (hi - center)
        fb[b] = np.maximum(0.0, np.minimum(rising, falling))
        peak = fb[b].max()
        if peak <= 0.0:
            raise ConfigError(
                f"mel band {b} has no FFT bin under it; "
                f"reduce n_bands or raise fft_bins"
            )
        fb[b] /= peak
    return fb


@dataclass
class LogMelSpectrogram:
    """Feature matrix plus enough provenance to sanity-check downstream."""

    values: np.ndarray  # (frames, bands) float64
    modality: str
    sample_rate: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"spectrogram must be 2-D, got {self.values.shape}")

    @property
    def shape(self):
        return self.values.shape


def frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    """Slice a 1-D signal into overlapping frames, shape (n_frames, win)."""
    if x.ndim != 1:
        raise ShapeError(f"expected 1-D signal, got shape {x.shape}")
    if len(x) < win:
        raise InvalidInput(f"signal shorter ({len(x)}) than window ({win})")
    n_frames = (len(x) - win) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    return np.ascontiguousarray(view[:n_frames])


def log_mel(
    wave: Waveform,
    stft: StftConfig | None = None,
    mel: MelConfig | None = None,
    normalize: bool = False,
) -> LogMelSpectrogram:
    """Full pipeline: frame, window, FFT power, mel pool, natural log.

    ``normalize`` optionally standardizes the finished spectrogram to zero
    mean / unit variance using its own statistics. Off by default; the
    metric network is expected to see raw log energies.
    """
    stft = stft or StftConfig()
    mel = mel or MelConfig()
    expected_rate = MODALITY_RATES[wave.modality]
    if wave.sample_rate != expected_rate:
        raise InvalidInput(
            f"{wave.modality} waveform must be sampled at {expected_rate} Hz, "
            f"got {wave.sample_rate}"
        )
    if not np.all(np.isfinite(wave.samples)):
        raise InvalidInput("waveform contains NaN or Inf")

    sr = wave.sample_rate
    win = stft.window_samples(sr)
    hop = stft.hop_samples(sr)
    frames = frame_signal(wave.samples, win, hop)
    frames = frames * hamming_window(win)
    spectrum = np.fft.rfft(frames, n=stft.fft_length, axis=1)
    # keep bins 0 .. fft_bins-1; the Nyquist bin is dropped
    power = np.abs(spectrum[:, : stft.fft_bins]) ** 2
    fb = mel_filterbank(mel, stft, sr)
    pooled = power @ fb.T
    feats = np.log(np.maximum(pooled, LOG_FLOOR))
    if normalize:
        mu = feats.mean()
        sd = feats.std()
        feats = (feats - mu) / (sd + 1e-8)
    return LogMelSpectrogram(feats, wave.modality, sr)


@dataclass
class FeatureConfig:
    """Everything that determines the bytes of an extracted feature."""

    stft: StftConfig = field(default_factory=StftConfig)
    mel: MelConfig = field(default_factory=MelConfig)
    normalize: bool = False

    def cache_tag(self) -> str:
        s, m = self.stft, self.mel
        return (
            f"win{s.window_ms}|ov{s.overlap}|fft{s.fft_bins}"
            f"|mel{m.n_bands}|fmin{m.f_min}|fmax{m.f_max}"
            f"|norm{int(self.normalize)}"
        )


def extract_features(wave: Waveform, cfg: FeatureConfig | None = None) -> LogMelSpectrogram:
    cfg = cfg or FeatureConfig()
    return log_mel(prepare(wave), cfg.stft, cfg.mel, cfg.normalize)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def read_wav(path: str | Path, modality: str) -> Waveform:
    """Load a mono WAV. Integer PCM is normalized to [-1, 1)."""
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, OSError) as exc:
        raise FormatError(f"cannot read WAV {path}: {exc}") from exc
    if data.ndim != 1:
        raise FormatError(f"{path}: expected mono WAV, got shape {data.shape}")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported WAV dtype {data.dtype}")
    return Waveform(x, int(rate), modality)


def write_wav(path: str | Path, wave: Waveform, pcm16: bool = False) -> None:
    if pcm16:
        # inverse of the read normalization (x / 32768), clipped into range
        scaled = np.round(wave.samples * 32768.0)
        data = np.clip(scaled, -32768, 32767).astype(np.int16)
    else:
        data = wave.samples.astype(np.float32)
    wavfile.write(str(path), wave.sample_rate, data)


_LMSP_MAGIC = b"LMSP"
_LMSP_VERSION = 1


def write_lmsp(path: str | Path, spec: LogMelSpectrogram) -> None:
    """Serialize a spectrogram: magic, version, dims, float32 LE row-major."""
    t, n = spec.values.shape
    buf = io.BytesIO()
    buf.write(_LMSP_MAGIC)
    buf.write(struct.pack("<III", _LMSP_VERSION, t, n))
    buf.write(spec.values.astype("<f4").tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def read_lmsp(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != _LMSP_MAGIC:
        raise FormatError(f"{path}: not an LMSP file")
    version, t, n = struct.unpack("<III", raw[4:16])
    if version != _LMSP_VERSION:
        raise FormatError(f"{path}: unsupported LMSP version {version}")
    expected = 16 + 4 * t * n
    if len(raw) != expected:
        raise FormatError(f"{path}: size {len(raw)} != expected {expected}")
    values = np.frombuffer(raw, dtype="<f4", offset=16).reshape(t, n)
    return values.astype(np.float64)


# ---------------------------------------------------------------------------
# content-addressed feature cache
# ---------------------------------------------------------------------------

CACHE_ENV = "SENSE_SIAMESE_CACHE"


def resolve_cache_dir(explicit: str | Path | None = None) -> Path:
    """Pick the feature cache directory. The env var wins over everything."""
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    if explicit is not None:
        return Path(explicit)
    return Path.home() / ".cache" / "sense_siamese"


def feature_cache_key(wav_path: str | Path, cfg: FeatureConfig) -> str:
    h = hashlib.sha256()
    h.update(Path(wav_path).read_bytes())
    h.update(cfg.cache_tag().encode("utf-8"))
    return h.hexdigest()


def cached_features(
    wav_path: str | Path,
    modality: str,
    cfg: FeatureConfig | None = None,
    cache_dir: str | Path | None = None,
) -> np.ndarray:
    """Extract features for a WAV file, reusing the on-disk cache when possible.

    The cache key covers the file bytes and every extraction parameter, so a
    re-recorded file or a changed window size can never serve stale features.
    """
    cfg = cfg or FeatureConfig()
    root = resolve_cache_dir(cache_dir)
    root.mkdir(parents=True, exist_ok=True)
    key = feature_cache_key(wav_path, cfg)
    slot = root / f"{key}.lmsp"
    if slot.exists():
        return read_lmsp(slot)
    wave = read_wav(wav_path, modality)
    spec = extract_features(wave, cfg)
    tmp = slot.with_suffix(".tmp")
    write_lmsp(tmp, spec)
    os.replace(tmp, slot)
    # serve exactly what a cache hit would return (float32 round trip)
    return read_lmsp(slot)
