"""Synthetic paired recordings: footsteps and confusable non-footstep scenes.

A positive record is one person walking for ten seconds. Both sensors see
the *same* step times: the microphone as short band-limited clicks, the
geophone as damped low-frequency oscillations. Negatives are scenes with
acoustic activity but no real footsteps: speech-like harmonic sound,
keyboard-like clicking (airborne only), or near silence. The geophone
channel of a negative carries sensor noise, plus optional uncorrelated
thumps when a preset asks for harder material.

Every record is reproducible from one integer seed recorded in the
manifest, so a dataset can be regenerated or audited file by file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import AUDIO, CLIP_SECONDS, GEOPHONE, MODALITY_RATES, Waveform, write_wav
from .errors import ConfigError, FormatError, InvalidInput

NEGATIVE_KINDS = ("speech_like", "keyboard_like", "silence")

POS = "pos"
NEG = "neg"

# mean signal power every non-silent scene is normalized to. A sparse
# click train has a crest factor near 40, so the whole-clip RMS must sit
# around 0.014 for individual transients to stay clear of full scale;
# the peak guard below then only engages in pathological cases.
SIGNAL_POWER = 2e-4
SILENCE_RMS = 2e-5


@dataclass
class SynthParams:
    snr_db: float = 10.0
    steps_min: int = 6
    steps_max: int = 12
    timing_jitter: float = 0.35  # fraction of the nominal step interval
    audio_band: tuple[float, float] = (500.0, 4000.0)
    geo_band: tuple[float, float] = (30.0, 180.0)
    # expected number of spurious geophone thumps in a negative record
    geo_confounder_rate: float = 0.0

    def __post_init__(self):
        if self.steps_min < 1 or self.steps_max < self.steps_min:
            raise ConfigError(
                f"need 1 <= steps_min <= steps_max, got {self.steps_min}, {self.steps_max}"
            )
        if not 0.0 <= self.timing_jitter < 1.0:
            raise ConfigError(f"timing_jitter must be in [0, 1), got {self.timing_jitter}")
        for lo, hi in (self.audio_band, self.geo_band):
            if not 0 <= lo < hi:
                raise ConfigError(f"bad band ({lo}, {hi})")
        if self.geo_confounder_rate < 0:
            raise ConfigError("geo_confounder_rate must be >= 0")


PRESETS = {
    # clean and clearly separable; the end-to-end smoke runs use this
    "easy": SynthParams(snr_db=18.0),
    # noisy, fewer steps, and negatives whose geophone channel also thumps,
    # so loudness alone cannot separate the classes
    "hard": SynthParams(
        snr_db=2.0,
        steps_min=4,
        steps_max=9,
        timing_jitter=0.45,
        geo_confounder_rate=5.0,
    ),
}


def _shaped_noise(rng: np.random.Generator, n: int, sr: int, shape) -> np.ndarray:
    """Unit-variance noise with the given |H(f)| profile applied in the
    frequency domain."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec *= shape(freqs)
    x = np.fft.irfft(spec, n)
    sd = x.std()
    return x / sd if sd > 0 else x


def _audio_noise_shape(freqs):
    # gentle low tilt: flat to 1 kHz, easing to 0.3 by Nyquist
    return 1.0 / (1.0 + (freqs / 1000.0) ** 2) * 0.7 + 0.3


def _geo_noise_shape(freqs):
    # ground noise lives below ~200 Hz with a small broadband floor
    return np.where(freqs <= 200.0, 1.0, 0.1 + 0.9 * np.exp(-(freqs - 200.0) / 120.0))


def _band_noise(rng, n, sr, lo, hi):
    def shape(freqs):
        return ((freqs >= lo) & (freqs <= hi)).astype(np.float64)

    return _shaped_noise(rng, n, sr, shape)


def _normalize_power(x: np.ndarray, power: float) -> np.ndarray:
    p = np.mean(x * x)
    if p <= 0:
        return x
    return x * np.sqrt(power / p)


def _peak_guard(x: np.ndarray, limit: float = 0.99) -> np.ndarray:
    peak = np.abs(x).max()
    if peak > limit:
        x = x * (limit / peak)
    return x


def _step_times(rng: np.random.Generator, p: SynthParams) -> np.ndarray:
    """Roughly periodic step instants with per-step timing jitter."""
    n = int(rng.integers(p.steps_min, p.steps_max + 1))
    cadence = CLIP_SECONDS / (n + 1)
    base = cadence * np.arange(1, n + 1)
    times = base + rng.uniform(-p.timing_jitter, p.timing_jitter, n) * cadence
    return np.clip(np.sort(times), 0.1, CLIP_SECONDS - 0.5)


def _audio_click(rng, sr, band) -> np.ndarray:
    dur = 0.05
    t = np.arange(int(dur * sr)) / sr
    envelope = np.exp(-t / 0.008)
    carrier = _band_noise(rng, len(t), sr, band[0], band[1])
    click = envelope * carrier
    # peak-normalize: transients have a huge crest factor, and bounding the
    # peak keeps event trains away from full scale after power scaling
    return click / (np.abs(click).max() + 1e-12)


def _geo_thump(rng, sr, band) -> np.ndarray:
    dur = 0.4
    t = np.arange(int(dur * sr)) / sr
    x = np.zeros_like(t)
    for _ in range(2):
        f = rng.uniform(band[0], band[1])
        tau = rng.uniform(0.05, 0.12)
        phase = rng.uniform(0, 2 * np.pi)
        x += rng.uniform(0.5, 1.0) * np.exp(-t / tau) * np.sin(2 * np.pi * f * t + phase)
    return x / (np.sqrt(np.mean(x**2)) + 1e-12)


def _place_events(n_samples, sr, times, maker, rng) -> np.ndarray:
    track = np.zeros(n_samples)
    for t0 in times:
        ev = maker(rng) * rng.uniform(0.7, 1.3)
        start = int(round(t0 * sr))
        stop = min(start + len(ev), n_samples)
        track[start:stop] += ev[: stop - start]
    return track


def _speech_like(rng: np.random.Generator, sr: int, n: int) -> np.ndarray:
    t = np.arange(n) / sr
    f0 = rng.uniform(110.0, 220.0)
    vibrato = 1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(4.5, 6.5) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * vibrato) / sr
    x = np.zeros(n)
    for h in range(1, 9):
        x += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
    # syllable-rate amplitude bursts
    env = _shaped_noise(rng, n, sr, lambda f: np.exp(-((f / 3.0) ** 2)))
    env = np.clip(env, 0.0, None)
    peak = env.max()
    if peak > 0:
        env = env / peak
    return x * env


def _keyboard_like(rng: np.random.Generator, sr: int, n: int) -> np.ndarray:
    n_clicks = int(rng.integers(8, 26))
    times = np.sort(rng.uniform(0.1, CLIP_SECONDS - 0.2, n_clicks))
    dur = 0.02
    tt = np.arange(int(dur * sr)) / sr
    track = np.zeros(n)
    for t0 in times:
        envelope = np.exp(-tt / 0.004)
        carrier = _band_noise(rng, len(tt), sr, 1500.0, 6000.0)
        click = envelope * carrier
        click = click / (np.abs(click).max() + 1e-12)
        start = int(round(t0 * sr))
        stop = min(start + len(click), n)
        track[start:stop] += click[: stop - start] * rng.uniform(0.6, 1.4)
    return track


def synth_pair(
    seed: int,
    label: str,
    params: SynthParams | None = None,
    kind: str | None = None,
) -> tuple[Waveform, Waveform]:
    """Generate one (audio, geophone) pair from a single integer seed."""
    params = params or SynthParams()
    if label not in (POS, NEG):
        raise InvalidInput(f"label must be {POS!r} or {NEG!r}, got {label!r}")
    rng = np.random.default_rng(seed)
    sr_a = MODALITY_RATES[AUDIO]
    sr_g = MODALITY_RATES[GEOPHONE]
    n_a = int(CLIP_SECONDS * sr_a)
    n_g = int(CLIP_SECONDS * sr_g)
    noise_power = SIGNAL_POWER / (10.0 ** (params.snr_db / 10.0))

    if label == POS:
        times = _step_times(rng, params)
        audio_sig = _place_events(
            n_a, sr_a, times, lambda r: _audio_click(r, sr_a, params.audio_band), rng
        )
        geo_sig = _place_events(
            n_g, sr_g, times, lambda r: _geo_thump(r, sr_g, params.geo_band), rng
        )
        audio = _normalize_power(audio_sig, SIGNAL_POWER)
        geo = _normalize_power(geo_sig, SIGNAL_POWER)
    else:
        if kind is None:
            kind = NEGATIVE_KINDS[int(rng.integers(0, len(NEGATIVE_KINDS)))]
        if kind not in NEGATIVE_KINDS:
            raise InvalidInput(f"unknown negative kind {kind!r}")
        if kind == "silence":
            audio = rng.standard_normal(n_a) * SILENCE_RMS
            geo = rng.standard_normal(n_g) * SILENCE_RMS
            return (
                Waveform(audio, sr_a, AUDIO),
                Waveform(geo, sr_g, GEOPHONE),
            )
        if kind == "speech_like":
            audio = _normalize_power(_speech_like(rng, sr_a, n_a), SIGNAL_POWER)
        else:
            audio = _normalize_power(_keyboard_like(rng, sr_a, n_a), SIGNAL_POWER)
        geo = np.zeros(n_g)
        if params.geo_confounder_rate > 0:
            n_thumps = int(rng.poisson(params.geo_confounder_rate))
            if n_thumps > 0:
                thump_times = np.sort(rng.uniform(0.1, CLIP_SECONDS - 0.5, n_thumps))
                geo = _place_events(
                    n_g, sr_g, thump_times,
                    lambda r: _geo_thump(r, sr_g, params.geo_band), rng,
                )
                geo = _normalize_power(geo, SIGNAL_POWER)

    audio = audio + _shaped_noise(rng, n_a, sr_a, _audio_noise_shape) * np.sqrt(noise_power)
    geo = geo + _shaped_noise(rng, n_g, sr_g, _geo_noise_shape) * np.sqrt(noise_power)
    return (
        Waveform(_peak_guard(audio), sr_a, AUDIO),
        Waveform(_peak_guard(geo), sr_g, GEOPHONE),
    )


# ---------------------------------------------------------------------------
# datasets on disk
# ---------------------------------------------------------------------------


@dataclass
class Record:
    id: str
    audio: Path
    geophone: Path
    label: str
    seed: int


def generate_dataset(
    out_dir: str | Path,
    n_pos: int,
    n_neg: int,
    seed: int = 0,
    params: SynthParams | None = None,
    pcm16: bool = False,
) -> Path:
    """Write WAV pairs plus a manifest.json; returns the manifest path.

    Negative kinds rotate round-robin so every dataset carries all three.
    Per-record seeds derive from the dataset seed and are stored in the
    manifest, making any single record regenerable in isolation.
    """
    if n_pos < 0 or n_neg < 0 or n_pos + n_neg == 0:
        raise ConfigError(f"need at least one record, got n_pos={n_pos}, n_neg={n_neg}")
    params = params or SynthParams()
    out = Path(out_dir)
    wav_dir = out / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).generate_state(n_pos + n_neg)
    entries = []
    for i in range(n_pos + n_neg):
        is_pos = i < n_pos
        label = POS if is_pos else NEG
        rid = f"{label}_{i:05d}" if is_pos else f"{label}_{i - n_pos:05d}"
        kind = None if is_pos else NEGATIVE_KINDS[(i - n_pos) % len(NEGATIVE_KINDS)]
        rec_seed = int(seeds[i])
        audio, geo = synth_pair(rec_seed, label, params, kind)
        a_path = wav_dir / f"{rid}_audio.wav"
        g_path = wav_dir / f"{rid}_geo.wav"
        write_wav(a_path, audio, pcm16=pcm16)
        write_wav(g_path, geo, pcm16=pcm16)
        entries.append(
            {
                "id": rid,
                "audio": str(a_path.relative_to(out)),
                "geophone": str(g_path.relative_to(out)),
                "label": label,
                "seed": rec_seed,
            }
        )
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=2))
    return manifest


def load_manifest(path: str | Path) -> list[Record]:
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(entries, list) or not entries:
        raise FormatError(f"{path}: manifest must be a non-empty JSON array")
    records = []
    for e in entries:
        missing = {"id", "audio", "geophone", "label", "seed"} - set(e)
        if missing:
            raise FormatError(f"{path}: entry {e.get('id', '?')} missing keys {sorted(missing)}")
        if e["label"] not in (POS, NEG):
            raise FormatError(f"{path}: entry {e['id']} has bad label {e['label']!r}")
        records.append(
            Record(
                id=e["id"],
                audio=path.parent / e["audio"],
                geophone=path.parent / e["geophone"],
                label=e["label"],
                seed=int(e["seed"]),
            )
        )
    return records


# ---------------------------------------------------------------------------
# diagnostic: how separable is a record, pre-model?
# ---------------------------------------------------------------------------


def separability_statistic(audio: Waveform, geo: Waveform) -> float:
    """Peak short-lag cross-correlation between the band-limited envelopes
    of the two channels. Positives share event times across modalities, so
    this lands high; negatives have no cross-modal alignment.

    Used by tests to confirm the snr knob actually orders difficulty,
    without involving any learned model.
    """
    def envelope(wave: Waveform, lo, hi, frame_s=0.02):
        sr = wave.sample_rate
        n = len(wave.samples)
        rng_free = np.fft.rfft(wave.samples)
        freqs = np.fft.rfftfreq(n, 1.0 / sr)
        rng_free[(freqs < lo) | (freqs > hi)] = 0.0
        banded = np.fft.irfft(rng_free, n)
        hop = int(frame_s * sr)
        frames = len(banded) // hop
        env = np.sqrt(np.mean(banded[: frames * hop].reshape(frames, hop) ** 2, axis=1))
        return env

    ea = envelope(audio, 400.0, 5000.0)
    eg = envelope(geo, 15.0, 220.0)
    m = min(len(ea), len(eg))
    ea, eg = ea[:m] - ea[:m].mean(), eg[:m] - eg[:m].mean()
    sa, sg = ea.std(), eg.std()
    if sa < 1e-12 or sg < 1e-12:
        return 0.0
    ea, eg = ea / sa, eg / sg
    best = 0.0
    for lag in range(-3, 4):
        if lag >= 0:
            c = np.mean(ea[lag:] * eg[: m - lag])
        else:
            c = np.mean(ea[: m + lag] * eg[-lag:])
        best = max(best, float(c))
    return best
