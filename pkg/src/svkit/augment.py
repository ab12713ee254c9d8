"""Classroom-noise augmentation: babble synthesis, SNR mixing, reverberation.

The random policy mirrors the training setup: per utterance, reverb is
applied with probability p_reverb, then exactly one additive branch
(background noise XOR children babble) with an SNR drawn uniformly from
the configured range (default 5..15 dB). Babble is built by summing one
utterance each from 12..25 distinct child speakers.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioBuffer, load_audio, resample, rms_power, PIPELINE_RATE_HZ
from .corpus import UtteranceRecord
from .errors import (
    EmptyPool,
    EmptyRIR,
    InsufficientSpeakers,
    RateMismatch,
    SilentNoise,
    SilentSignal,
)

NOISE_KINDS = ("background", "babble", "rir")


@dataclass(frozen=True)
class AugmentPolicy:
    snr_db_min: float = 5.0
    snr_db_max: float = 15.0
    babble_speakers_min: int = 12
    babble_speakers_max: int = 25
    p_noise: float = 0.0
    p_babble: float = 0.0
    p_reverb: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.snr_db_min > self.snr_db_max:
            raise ValueError("snr_db_min > snr_db_max")
        if not (1 <= self.babble_speakers_min <= self.babble_speakers_max):
            raise ValueError("need 1 <= babble_speakers_min <= babble_speakers_max")
        for name in ("p_noise", "p_babble", "p_reverb"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} outside [0, 1]")
        if self.p_noise + self.p_babble > 1.0 + 1e-12:
            raise ValueError("p_noise + p_babble must not exceed 1 (branches are exclusive)")


@dataclass(frozen=True)
class NoiseSource:
    kind: str
    buffer: AudioBuffer
    label: str

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if len(self.buffer) == 0:
            raise ValueError(f"noise source {self.label!r} is empty")


@dataclass
class AugmentationLog:
    """Record of every random draw for one utterance, for reproducibility."""

    utterance_id: str = ""
    branch: str | None = None  # "background" | "babble" | None
    snr_db: float | None = None
    noise_label: str | None = None
    rir_label: str | None = None
    babble_speaker_ids: list[str] = field(default_factory=list)

    def is_empty(self) -> bool:
        return self.branch is None and self.rir_label is None

    def to_json(self) -> str:
        return json.dumps({
            "utterance_id": self.utterance_id,
            "branch": self.branch,
            "snr_db": self.snr_db,
            "noise_label": self.noise_label,
            "rir_label": self.rir_label,
            "babble_speaker_ids": self.babble_speaker_ids,
        })


def _fit_length(samples: np.ndarray, target_len: int) -> np.ndarray:
    """Loop or truncate a track to exactly target_len samples."""
    if len(samples) == 0:
        raise ValueError("cannot fit an empty track")
    if len(samples) >= target_len:
        return samples[:target_len]
    reps = -(-target_len // len(samples))
    return np.tile(samples, reps)[:target_len]


def synth_babble(
    pool: list[UtteranceRecord],
    n_speakers: int,
    target_len: int,
    rng: np.random.Generator,
    balance_rms: bool = True,
) -> tuple[AudioBuffer, list[str]]:
    """Sum one utterance from each of n_speakers distinct speakers.

    Tracks are looped/truncated to target_len (RMS-balanced first by
    default), summed, and the sum normalized to unit RMS. Returns the
    babble buffer and the chosen speaker ids.
    """
    if not pool:
        raise EmptyPool("babble pool is empty")
    if target_len <= 0:
        raise ValueError("target_len must be positive")
    by_speaker: dict[str, list[UtteranceRecord]] = {}
    for r in pool:
        by_speaker.setdefault(r.speaker_id, []).append(r)
    speakers = sorted(by_speaker)
    if len(speakers) < n_speakers:
        raise InsufficientSpeakers(
            f"babble needs {n_speakers} distinct speakers, pool has {len(speakers)}"
        )
    chosen_idx = rng.choice(len(speakers), size=n_speakers, replace=False)
    chosen = [speakers[i] for i in chosen_idx]

    mix = np.zeros(target_len)
    rate = None
    for spk in chosen:
        utts = sorted(by_speaker[spk], key=lambda r: r.utterance_id)
        rec = utts[int(rng.integers(0, len(utts)))]
        buf = load_audio(rec.path)
        if buf.sample_rate_hz != PIPELINE_RATE_HZ:
            buf = resample(buf, PIPELINE_RATE_HZ)
        if rate is None:
            rate = buf.sample_rate_hz
        track = _fit_length(buf.samples, target_len)
        if balance_rms:
            track_rms = np.sqrt(np.mean(np.square(track)))
            if track_rms > 0:
                track = track / track_rms
        mix = mix + track
    mix_rms = np.sqrt(np.mean(np.square(mix)))
    if mix_rms > 0:
        mix = mix / mix_rms
    return AudioBuffer(mix, rate or PIPELINE_RATE_HZ), chosen


def mix_at_snr(signal: AudioBuffer, noise: AudioBuffer, snr_db: float) -> AudioBuffer:
    """Add noise scaled so the component SNR equals snr_db.

    Noise is looped/truncated to the signal length. If the mix clips, the
    whole mix is peak-normalized to 0.99 (component ratio preserved).
    """
    if signal.sample_rate_hz != noise.sample_rate_hz:
        raise RateMismatch(
            f"signal {signal.sample_rate_hz} Hz vs noise {noise.sample_rate_hz} Hz"
        )
    sig_rms = rms_power(signal)
    if sig_rms == 0:
        raise SilentSignal("cannot mix into a silent signal")
    noise_fit = _fit_length(noise.samples, len(signal))
    noise_rms = np.sqrt(np.mean(np.square(noise_fit)))
    if noise_rms == 0:
        raise SilentNoise("noise track is silent")
    alpha = sig_rms / (noise_rms * 10.0 ** (snr_db / 20.0))
    mixed = signal.samples + alpha * noise_fit
    peak = np.max(np.abs(mixed))
    if peak > 1.0:
        mixed = mixed * (0.99 / peak)
    return AudioBuffer(mixed, signal.sample_rate_hz)


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def fft_convolve_full(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Full linear convolution via FFT overlap-add."""
    n_out = len(x) + len(h) - 1
    nfft = max(_next_pow2(2 * len(h)), 256)
    hop = nfft - len(h) + 1
    if hop <= 0 or len(x) <= hop:
        # single block
        nfft = _next_pow2(n_out)
        return np.fft.irfft(np.fft.rfft(x, nfft) * np.fft.rfft(h, nfft), nfft)[:n_out]
    H = np.fft.rfft(h, nfft)
    out = np.zeros(n_out + nfft)
    for start in range(0, len(x), hop):
        block = x[start:start + hop]
        seg = np.fft.irfft(np.fft.rfft(block, nfft) * H, nfft)
        out[start:start + nfft] += seg
    return out[:n_out]


def apply_rir(signal: AudioBuffer, rir: AudioBuffer) -> AudioBuffer:
    """Convolve with a room impulse response, truncate to the input length,
    and renormalize so the output RMS matches the input RMS."""
    if signal.sample_rate_hz != rir.sample_rate_hz:
        raise RateMismatch(
            f"signal {signal.sample_rate_hz} Hz vs rir {rir.sample_rate_hz} Hz"
        )
    if len(rir) == 0:
        raise EmptyRIR("empty impulse response")
    wet = fft_convolve_full(signal.samples, rir.samples)[:len(signal)]
    in_rms = rms_power(signal) if len(signal) else 0.0
    wet_rms = np.sqrt(np.mean(np.square(wet))) if len(wet) else 0.0
    if in_rms > 0 and wet_rms > 0:
        wet = wet * (in_rms / wet_rms)
    return AudioBuffer(wet, signal.sample_rate_hz)


def augment_utterance(
    buf: AudioBuffer,
    policy: AugmentPolicy,
    noises: list[NoiseSource],
    rng: np.random.Generator,
    babble_pool: list[UtteranceRecord] | None = None,
    utterance_id: str = "",
) -> tuple[AudioBuffer, AugmentationLog]:
    """Apply the policy's random corruption chain to one utterance.

    Reverb first (noise modeled at the microphone), then at most one
    additive branch. Deterministic given (inputs, rng state).
    """
    entry = AugmentationLog(utterance_id=utterance_id)
    out = buf

    if policy.p_reverb > 0 and rng.random() < policy.p_reverb:
        rirs = [n for n in noises if n.kind == "rir"]
        if not rirs:
            raise EmptyPool("policy can select reverb but no RIR sources given")
        rir = rirs[int(rng.integers(0, len(rirs)))]
        out = apply_rir(out, rir.buffer)
        entry.rir_label = rir.label

    u = rng.random()
    branch = None
    if policy.p_noise > 0 and u < policy.p_noise:
        branch = "background"
    elif policy.p_babble > 0 and u < policy.p_noise + policy.p_babble:
        branch = "babble"

    if branch == "background":
        backgrounds = [n for n in noises if n.kind == "background"]
        if not backgrounds:
            raise EmptyPool("policy can select background noise but none given")
        src = backgrounds[int(rng.integers(0, len(backgrounds)))]
        snr = float(rng.uniform(policy.snr_db_min, policy.snr_db_max))
        out = mix_at_snr(out, src.buffer, snr)
        entry.branch = "background"
        entry.snr_db = snr
        entry.noise_label = src.label
    elif branch == "babble":
        n_speakers = int(rng.integers(policy.babble_speakers_min, policy.babble_speakers_max + 1))
        snr = float(rng.uniform(policy.snr_db_min, policy.snr_db_max))
        if babble_pool:
            babble, speaker_ids = synth_babble(babble_pool, n_speakers, len(out), rng)
            entry.babble_speaker_ids = speaker_ids
            entry.noise_label = "babble:synth"
        else:
            premade = [n for n in noises if n.kind == "babble"]
            if not premade:
                raise EmptyPool("policy can select babble but no pool or babble sources given")
            src = premade[int(rng.integers(0, len(premade)))]
            babble = src.buffer
            entry.noise_label = src.label
        out = mix_at_snr(out, babble, snr)
        entry.branch = "babble"
        entry.snr_db = snr

    return out, entry


def derive_utterance_seed(master_seed: int, utterance_id: str, epoch: int = 0) -> np.random.Generator:
    """Seeded generator for one (utterance, epoch), stable across runs."""
    # stable text hash; hash() is salted per process
    h = 0
    for ch in utterance_id.encode():
        h = (h * 131 + ch) % (1 << 63)
    seq = np.random.SeedSequence(entropy=[master_seed & ((1 << 63) - 1), h, epoch])
    return np.random.default_rng(seq)


def load_noise_dir(
    root: str | os.PathLike,
    subdir_kinds: dict[str, str] | None = None,
    max_rir_len: int | None = None,
) -> list[NoiseSource]:
    """Ingest a directory tree of WAVs, kind inferred from subdirectory name."""
    root = os.fspath(root)
    subdir_kinds = subdir_kinds or {"noise": "background", "babble": "babble", "rir": "rir"}
    sources: list[NoiseSource] = []
    for sub in sorted(os.listdir(root)):
        kind = subdir_kinds.get(sub)
        subpath = os.path.join(root, sub)
        if kind is None or not os.path.isdir(subpath):
            continue
        for fname in sorted(os.listdir(subpath)):
            if not fname.lower().endswith(".wav"):
                continue
            buf = load_audio(os.path.join(subpath, fname))
            if buf.sample_rate_hz != PIPELINE_RATE_HZ:
                buf = resample(buf, PIPELINE_RATE_HZ)
            if kind == "rir" and max_rir_len is not None and len(buf) > max_rir_len:
                buf = AudioBuffer(buf.samples[:max_rir_len], buf.sample_rate_hz)
            sources.append(NoiseSource(kind=kind, buffer=buf, label=f"{sub}/{fname}"))
    return sources
