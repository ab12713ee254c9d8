import numpy as np
import pytest

from svkit.audio import AudioBuffer, write_wav


def sine(freq_hz: float, rate_hz: int, n: int, amp: float = 1.0) -> AudioBuffer:
    t = np.arange(n) / rate_hz
    return AudioBuffer(amp * np.sin(2 * np.pi * freq_hz * t), rate_hz)


def random_buffer(rng: np.random.Generator, n: int, rate_hz: int = 16000,
                  amp: float = 0.3) -> AudioBuffer:
    return AudioBuffer(amp * rng.standard_normal(n) / 3.0, rate_hz)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_wav(path, samples, rate_hz=16000, pcm16=False):
    write_wav(AudioBuffer(np.asarray(samples, dtype=float), rate_hz), path, pcm16=pcm16)
    return str(path)


def make_speaker_tree(root, n_speakers=2, files_per_speaker=3, rate_hz=16000,
                      duration_s=3.5, seed=0):
    """Directory tree speaker/utt.wav with sine content per speaker."""
    rng = np.random.default_rng(seed)
    n = int(duration_s * rate_hz)
    for s in range(n_speakers):
        spk_dir = root / f"spk{s:03d}"
        spk_dir.mkdir(parents=True, exist_ok=True)
        for u in range(files_per_speaker):
            freq = 200 + 50 * s + 5 * u
            t = np.arange(n) / rate_hz
            x = 0.3 * np.sin(2 * np.pi * freq * t) + 0.01 * rng.standard_normal(n)
            make_wav(spk_dir / f"utt{u:03d}.wav", x, rate_hz)
    return str(root)
