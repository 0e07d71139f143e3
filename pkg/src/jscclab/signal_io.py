"""Audio I/O, synthetic corpus generation and SNR-controlled mixing."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import AudioFormatError, ConfigurationError, InputError

SAMPLE_RATE = 16000
KINDS = ("clean", "noise", "mixture", "reconstructed")
NOISE_KINDS = ("white", "modulated")


@dataclass
class Signal:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    kind: str = "clean"
    snr_a_db: float | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InputError(f"signals are mono, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise InputError("sample_rate must be positive")
        if self.kind not in KINDS:
            raise InputError(f"unknown signal kind {self.kind!r}")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("signal contains non-finite samples")
        if self.kind == "mixture" and self.snr_a_db is None:
            raise InputError("a mixture must record the SNR it was created at")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


def power(x: np.ndarray) -> float:
    """Mean square over the whole signal."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x))


# -- WAV -----------------------------------------------------------------------

def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8: pos + 8 + size]
        yield cid, body, len(body) == size
        pos += 8 + size + (size & 1)


def read_wav(path, expected_rate: int = SAMPLE_RATE) -> Signal:
    """Read a 16-bit PCM mono RIFF/WAVE file into [-1, 1)."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise AudioFormatError(f"{path}: truncated RIFF header (missing 'RIFF'/'WAVE' preamble)")
    riff, _, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise AudioFormatError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    pcm = None
    for cid, body, complete in _chunks(data):
        if cid == b"fmt ":
            if not complete or len(body) < 16:
                raise AudioFormatError(f"{path}: truncated 'fmt ' chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if not complete:
                raise AudioFormatError(f"{path}: truncated 'data' chunk")
            pcm = body
            if fmt is not None:
                break
    if fmt is None:
        raise AudioFormatError(f"{path}: missing 'fmt ' chunk")
    if pcm is None:
        raise AudioFormatError(f"{path}: missing 'data' chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if audio_format != 1 or bits != 16:
        raise AudioFormatError(f"{path}: only 16-bit PCM is supported (format {audio_format}, {bits} bits)")
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono audio, found {channels} channels")
    if rate != expected_rate:
        raise AudioFormatError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if len(pcm) % 2:
        raise AudioFormatError(f"{path}: odd byte count in 'data' chunk")
    samples = np.frombuffer(pcm, dtype="<i2").astype(np.float64) / 32768.0
    return Signal(samples, rate, "clean")


def write_wav(path, sig: Signal) -> None:
    """Write as 16-bit PCM mono, rounding to nearest and clamping."""
    pcm = np.clip(np.rint(sig.samples * 32768.0), -32768, 32767).astype("<i2").tobytes()
    header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(pcm), b"WAVE", b"fmt ", 16,
                         1, 1, sig.sample_rate, sig.sample_rate * 2, 2, 16, b"data", len(pcm))
    Path(path).write_bytes(header + pcm)


# -- synthesis -----------------------------------------------------------------

def _n_samples(duration_s: float, sample_rate: int) -> int:
    if duration_s <= 0:
        raise InputError("duration must be positive")
    return max(1, int(round(duration_s * sample_rate)))


def _syllable_envelope(rng: np.random.Generator, n: int, fs: int) -> np.ndarray:
    env = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.08) * fs)
    until_pause = int(rng.integers(2, 5))
    while pos < n:
        rate = rng.uniform(2.0, 8.0)
        length = int(rng.uniform(0.5, 0.8) / rate * fs)
        stop = min(n, pos + length)
        win = np.hanning(length + 2)[1:-1]
        env[pos:stop] = rng.uniform(0.5, 1.0) * win[: stop - pos]
        pos += length + int(rng.uniform(0.1, 0.4) / rate * fs)
        until_pause -= 1
        if until_pause == 0:
            pos += int(rng.uniform(0.06, 0.2) * fs)
            until_pause = int(rng.integers(2, 5))
    return env


def synth_speechlike(seed: int, duration_s: float, sample_rate: int = SAMPLE_RATE) -> Signal:
    """Harmonic stand-in for voiced speech.

    A pitch track wandering inside 80-300 Hz drives 3 to 6 harmonics, and a
    syllable-rate envelope (2-8 Hz) with silent pauses shapes the amplitude.
    Peak amplitude is 0.5.
    """
    rng = np.random.default_rng(seed)
    n = _n_samples(duration_s, sample_rate)
    t = np.arange(n) / sample_rate
    f0 = np.full(n, rng.uniform(100.0, 220.0))
    for _ in range(3):
        f0 += rng.uniform(5.0, 35.0) * np.sin(2 * np.pi * rng.uniform(0.2, 2.0) * t + rng.uniform(0, 2 * np.pi))
    f0 = np.clip(f0, 80.0, 300.0)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    x = np.zeros(n)
    for h in range(1, int(rng.integers(3, 7)) + 1):
        x += rng.uniform(0.5, 1.0) / h * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    x *= _syllable_envelope(rng, n, sample_rate)
    peak = np.max(np.abs(x))
    if peak > 0:
        x *= 0.5 / peak
    return Signal(x, sample_rate, "clean")


def synth_noise(seed: int, duration_s: float, kind: str = "white", sample_rate: int = SAMPLE_RATE) -> Signal:
    """Unit-variance background noise.

    ``white`` is i.i.d. standard normal; ``modulated`` is band-limited noise
    under a slowly fluctuating envelope, a crude babble stand-in.
    """
    rng = np.random.default_rng(seed)
    n = _n_samples(duration_s, sample_rate)
    if kind == "white":
        return Signal(rng.standard_normal(n), sample_rate, "noise")
    if kind != "modulated":
        raise ConfigurationError(f"unknown noise kind {kind!r}; choose from {NOISE_KINDS}")
    t = np.arange(n) / sample_rate
    b, a = sps.butter(2, [150.0, 3500.0], btype="bandpass", fs=sample_rate)
    x = np.zeros(n)
    for _ in range(3):
        src = sps.lfilter(b, a, rng.standard_normal(n))
        env = 0.15 + np.abs(np.sin(2 * np.pi * rng.uniform(0.8, 4.0) * t + rng.uniform(0, 2 * np.pi)))
        x += env * src
    x /= np.std(x)
    return Signal(x, sample_rate, "noise")


def mix_at_snr(clean: Signal, noise: Signal, snr_a_db: float) -> Signal:
    """Return ``clean + g * noise`` with ``g`` chosen to hit ``snr_a_db`` exactly."""
    if len(clean) != len(noise):
        raise InputError(f"length mismatch: clean {len(clean)} vs noise {len(noise)}")
    pc, pn = power(clean.samples), power(noise.samples)
    if pc == 0.0:
        raise InputError("clean signal has zero power")
    if pn == 0.0:
        raise InputError("noise signal has zero power")
    gain = np.sqrt(pc / (pn * 10.0 ** (snr_a_db / 10.0)))
    return Signal(clean.samples + gain * noise.samples, clean.sample_rate, "mixture", float(snr_a_db))


def measured_snr_db(clean: np.ndarray, mixture: np.ndarray) -> float:
    return float(10.0 * np.log10(power(clean) / power(np.asarray(mixture) - clean)))


# -- datasets ------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    # durations are multiples of 45 ms so every latency setting frames them exactly;
    # the 9 ms enhancer only sees 40 frames per item and overfits a smaller pool
    count: int = 400
    duration_s: float = 0.18
    test_count: int = 8
    test_duration_s: float = 1.8
    snr_a_range: tuple[float, float] = (-5.0, 12.0)
    split: tuple[float, float] = (0.8, 0.2)
    seed: int = 0
    noise_kinds: tuple[str, ...] = NOISE_KINDS
    sample_rate: int = SAMPLE_RATE
    clean_dir: str | None = None
    noise_dir: str | None = None

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ConfigurationError(f"split fractions must be non-negative and sum to 1, got {self.split}")
        lo, hi = self.snr_a_range
        if lo > hi:
            raise ConfigurationError(f"SNR range must be ordered, got {self.snr_a_range}")
        if self.count < 2 or self.test_count < 0:
            raise ConfigurationError("need at least two pool utterances")
        for k in self.noise_kinds:
            if k not in NOISE_KINDS:
                raise ConfigurationError(f"unknown noise kind {k!r}")


@dataclass
class Example:
    uid: str
    clean: np.ndarray
    noise: np.ndarray
    snr_a_db: float
    noise_kind: str
    noisy: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.noisy is None:
            self.noisy = self.remix(self.snr_a_db)

    def remix(self, snr_a_db: float) -> np.ndarray:
        return mix_at_snr(Signal(self.clean), Signal(self.noise, kind="noise"), snr_a_db).samples

    def at_snr(self, snr_a_db: float) -> "Example":
        return Example(self.uid, self.clean, self.noise, float(snr_a_db), self.noise_kind)


@dataclass
class Dataset:
    train: list[Example]
    validation: list[Example]
    test: list[Example]

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for split in (self.train, self.validation, self.test):
            for ex in split:
                h.update(ex.uid.encode())
                h.update(ex.noisy.tobytes())
        return h.hexdigest()


def _wav_pool(directory: str | None) -> list[np.ndarray]:
    if directory is None:
        return []
    files = sorted(Path(directory).glob("*.wav"))
    if not files:
        raise InputError(f"no .wav files in {directory}")
    return [read_wav(f).samples for f in files]


def _crop(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if x.size < n:
        x = np.tile(x, -(-n // x.size))
    start = int(rng.integers(0, x.size - n + 1))
    return x[start: start + n].copy()


def _make_example(spec: DatasetSpec, pool: int, index: int, n: int, cleans, noises) -> Example:
    ss = np.random.SeedSequence([spec.seed, pool, index])
    speech_seed, noise_seed, pick_seed = (int(s) for s in ss.generate_state(3))
    pick = np.random.default_rng(pick_seed)
    snr = float(pick.uniform(*spec.snr_a_range))
    kind = spec.noise_kinds[int(pick.integers(len(spec.noise_kinds)))]
    dur = n / spec.sample_rate
    if cleans:
        clean = _crop(cleans[index % len(cleans)], n, pick)
    else:
        clean = synth_speechlike(speech_seed, dur, spec.sample_rate).samples
    if noises:
        noise = _crop(noises[index % len(noises)], n, pick)
    else:
        noise = synth_noise(noise_seed, dur, kind, spec.sample_rate).samples
    return Example(f"p{pool}-{index:05d}", clean, noise, snr, kind)


def build_dataset(spec: DatasetSpec) -> Dataset:
    """Deterministic train / validation / test collections of (noisy, clean) pairs."""
    cleans, noises = _wav_pool(spec.clean_dir), _wav_pool(spec.noise_dir)
    n_pool = _n_samples(spec.duration_s, spec.sample_rate)
    n_test = _n_samples(spec.test_duration_s, spec.sample_rate)
    pool = [_make_example(spec, 0, i, n_pool, cleans, noises) for i in range(spec.count)]
    test = [_make_example(spec, 1, i, n_test, cleans, noises) for i in range(spec.test_count)]
    order = np.random.default_rng(np.random.SeedSequence([spec.seed, 2])).permutation(spec.count)
    n_train = int(round(spec.split[0] * spec.count))
    n_train = min(max(n_train, 1), spec.count - 1) if spec.split[1] > 0 else spec.count
    train = [pool[i] for i in sorted(order[:n_train])]
    val = [pool[i] for i in sorted(order[n_train:])]
    return Dataset(train, val, test)
