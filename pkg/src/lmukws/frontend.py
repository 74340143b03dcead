"""Speech frontend: WAV ingestion, streaming log-mel features, dataset builds.

Features are 40-bin log-mel energies over 40 ms windows hopped every 20 ms at
16 kHz (49 frames per one-second clip), with per-bin mean/variance
normalization fitted on the training split.  A SHA-256 hash of the full
feature configuration, normalization included, is stored in model files so
an inference-side config drift is caught instead of silently skewing inputs.

Dataset directories follow the public keyword-spotting corpus layout: one
folder per word plus _background_noise_, file names "<speaker>_nohash_<take>
.wav", and the split is a pure hash of the speaker id so no speaker ever
straddles train/val/test.
"""

from __future__ import annotations

import hashlib
import os
import re
import wave
from dataclasses import dataclass, field, replace

import numpy as np

MAX_WAVS_PER_SPEAKER = 2**27 - 1  # hash-bucket modulus for stable splits


class WavFormatError(ValueError):
    """Raised for non-PCM16 / non-mono / wrong-rate WAV input."""


class DatasetError(ValueError):
    """Raised when a dataset directory is missing required pieces."""


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    window_ms: int = 40
    hop_ms: int = 20
    mel_bins: int = 40
    fft_size: int = 1024
    log_floor: float = 1e-6
    f_lo: float = 20.0
    f_hi: float = 7600.0
    norm_mean: tuple | None = None
    norm_std: tuple | None = None

    def __post_init__(self):
        if (self.sample_rate * self.window_ms) % 1000 or (self.sample_rate * self.hop_ms) % 1000:
            raise ValueError("window and hop must be whole sample counts")
        if self.fft_size < self.window_samples:
            raise ValueError(
                f"fft_size {self.fft_size} < window of {self.window_samples} samples"
            )
        if not 0 < self.f_lo < self.f_hi <= self.sample_rate / 2:
            raise ValueError("mel band must satisfy 0 < f_lo < f_hi <= Nyquist")

    @property
    def window_samples(self) -> int:
        return self.sample_rate * self.window_ms // 1000

    @property
    def hop_samples(self) -> int:
        return self.sample_rate * self.hop_ms // 1000

    @property
    def frames_per_second_clip(self) -> int:
        return (self.sample_rate - self.window_samples) // self.hop_samples + 1

    def config_hash(self) -> bytes:
        """SHA-256 digest of every field; guards train/serve feature skew."""
        parts = [
            f"sample_rate={self.sample_rate}",
            f"window_ms={self.window_ms}",
            f"hop_ms={self.hop_ms}",
            f"mel_bins={self.mel_bins}",
            f"fft_size={self.fft_size}",
            f"log_floor={self.log_floor!r}",
            f"f_lo={self.f_lo!r}",
            f"f_hi={self.f_hi!r}",
            f"norm_mean={None if self.norm_mean is None else [repr(v) for v in self.norm_mean]}",
            f"norm_std={None if self.norm_std is None else [repr(v) for v in self.norm_std]}",
        ]
        return hashlib.sha256("\n".join(parts).encode()).digest()


def save_feature_config(config: FeatureConfig, path) -> None:
    """Persist a feature config (with fitted normalization) as an npz sidecar.

    Values round-trip exactly, so the loaded config's hash matches the digest
    a model trained with it carries.
    """
    has_norm = config.norm_mean is not None
    np.savez(
        path,
        sample_rate=config.sample_rate, window_ms=config.window_ms,
        hop_ms=config.hop_ms, mel_bins=config.mel_bins,
        fft_size=config.fft_size, log_floor=config.log_floor,
        f_lo=config.f_lo, f_hi=config.f_hi, has_norm=has_norm,
        norm_mean=np.asarray(config.norm_mean if has_norm else [], dtype=np.float64),
        norm_std=np.asarray(config.norm_std if has_norm else [], dtype=np.float64),
    )


def load_feature_config(path) -> FeatureConfig:
    with np.load(path) as z:
        has_norm = bool(z["has_norm"])
        return FeatureConfig(
            sample_rate=int(z["sample_rate"]), window_ms=int(z["window_ms"]),
            hop_ms=int(z["hop_ms"]), mel_bins=int(z["mel_bins"]),
            fft_size=int(z["fft_size"]), log_floor=float(z["log_floor"]),
            f_lo=float(z["f_lo"]), f_hi=float(z["f_hi"]),
            norm_mean=tuple(float(v) for v in z["norm_mean"]) if has_norm else None,
            norm_std=tuple(float(v) for v in z["norm_std"]) if has_norm else None,
        )


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FeatureConfig) -> np.ndarray:
    """Triangular mel filters, (mel_bins, fft_size // 2 + 1)."""
    pts_hz = mel_to_hz(
        np.linspace(hz_to_mel(config.f_lo), hz_to_mel(config.f_hi), config.mel_bins + 2)
    )
    freqs = np.arange(config.fft_size // 2 + 1) * config.sample_rate / config.fft_size
    bank = np.zeros((config.mel_bins, freqs.size))
    for i in range(config.mel_bins):
        lo, ctr, hi = pts_hz[i], pts_hz[i + 1], pts_hz[i + 2]
        rising = (freqs - lo) / (ctr - lo)
        falling = (hi - freqs) / (hi - ctr)
        bank[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def _periodic_hann(n: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


class _FrontendKernels:
    """Per-config cached window and filterbank (pure function of the config)."""

    _cache: dict = {}

    @classmethod
    def get(cls, config: FeatureConfig):
        key = (config.sample_rate, config.window_ms, config.mel_bins,
               config.fft_size, config.f_lo, config.f_hi)
        if key not in cls._cache:
            cls._cache[key] = (
                _periodic_hann(config.window_samples),
                mel_filterbank(config),
            )
        return cls._cache[key]


def power_spectrum(windowed: np.ndarray, fft_size: int) -> np.ndarray:
    """One-sided power spectrum scaled so its sum equals sum(windowed**2)."""
    spec = np.fft.rfft(windowed, n=fft_size)
    power = (spec.real**2 + spec.imag**2) / fft_size
    power[1 : (fft_size + 1) // 2] *= 2.0  # fold negative frequencies in
    return power


def log_mel_frame(samples: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """One feature frame from exactly one window of samples (no normalization)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape != (config.window_samples,):
        raise ValueError(f"expected {config.window_samples} samples, got {samples.shape}")
    window, bank = _FrontendKernels.get(config)
    power = power_spectrum(samples * window, config.fft_size)
    return np.log(bank @ power + config.log_floor)


def apply_normalization(frames: np.ndarray, config: FeatureConfig) -> np.ndarray:
    if config.norm_mean is None:
        return frames
    mean = np.asarray(config.norm_mean)
    std = np.asarray(config.norm_std)
    return (frames - mean) / std


def featurize_signal(samples: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """All complete frames of an arbitrary-length signal, normalized."""
    samples = np.asarray(samples, dtype=np.float64)
    w, hop = config.window_samples, config.hop_samples
    if samples.size < w:
        raise ValueError(f"signal shorter than one window ({samples.size} < {w})")
    n_frames = (samples.size - w) // hop + 1
    frames = np.stack(
        [log_mel_frame(samples[t * hop : t * hop + w], config) for t in range(n_frames)]
    )
    return apply_normalization(frames, config)


def featurize_utterance(samples: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """Feature sequence of a one-second clip (49 frames at the defaults)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size != config.sample_rate:
        raise ValueError(
            f"utterance must be exactly 1 s = {config.sample_rate} samples, got {samples.size}"
        )
    return featurize_signal(samples, config)


class StreamFeaturizer:
    """Hop-by-hop featurizer; output is bit-identical to offline framing.

    Single-owner: one audio stream per instance.  Samples are buffered until
    a full window exists, then one frame is emitted per hop.
    """

    def __init__(self, config: FeatureConfig):
        self.config = config
        self._pending = np.zeros(0)

    def reset(self) -> None:
        self._pending = np.zeros(0)

    def push(self, chunk: np.ndarray) -> list:
        """Feed any number of samples; returns the frames completed by them."""
        self._pending = np.concatenate([self._pending, np.asarray(chunk, dtype=np.float64)])
        w, hop = self.config.window_samples, self.config.hop_samples
        frames = []
        while self._pending.size >= w:
            frames.append(
                apply_normalization(log_mel_frame(self._pending[:w], self.config), self.config)
            )
            self._pending = self._pending[hop:]
        return frames


# ---------------------------------------------------------------------------
# WAV I/O (PCM16 mono only; no silent resampling)
# ---------------------------------------------------------------------------

def load_wav(path, expected_rate: int = 16000) -> np.ndarray:
    """Read a PCM16 mono WAV into float64 in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as f:
            if f.getnchannels() != 1:
                raise WavFormatError(f"{path}: expected mono, got {f.getnchannels()} channels")
            if f.getsampwidth() != 2:
                raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
            if f.getframerate() != expected_rate:
                raise WavFormatError(
                    f"{path}: expected {expected_rate} Hz, got {f.getframerate()} Hz"
                )
            raw = f.readframes(f.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: not a valid WAV file ({exc})") from exc
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, samples: np.ndarray, rate: int = 16000) -> None:
    pcm = np.clip(np.rint(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(rate)
        f.writeframes(pcm.tobytes())


def pad_or_crop(samples: np.ndarray, length: int) -> np.ndarray:
    """Front-pad with zeros (keeps speech near the end) or crop to length."""
    if samples.size >= length:
        return samples[-length:]
    out = np.zeros(length)
    out[length - samples.size :] = samples
    return out


# ---------------------------------------------------------------------------
# Splits and dataset manifests
# ---------------------------------------------------------------------------

SILENCE_LABEL = 10
UNKNOWN_LABEL = 11
BACKGROUND_DIR = "_background_noise_"


def which_set(filename: str, val_pct: float = 10.0, test_pct: float = 10.0) -> str:
    """Stable split assignment from the speaker id; all takes stay together."""
    base = os.path.basename(filename)
    if "_nohash_" not in base:
        raise ValueError(f"{filename!r} has no '_nohash_' speaker separator")
    speaker = re.sub(r"_nohash_.*$", "", base)
    digest = hashlib.sha1(speaker.encode("utf-8")).hexdigest()
    pct = (int(digest, 16) % (MAX_WAVS_PER_SPEAKER + 1)) * (100.0 / MAX_WAVS_PER_SPEAKER)
    if pct < val_pct:
        return "val"
    if pct < val_pct + test_pct:
        return "test"
    return "train"


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the dataset root
    label: int
    split: str


@dataclass
class Manifest:
    root: str
    label_names: list
    entries: list = field(default_factory=list)

    def split_entries(self, split: str) -> list:
        return [e for e in self.entries if e.split == split]

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write("# labels: " + ",".join(self.label_names) + "\n")
            for e in self.entries:
                f.write(f"{e.path}\t{e.label}\t{e.split}\n")

    @classmethod
    def load(cls, path, root) -> "Manifest":
        labels = None
        entries = []
        with open(path) as f:
            for line in f:
                line = line.rstrip("\n")
                if line.startswith("# labels: "):
                    labels = line[len("# labels: ") :].split(",")
                    continue
                if not line or line.startswith("#"):
                    continue
                p, label, split = line.split("\t")
                entries.append(ManifestEntry(path=p, label=int(label), split=split))
        if labels is None or len(labels) != 12:
            raise DatasetError(f"{path}: manifest missing its 12-name label header")
        return cls(root=str(root), label_names=labels, entries=entries)


def twelve_label_names(keywords) -> list:
    """10 keyword slots + silence + unknown; short keyword lists pad the tail."""
    keywords = list(keywords)
    if len(keywords) > 10:
        raise ValueError("at most 10 keywords")
    names = keywords + [f"(unused{i})" for i in range(len(keywords), 10)]
    return names + ["_silence_", "_unknown_"]


def build_dataset(
    root,
    keywords,
    silence_frac: float = 0.1,
    unknown_frac: float = 0.1,
    seed: int = 0,
) -> Manifest:
    """Scan a dataset directory into a 12-label manifest.

    Keyword clips keep their hash split.  Unknown clips are drawn from
    non-keyword words (keeping their own hash split, so no speaker leaks);
    silence entries reference background-noise files and are spread across
    splits in an 80/10/10 pattern.  Fractions are relative to the keyword
    clip count.
    """
    root = str(root)
    keywords = list(keywords)
    if not os.path.isdir(root):
        raise DatasetError(f"dataset root {root!r} does not exist")
    words = sorted(
        d for d in os.listdir(root)
        if os.path.isdir(os.path.join(root, d)) and d != BACKGROUND_DIR
    )
    missing = [k for k in keywords if k not in words]
    if missing:
        raise DatasetError(f"keyword folders missing under {root!r}: {missing}")
    bg_dir = os.path.join(root, BACKGROUND_DIR)
    if not os.path.isdir(bg_dir):
        raise DatasetError(f"missing {BACKGROUND_DIR} under {root!r}")
    bg_files = sorted(f for f in os.listdir(bg_dir) if f.endswith(".wav"))
    if not bg_files:
        raise DatasetError(f"no background noise files under {bg_dir!r}")

    entries = []
    n_keyword = 0
    for word in keywords:
        for fname in sorted(os.listdir(os.path.join(root, word))):
            if not fname.endswith(".wav"):
                continue
            entries.append(
                ManifestEntry(
                    path=f"{word}/{fname}", label=keywords.index(word), split=which_set(fname)
                )
            )
            n_keyword += 1

    rng = np.random.default_rng(seed)
    unknown_pool = []
    for word in words:
        if word in keywords:
            continue
        for fname in sorted(os.listdir(os.path.join(root, word))):
            if fname.endswith(".wav"):
                unknown_pool.append((f"{word}/{fname}", which_set(fname)))
    n_unknown = min(len(unknown_pool), int(round(unknown_frac * n_keyword)))
    if unknown_pool:
        picks = rng.choice(len(unknown_pool), size=n_unknown, replace=False)
        for i in sorted(picks):
            path, split = unknown_pool[i]
            entries.append(ManifestEntry(path=path, label=UNKNOWN_LABEL, split=split))

    n_silence = int(round(silence_frac * n_keyword))
    split_cycle = ["train"] * 8 + ["val", "test"]
    for i in range(n_silence):
        entries.append(
            ManifestEntry(
                path=f"{BACKGROUND_DIR}/{bg_files[i % len(bg_files)]}",
                label=SILENCE_LABEL,
                split=split_cycle[i % 10],
            )
        )
    return Manifest(root=root, label_names=twelve_label_names(keywords), entries=entries)


def _silence_offset(entry_path: str, index: int, n_samples: int, clip_len: int) -> int:
    """Deterministic crop offset into a background file for a silence entry."""
    digest = hashlib.sha256(f"{entry_path}#{index}".encode()).digest()
    span = max(n_samples - clip_len, 1)
    return int.from_bytes(digest[:8], "little") % span


@dataclass
class FeatureDataset:
    """Materialized features for training: (N, T, mel_bins) per split."""

    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    label_names: list
    config: FeatureConfig

    @property
    def frontend_hash(self) -> bytes:
        return self.config.config_hash()


def materialize_features(manifest: Manifest, config: FeatureConfig) -> FeatureDataset:
    """Load audio, featurize, and fit train-split normalization.

    The returned dataset's config carries the fitted per-bin mean/std, so its
    hash pins the complete train-time feature function.
    """
    clip_len = config.sample_rate
    raw = {"train": [], "val": [], "test": []}
    labels = {"train": [], "val": [], "test": []}
    base = replace(config, norm_mean=None, norm_std=None)
    for i, entry in enumerate(manifest.entries):
        samples = load_wav(os.path.join(manifest.root, entry.path), config.sample_rate)
        if entry.label == SILENCE_LABEL:
            off = _silence_offset(entry.path, i, samples.size, clip_len)
            samples = pad_or_crop(samples[off : off + clip_len], clip_len)
        else:
            samples = pad_or_crop(samples, clip_len)
        raw[entry.split].append(featurize_utterance(samples, base))
        labels[entry.split].append(entry.label)
    if not raw["train"]:
        raise DatasetError("manifest has no training entries")
    train = np.stack(raw["train"])
    mean = train.reshape(-1, config.mel_bins).mean(axis=0)
    std = train.reshape(-1, config.mel_bins).std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    fitted = replace(
        config, norm_mean=tuple(float(v) for v in mean), norm_std=tuple(float(v) for v in std)
    )

    def pack(split):
        if not raw[split]:
            return (np.zeros((0, train.shape[1], config.mel_bins)), np.zeros(0, dtype=np.int64))
        x = (np.stack(raw[split]) - mean) / std
        return x, np.asarray(labels[split], dtype=np.int64)

    tx, ty = pack("train")
    vx, vy = pack("val")
    sx, sy = pack("test")
    return FeatureDataset(
        train_x=tx, train_y=ty, val_x=vx, val_y=vy, test_x=sx, test_y=sy,
        label_names=manifest.label_names, config=fitted,
    )


# ---------------------------------------------------------------------------
# Synthetic toy corpus (desk-scale stand-in for the real download)
# ---------------------------------------------------------------------------

TOY_WORD_TONES = {
    # word -> (fundamental Hz, formant Hz); far apart so classes separate
    "yes": (320.0, 2200.0),
    "no": (480.0, 900.0),
    "wow": (260.0, 1500.0),
    "zero": (600.0, 3000.0),
    "left": (380.0, 2600.0),
    "right": (540.0, 1200.0),
}


def _synth_word(rng, word: str, rate: int) -> np.ndarray:
    """One-second clip with a word-specific two-tone burst near the end."""
    f0, f1 = TOY_WORD_TONES[word]
    jitter = 1.0 + 0.03 * rng.standard_normal()
    n = rate
    t = np.arange(n) / rate
    start = 0.35 + 0.1 * rng.random()
    dur = 0.45
    env = np.exp(-0.5 * ((t - (start + dur / 2)) / (dur / 4)) ** 2)
    sweep = 1.0 + 0.05 * np.sin(2 * np.pi * 3.0 * t)
    sig = env * (
        np.sin(2 * np.pi * f0 * jitter * t)
        + 0.6 * np.sin(2 * np.pi * f1 * jitter * sweep * t)
    )
    sig += 0.01 * rng.standard_normal(n)
    return 0.4 * sig / np.max(np.abs(sig))


def generate_toy_dataset(
    root,
    keywords=("yes", "no"),
    unknown_words=("wow", "zero"),
    speakers: int = 40,
    takes: int = 3,
    seed: int = 0,
) -> None:
    """Write a small synthetic corpus in the real dataset's directory layout.

    Words are distinct tone bursts, speakers add pitch jitter, and file names
    carry synthetic speaker ids so which_set exercises the real split logic.
    """
    rate = 16000
    rng = np.random.default_rng(seed)
    for word in list(keywords) + list(unknown_words):
        if word not in TOY_WORD_TONES:
            raise ValueError(f"no synthetic recipe for word {word!r}")
        word_dir = os.path.join(str(root), word)
        os.makedirs(word_dir, exist_ok=True)
        for sid in range(speakers):
            for take in range(takes):
                name = f"spk{sid:04d}_nohash_{take}.wav"
                write_wav(os.path.join(word_dir, name), _synth_word(rng, word, rate), rate)
    bg_dir = os.path.join(str(root), BACKGROUND_DIR)
    os.makedirs(bg_dir, exist_ok=True)
    for i in range(3):
        noise = rng.standard_normal(10 * rate)
        # crude low-pass so the "room noise" is not white
        kernel = np.ones(8) / 8.0
        noise = np.convolve(noise, kernel, mode="same")
        write_wav(os.path.join(bg_dir, f"noise_{i}.wav"), 0.05 * noise, rate)
