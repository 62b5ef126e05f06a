"""Waveform loading and the standard preprocessing chain.

Every recording is normalized to the same representation before feature
extraction: 16 kHz mono, long silences removed, padded by repetition or
trimmed to exactly 30 s (480000 samples).
"""

import hashlib
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.io.wavfile

from spoofdet import flac
from spoofdet._kernels import frame_rms, resample_sinc
from spoofdet.errors import AllSilent, BadConfig, EmptyAudio, UnreadableFile

TARGET_RATE = 16000
TARGET_SECONDS = 30.0
TARGET_SAMPLES = 480000


@dataclass
class AudioClip:
    """A waveform with its sample rate and dataset identity.

    ``samples`` is float32 in [-1, 1]; mono clips are 1-D, multi-channel
    clips are (n_samples, n_channels).
    """

    samples: np.ndarray
    rate: int
    utt_id: str = ""
    label: str | None = None

    def __post_init__(self):
        if self.rate <= 0:
            raise BadConfig(f"sample rate must be positive, got {self.rate}")
        if self.samples.shape[0] == 0:
            raise EmptyAudio(f"clip {self.utt_id!r} has no samples")

    @property
    def n_channels(self):
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration_s(self):
        return self.samples.shape[0] / self.rate


@dataclass
class SilencePolicy:
    """Frame-energy silence detector settings.

    A maximal run of sub-threshold frames longer than ``min_silence_s``
    is dropped; shorter quiet stretches are kept.
    """

    min_silence_s: float = 0.2
    energy_floor_db: float = -60.0
    frame_ms: float = 20.0

    def __post_init__(self):
        if self.min_silence_s <= 0:
            raise BadConfig("min_silence_s must be positive")
        if self.frame_ms <= 0:
            raise BadConfig("frame_ms must be positive")


def _normalize_int(data):
    if data.dtype == np.int16:
        return data.astype(np.float32) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float32) / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float32) - 128.0) / 128.0
    return data.astype(np.float32)


def load_audio(path, utt_id=None, label=None):
    """Decode a wav or flac file into an AudioClip.

    Integer PCM is scaled to [-1, 1] by its full-scale value; if a float
    container exceeds unit range the clip is rescaled by its peak.
    Multi-channel content is preserved (use ``to_mono`` to downmix).
    """
    path = Path(path)
    if not path.is_file():
        raise UnreadableFile(f"{path}: no such file")
    with open(path, "rb") as fh:
        magic = fh.read(4)

    if magic == b"fLaC":
        data, rate, bps = flac.read(path)
        samples = data.astype(np.float32) / float(1 << (bps - 1))
        if data.shape[1] == 1:
            samples = samples[:, 0]
    elif magic == b"RIFF":
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rate, data = scipy.io.wavfile.read(path)
        except Exception as exc:
            raise UnreadableFile(f"{path}: {exc}") from exc
        samples = _normalize_int(np.atleast_1d(data))
    else:
        raise UnreadableFile(f"{path}: unsupported container (expected wav or flac)")

    if samples.shape[0] == 0:
        raise EmptyAudio(f"{path}: zero samples")
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak > 1.0:
        samples = samples / peak
    return AudioClip(
        samples=samples,
        rate=int(rate),
        utt_id=utt_id if utt_id is not None else path.stem,
        label=label,
    )


def to_mono(clip):
    """Downmix to a single channel by averaging; mono passes through."""
    if clip.samples.ndim == 1:
        return clip
    mono = clip.samples.mean(axis=1, dtype=np.float64).astype(np.float32)
    return replace(clip, samples=mono)


def resample(clip, target_rate):
    """Band-limited resampling; identity rates return the clip unchanged."""
    if target_rate <= 0:
        raise BadConfig(f"target rate must be positive, got {target_rate}")
    if clip.rate == target_rate:
        return clip
    if clip.samples.ndim == 1:
        out = resample_sinc(clip.samples, clip.rate, target_rate).astype(np.float32)
    else:
        cols = [
            resample_sinc(clip.samples[:, c], clip.rate, target_rate)
            for c in range(clip.samples.shape[1])
        ]
        out = np.stack(cols, axis=1).astype(np.float32)
    return replace(clip, samples=out, rate=int(target_rate))


def trim_silences(clip, policy=None):
    """Remove every maximal quiet run longer than the policy threshold.

    Quiet means frame RMS below ``energy_floor_db`` dBFS over
    non-overlapping ``frame_ms`` frames. Raises AllSilent when nothing
    would remain; ``preprocess`` falls back to the untrimmed clip.
    """
    policy = policy or SilencePolicy()
    if clip.samples.ndim != 1:
        raise BadConfig("trim_silences expects a mono clip")
    frame_len = int(round(policy.frame_ms / 1000.0 * clip.rate))
    if frame_len <= 0:
        raise BadConfig("frame_ms too small for this sample rate")
    x = clip.samples
    rms = frame_rms(x.astype(np.float64), frame_len, frame_len)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(rms)
    silent = db < policy.energy_floor_db

    max_frames = int(policy.min_silence_s / (policy.frame_ms / 1000.0))
    keep = np.ones(x.shape[0], dtype=bool)
    i = 0
    n_frames = silent.shape[0]
    while i < n_frames:
        if not silent[i]:
            i += 1
            continue
        j = i
        while j < n_frames and silent[j]:
            j += 1
        if j - i > max_frames:
            keep[i * frame_len : min(j * frame_len, x.shape[0])] = False
        i = j

    if not keep.any():
        raise AllSilent(f"clip {clip.utt_id!r} is silent throughout")
    if keep.all():
        return clip
    return replace(clip, samples=x[keep])


def fit_duration(clip, target_s=TARGET_SECONDS):
    """Tile short clips (full repeats, then a truncated one) or cut long
    ones so the output lasts exactly ``target_s`` seconds."""
    n_target = int(round(target_s * clip.rate))
    n = clip.samples.shape[0]
    if n == n_target:
        return clip
    if n > n_target:
        return replace(clip, samples=clip.samples[:n_target])
    reps = -(-n_target // n)
    tiled = np.tile(clip.samples, reps)[:n_target]
    return replace(clip, samples=tiled)


def preprocess_clip(clip, policy=None, target_rate=TARGET_RATE, target_s=TARGET_SECONDS):
    """Normalize a loaded clip: mono, resample, trim silences, fix length."""
    clip = to_mono(clip)
    clip = resample(clip, target_rate)
    try:
        clip = trim_silences(clip, policy)
    except AllSilent:
        pass  # keep the raw clip so every dataset row still yields a score
    return fit_duration(clip, target_s)


def preprocess(path, policy=None, target_rate=TARGET_RATE, target_s=TARGET_SECONDS,
               utt_id=None, label=None):
    """Load and normalize a recording into the canonical representation."""
    clip = load_audio(path, utt_id=utt_id, label=label)
    return preprocess_clip(clip, policy=policy, target_rate=target_rate, target_s=target_s)


def preprocess_config_hash(policy=None, target_rate=TARGET_RATE, target_s=TARGET_SECONDS):
    policy = policy or SilencePolicy()
    blob = json.dumps(
        {
            "min_silence_s": policy.min_silence_s,
            "energy_floor_db": policy.energy_floor_db,
            "frame_ms": policy.frame_ms,
            "target_rate": target_rate,
            "target_s": target_s,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class PreprocessCache:
    """Optional on-disk cache of preprocessed waveforms.

    One raw float32 array per utterance, keyed by utt_id and the
    preprocessing-config hash.
    """

    directory: Path
    policy: SilencePolicy = field(default_factory=SilencePolicy)
    target_rate: int = TARGET_RATE
    target_s: float = TARGET_SECONDS

    def __post_init__(self):
        self.directory = Path(self.directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._hash = preprocess_config_hash(self.policy, self.target_rate, self.target_s)

    def _path(self, utt_id):
        return self.directory / f"{utt_id}_{self._hash}.f32"

    def get(self, path, utt_id, label=None):
        cached = self._path(utt_id)
        if cached.is_file():
            samples = np.fromfile(cached, dtype=np.float32)
            return AudioClip(samples=samples, rate=self.target_rate, utt_id=utt_id, label=label)
        clip = preprocess(path, policy=self.policy, target_rate=self.target_rate,
                          target_s=self.target_s, utt_id=utt_id, label=label)
        clip.samples.tofile(cached)
        return clip
