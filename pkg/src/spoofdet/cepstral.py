"""MFCC and LFCC front-ends with delta stacking.

Geometry: window 400, hop 160, 512-point FFT, 128 filters, 128 kept
coefficients; with delta and double-delta rows stacked the output is
(384, 3000) for a preprocessed 30 s clip.

All transforms are written in torch so the whole chain waveform ->
features is differentiable (needed for fine-tuning and input-gradient
analysis). The numpy-facing operations wrap the tensor functions.
"""

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from spoofdet.errors import BadConfig, ShapeMismatch, TooShort

VALID_TAGS = ("mfcc", "lfcc", "whisper", "whisper+mfcc", "whisper+lfcc")


@dataclass
class CepstralConfig:
    kind: str = "mfcc"
    n_coeffs: int = 128
    window: int = 400
    hop: int = 160
    n_fft: int = 512
    n_filters: int = 128
    sample_rate: int = 16000
    log_eps: float = 1e-10
    delta_window: int = 2

    def __post_init__(self):
        if self.kind not in ("mfcc", "lfcc"):
            raise BadConfig(f"unknown cepstral kind {self.kind!r}")
        if self.window > self.n_fft:
            raise BadConfig("window must not exceed n_fft")
        if self.hop > self.window:
            raise BadConfig("hop must not exceed window")
        if self.n_coeffs > self.n_filters:
            raise BadConfig("n_coeffs must not exceed n_filters")
        if min(self.n_coeffs, self.window, self.hop, self.n_fft,
               self.n_filters, self.sample_rate) <= 0:
            raise BadConfig("cepstral config values must be positive")

    @property
    def n_rows(self):
        """Feature rows after delta stacking."""
        return 3 * self.n_coeffs


def config_hash(cfg):
    blob = json.dumps(vars(cfg), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class FeatureMap:
    """A (feature_dim x n_frames) grid tagged with its provenance."""

    values: np.ndarray
    frontend_tag: str
    utt_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ShapeMismatch(f"feature map must be 2-D, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ShapeMismatch(f"feature map {self.utt_id!r} contains non-finite values")

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return self.values.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def filter_edges(cfg):
    """Edge frequencies (n_filters + 2) of the triangular filterbank."""
    f_max = cfg.sample_rate / 2.0
    if cfg.kind == "mfcc":
        return mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(f_max), cfg.n_filters + 2))
    return np.linspace(0.0, f_max, cfg.n_filters + 2)


def filterbank_matrix(cfg):
    """(n_filters, n_fft // 2 + 1) triangular filters with unit peak."""
    edges = filter_edges(cfg)
    freqs = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.sample_rate)
    lower = (freqs[None, :] - edges[:-2, None]) / (edges[1:-1, None] - edges[:-2, None])
    upper = (edges[2:, None] - freqs[None, :]) / (edges[2:, None] - edges[1:-1, None])
    return np.maximum(0.0, np.minimum(lower, upper))


def dct_matrix(n_coeffs, n_filters):
    """Orthonormal DCT-II analysis matrix (n_coeffs, n_filters)."""
    n = np.arange(n_filters, dtype=np.float64)
    k = np.arange(n_coeffs, dtype=np.float64)[:, None]
    mat = np.cos(np.pi * (2.0 * n[None, :] + 1.0) * k / (2.0 * n_filters))
    mat *= np.sqrt(2.0 / n_filters)
    mat[0] /= np.sqrt(2.0)
    return mat


def stft_power_t(wave, cfg):
    """Magnitude-squared STFT; center-padded, final frame dropped."""
    if wave.shape[-1] < cfg.window:
        raise TooShort(f"waveform of {wave.shape[-1]} samples is shorter than one window")
    window = torch.hann_window(cfg.window, dtype=wave.dtype, device=wave.device)
    spec = torch.stft(
        wave,
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        win_length=cfg.window,
        window=window,
        center=True,
        pad_mode="reflect",
        return_complex=True,
    )
    return spec[..., :-1].abs() ** 2


@lru_cache(maxsize=8)
def _filterbank_cached(cfg_key):
    return filterbank_matrix(CepstralConfig(**dict(cfg_key)))


def _as_tensor(matrix, like):
    return torch.as_tensor(matrix, dtype=like.dtype, device=like.device)


def apply_filterbank_t(power, cfg, matrix=None):
    if matrix is None:
        matrix = _filterbank_cached(tuple(sorted(vars(cfg).items())))
    return _as_tensor(matrix, power) @ power


def cepstral_t(fbank, cfg):
    mat = _as_tensor(dct_matrix(cfg.n_coeffs, cfg.n_filters), fbank)
    return mat @ torch.log(fbank + cfg.log_eps)


def deltas_t(feat, n=2):
    """Regression deltas over a +/-n frame window, edges replicated."""
    if feat.shape[-1] < 2 * n + 1:
        raise TooShort(f"need at least {2 * n + 1} frames for deltas, got {feat.shape[-1]}")
    denom = 2.0 * sum(i * i for i in range(1, n + 1))
    kernel = (torch.arange(-n, n + 1, dtype=feat.dtype, device=feat.device) / denom).view(1, 1, -1)
    shape = feat.shape
    flat = feat.reshape(-1, 1, shape[-1])
    padded = torch.nn.functional.pad(flat, (n, n), mode="replicate")
    return torch.nn.functional.conv1d(padded, kernel).reshape(shape)


def frontend_t(wave, cfg, filterbank=None):
    """Differentiable chain: waveform -> (3 * n_coeffs, n_frames)."""
    power = stft_power_t(wave, cfg)
    fbank = apply_filterbank_t(power, cfg, matrix=filterbank)
    ceps = cepstral_t(fbank, cfg)
    d1 = deltas_t(ceps, cfg.delta_window)
    d2 = deltas_t(d1, cfg.delta_window)
    return torch.cat([ceps, d1, d2], dim=0)


def _check_clip(clip, cfg):
    if clip.samples.ndim != 1:
        raise BadConfig("cepstral front-ends expect mono clips")
    if clip.rate != cfg.sample_rate:
        raise BadConfig(f"clip rate {clip.rate} != config rate {cfg.sample_rate}")


def power_spectrogram(clip, cfg):
    """Power STFT of a preprocessed clip: (n_fft // 2 + 1, n_frames)."""
    _check_clip(clip, cfg)
    wave = torch.from_numpy(np.asarray(clip.samples, dtype=np.float64))
    power = stft_power_t(wave, cfg)
    return FeatureMap(power.numpy().astype(np.float32), "spectrogram", clip.utt_id)


def apply_filterbank(spec, cfg, matrix=None):
    """Triangular filterbank energies: (n_filters, n_frames), non-negative."""
    if matrix is None:
        matrix = filterbank_matrix(cfg)
    if matrix.shape[1] != spec.n_rows:
        raise BadConfig(
            f"filterbank expects {matrix.shape[1]} spectrum bins, got {spec.n_rows}"
        )
    values = matrix.astype(np.float64) @ spec.values.astype(np.float64)
    return FeatureMap(values.astype(np.float32), "filterbank", spec.utt_id)


def cepstral_transform(fbank, cfg):
    """Orthonormal DCT-II of the log filterbank, first n_coeffs kept."""
    if (fbank.values < 0).any():
        raise BadConfig("filterbank energies must be non-negative")
    mat = dct_matrix(cfg.n_coeffs, cfg.n_filters)
    if mat.shape[1] != fbank.n_rows:
        raise BadConfig(f"DCT expects {mat.shape[1]} bands, got {fbank.n_rows}")
    values = mat @ np.log(fbank.values.astype(np.float64) + cfg.log_eps)
    return FeatureMap(values.astype(np.float32), "cepstra", fbank.utt_id)


def add_deltas(feat, n=2):
    """Stack [static; delta; double-delta] along the feature dimension."""
    if feat.n_frames < 2 * n + 1:
        raise TooShort(f"need at least {2 * n + 1} frames for deltas, got {feat.n_frames}")
    values = torch.from_numpy(feat.values.astype(np.float64))
    d1 = deltas_t(values, n)
    d2 = deltas_t(d1, n)
    out = torch.cat([values, d1, d2], dim=0).numpy().astype(np.float32)
    return FeatureMap(out, feat.frontend_tag, feat.utt_id)


def compute_frontend(clip, cfg, filterbank=None):
    """Full cepstral front-end of a preprocessed clip, tagged mfcc or lfcc."""
    _check_clip(clip, cfg)
    wave = torch.from_numpy(np.asarray(clip.samples, dtype=np.float64))
    feats = frontend_t(wave, cfg, filterbank=filterbank)
    return FeatureMap(feats.numpy().astype(np.float32), cfg.kind, clip.utt_id)
