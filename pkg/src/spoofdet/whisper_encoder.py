"""Whisper tiny.en audio encoder used as a detection front-end.

The encoder follows the published architecture exactly: two GELU conv
layers (the second with stride 2), fixed sinusoidal position embeddings,
pre-norm residual attention blocks, and a final layernorm. Weight names
match the published checkpoints, so an official ``tiny.en`` file loads
directly; the decoder half is ignored. The tiny.en encoder has exactly
7,632,384 parameters (the position table is a fixed buffer, not a
parameter).

The log-mel input convention must match the published recipe bit-for-bit
or pretrained weights are meaningless: 80 slaney-normalized mel bands
over a 400-point / 160-hop spectrogram, log10 clamped at 1e-10, floored
8 dex under the per-clip max, then mapped through (x + 4) / 4.
"""

import hashlib
import io
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from spoofdet.cepstral import FeatureMap
from spoofdet.errors import (
    BadConfig,
    ChecksumMismatch,
    FrameMismatch,
    MissingTensors,
    ShapeMismatch,
)

N_MEL_FRAMES = 3000


@dataclass
class EncoderConfig:
    n_mels: int = 80
    n_ctx: int = 1500
    width: int = 384
    n_heads: int = 6
    n_layers: int = 4
    variant: str = "tiny.en"

    def __post_init__(self):
        if self.width % self.n_heads:
            raise BadConfig("width must be divisible by n_heads")
        if min(self.n_mels, self.n_ctx, self.width, self.n_heads, self.n_layers) <= 0:
            raise BadConfig("encoder dimensions must be positive")


TINY_EN = EncoderConfig()


def expected_param_count(cfg):
    """Analytic parameter count of the encoder at a given config."""
    w = cfg.width
    convs = cfg.n_mels * w * 3 + w + w * w * 3 + w
    per_block = 12 * w * w + 12 * w
    return convs + cfg.n_layers * per_block + 2 * w


def _hz_to_mel_slaney(freqs):
    freqs = np.asarray(freqs, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    logstep = np.log(6.4) / 27.0
    mels = freqs / f_sp
    log_part = min_log_hz / f_sp + np.log(np.maximum(freqs, min_log_hz) / min_log_hz) / logstep
    return np.where(freqs >= min_log_hz, log_part, mels)


def _mel_to_hz_slaney(mels):
    mels = np.asarray(mels, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_mel = 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    freqs = mels * f_sp
    log_part = 1000.0 * np.exp(logstep * (np.maximum(mels, min_log_mel) - min_log_mel))
    return np.where(mels >= min_log_mel, log_part, freqs)


@lru_cache(maxsize=4)
def mel_filterbank(n_mels=80, n_fft=400, sample_rate=16000):
    """Slaney-scale, area-normalized mel filters, (n_mels, n_fft // 2 + 1)."""
    fftfreqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    mel_edges = _mel_to_hz_slaney(
        np.linspace(_hz_to_mel_slaney(0.0), _hz_to_mel_slaney(sample_rate / 2.0), n_mels + 2)
    )
    fdiff = np.diff(mel_edges)
    ramps = mel_edges[:, None] - fftfreqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    enorm = 2.0 / (mel_edges[2 : n_mels + 2] - mel_edges[:n_mels])
    return weights * enorm[:, None]


def log_mel_t(wave, n_mels=80):
    """Log-mel spectrogram per the published recipe (differentiable)."""
    window = torch.hann_window(400, dtype=wave.dtype, device=wave.device)
    stft = torch.stft(wave, 400, 160, window=window, return_complex=True)
    magnitudes = stft[..., :-1].abs() ** 2
    filters = torch.as_tensor(mel_filterbank(n_mels), dtype=wave.dtype, device=wave.device)
    mel_spec = filters @ magnitudes
    log_spec = torch.clamp(mel_spec, min=1e-10).log10()
    maxes = log_spec.amax(dim=(-2, -1), keepdim=True)
    log_spec = torch.maximum(log_spec, maxes - 8.0)
    return (log_spec + 4.0) / 4.0


def log_mel(clip, n_mels=80):
    """Log-mel FeatureMap of a preprocessed clip: (n_mels, 3000)."""
    if clip.samples.ndim != 1:
        raise BadConfig("log_mel expects a mono clip")
    wave = torch.from_numpy(np.asarray(clip.samples, dtype=np.float32))
    spec = log_mel_t(wave, n_mels)
    return FeatureMap(spec.numpy(), "logmel", clip.utt_id)


def sinusoids(length, channels, max_timescale=10000):
    if channels % 2:
        raise BadConfig("sinusoid channels must be even")
    log_timescale_increment = np.log(max_timescale) / (channels // 2 - 1)
    inv_timescales = torch.exp(-log_timescale_increment * torch.arange(channels // 2))
    scaled_time = torch.arange(length)[:, None] * inv_timescales[None, :]
    return torch.cat([torch.sin(scaled_time), torch.cos(scaled_time)], dim=1)


class MultiHeadAttention(nn.Module):
    def __init__(self, n_state, n_head):
        super().__init__()
        self.n_head = n_head
        self.query = nn.Linear(n_state, n_state)
        self.key = nn.Linear(n_state, n_state, bias=False)
        self.value = nn.Linear(n_state, n_state)
        self.out = nn.Linear(n_state, n_state)

    def forward(self, x):
        q, k, v = self.query(x), self.key(x), self.value(x)
        batch, frames, width = q.shape
        scale = (width // self.n_head) ** -0.25
        q = q.view(batch, frames, self.n_head, -1).permute(0, 2, 1, 3) * scale
        k = k.view(batch, frames, self.n_head, -1).permute(0, 2, 3, 1) * scale
        v = v.view(batch, frames, self.n_head, -1).permute(0, 2, 1, 3)
        w = (q @ k).softmax(dim=-1)
        out = (w @ v).permute(0, 2, 1, 3).reshape(batch, frames, width)
        return self.out(out)


class ResidualAttentionBlock(nn.Module):
    def __init__(self, n_state, n_head):
        super().__init__()
        self.attn = MultiHeadAttention(n_state, n_head)
        self.attn_ln = nn.LayerNorm(n_state)
        self.mlp = nn.Sequential(
            nn.Linear(n_state, 4 * n_state), nn.GELU(), nn.Linear(4 * n_state, n_state)
        )
        self.mlp_ln = nn.LayerNorm(n_state)

    def forward(self, x):
        x = x + self.attn(self.attn_ln(x))
        x = x + self.mlp(self.mlp_ln(x))
        return x


class WhisperEncoder(nn.Module):
    """The audio encoder; weight names match published checkpoints."""

    _is_frontend_encoder = True

    def __init__(self, cfg=TINY_EN):
        super().__init__()
        self.cfg = cfg
        self.trainable = False
        self.conv1 = nn.Conv1d(cfg.n_mels, cfg.width, 3, padding=1)
        self.conv2 = nn.Conv1d(cfg.width, cfg.width, 3, stride=2, padding=1)
        self.register_buffer("positional_embedding", sinusoids(cfg.n_ctx, cfg.width))
        self.blocks = nn.ModuleList(
            ResidualAttentionBlock(cfg.width, cfg.n_heads) for _ in range(cfg.n_layers)
        )
        self.ln_post = nn.LayerNorm(cfg.width)
        self.requires_grad_(False)
        self.eval()

    def forward(self, mel):
        squeeze = mel.ndim == 2
        if squeeze:
            mel = mel[None]
        if mel.shape[-2] != self.cfg.n_mels or mel.shape[-1] != 2 * self.cfg.n_ctx:
            raise ShapeMismatch(
                f"expected mel of shape (*, {self.cfg.n_mels}, {2 * self.cfg.n_ctx}), "
                f"got {tuple(mel.shape)}"
            )
        x = F.gelu(self.conv1(mel))
        x = F.gelu(self.conv2(x))
        x = x.permute(0, 2, 1)
        x = x + self.positional_embedding.to(x.dtype)
        for block in self.blocks:
            x = block(x)
        x = self.ln_post(x)
        return x[0] if squeeze else x


def set_trainable(encoder, flag):
    """Toggle gradient participation of every encoder parameter."""
    encoder.requires_grad_(bool(flag))
    encoder.train(bool(flag))
    encoder.trainable = bool(flag)
    return encoder


def count_encoder_params(encoder):
    return sum(p.numel() for p in encoder.parameters())


def encode(encoder, mel):
    """Run the encoder on a log-mel map: (width, n_ctx) FeatureMap."""
    values = torch.from_numpy(np.asarray(mel.values, dtype=np.float32))
    was_training = encoder.training
    encoder.eval()
    with torch.no_grad():
        out = encoder(values)
    encoder.train(was_training)
    return FeatureMap(out.numpy().T.copy(), "whisper", mel.utt_id)


def replicate_time(feat, expect_frames=1500):
    """Tile the time axis twice: out[:, t] == feat[:, t mod n_frames]."""
    if feat.n_frames != expect_frames:
        raise ShapeMismatch(f"expected {expect_frames} frames, got {feat.n_frames}")
    return FeatureMap(np.tile(feat.values, (1, 2)), feat.frontend_tag, feat.utt_id)


def concat_frontends(whisper_feat, cepstral_feat):
    """Stack along the feature axis, encoder block first."""
    if whisper_feat.n_frames != cepstral_feat.n_frames:
        raise FrameMismatch(
            f"frame counts differ: {whisper_feat.n_frames} vs {cepstral_feat.n_frames}"
        )
    values = np.concatenate([whisper_feat.values, cepstral_feat.values], axis=0)
    tag = f"{whisper_feat.frontend_tag}+{cepstral_feat.frontend_tag}"
    return FeatureMap(values, tag, whisper_feat.utt_id or cepstral_feat.utt_id)


def _dims_dict(cfg):
    return {
        "n_mels": cfg.n_mels,
        "n_audio_ctx": cfg.n_ctx,
        "n_audio_state": cfg.width,
        "n_audio_head": cfg.n_heads,
        "n_audio_layer": cfg.n_layers,
        "variant": cfg.variant,
    }


def _config_from_dims(dims):
    return EncoderConfig(
        n_mels=int(dims["n_mels"]),
        n_ctx=int(dims["n_audio_ctx"]),
        width=int(dims["n_audio_state"]),
        n_heads=int(dims["n_audio_head"]),
        n_layers=int(dims["n_audio_layer"]),
        variant=str(dims.get("variant", "tiny.en")),
    )


def save_checkpoint(path, encoder):
    """Write the encoder in the published checkpoint layout."""
    state = {f"encoder.{k}": v for k, v in encoder.state_dict().items()}
    torch.save({"dims": _dims_dict(encoder.cfg), "model_state_dict": state}, path)


def random_encoder_checkpoint(path, cfg=TINY_EN, seed=0):
    """A deterministic randomly initialized checkpoint for desk-scale runs."""
    torch.manual_seed(seed)
    encoder = WhisperEncoder(cfg)
    save_checkpoint(path, encoder)
    return path


def load_encoder(path, expected_sha256=None):
    """Load encoder weights from a checkpoint file.

    Accepts the published full-model layout ({dims, model_state_dict});
    decoder tensors are ignored. The parameter count is verified against
    the architecture (7,632,384 for tiny.en dims).
    """
    raw = Path(path).read_bytes()
    if expected_sha256 is not None:
        digest = hashlib.sha256(raw).hexdigest()
        if digest != expected_sha256.lower():
            raise ChecksumMismatch(f"{path}: sha256 {digest} != expected {expected_sha256}")
    blob = torch.load(io.BytesIO(raw), map_location="cpu", weights_only=True)
    if not isinstance(blob, dict) or "dims" not in blob:
        raise MissingTensors(f"{path}: no 'dims' block in checkpoint")
    state = blob.get("model_state_dict") or blob.get("state_dict")
    if state is None:
        raise MissingTensors(f"{path}: no state dict in checkpoint")
    cfg = _config_from_dims(blob["dims"])
    encoder = WhisperEncoder(cfg)

    wanted = {f"encoder.{name}" for name, _ in encoder.named_parameters()}
    missing = sorted(wanted - set(state))
    if missing:
        raise MissingTensors(f"{path}: checkpoint lacks tensors: {', '.join(missing)}")
    enc_state = {
        k[len("encoder."):]: v for k, v in state.items() if k.startswith("encoder.")
    }
    enc_state.setdefault("positional_embedding", sinusoids(cfg.n_ctx, cfg.width))
    encoder.load_state_dict(enc_state, strict=True)

    count = count_encoder_params(encoder)
    expected = expected_param_count(cfg)
    if count != expected:
        raise MissingTensors(
            f"{path}: encoder has {count} parameters, architecture requires {expected}"
        )
    set_trainable(encoder, False)
    return encoder, cfg
