"""The three spectrogram-feature detectors.

All three follow their source architectures with the modifications that
make them front-end agnostic:

* LCNN: max-feature-map conv stack feeding two bi-LSTM layers and a
  linear head. The bi-LSTM width is tied to the input height as
  (rows // 16) * 32, so 80-row features give the original width 160
  (467,425 parameters) and 384-row features give the widened 768.
* MesoInception-4: bias-free inception and conv stages with a shared
  norm layer, plus adaptive 1-D average pooling right before the first
  fully connected layer so any flattened size maps to 1024 (28,486
  parameters).
* SpecRNet: three residual 2-D conv blocks with squeeze-style attention,
  a bi-GRU and two linear layers, plus adaptive 2-D average pooling
  after the last SELU so any front-end height collapses to the GRU's
  input size (277,963 parameters).

Every model returns a single logit per sample; ``forward`` applies the
sigmoid, so scores are the probability that a sample is spoofed.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from spoofdet.errors import BadConfig, IncompatibleCheckpoint, ShapeMismatch

ARCHS = ("lcnn", "mesonet", "specrnet")

# Parameter counts at the reference configurations.
EXPECTED_PARAMS = {"lcnn": 467_425, "mesonet": 28_486, "specrnet": 277_963}
# Input height at which each reference count is realized. LCNN's published
# count corresponds to the pre-widening bi-LSTM width of 160 (80-row
# features); MesoNet and SpecRNet counts are height-independent.
REFERENCE_INPUT_DIM = {"lcnn": 80, "mesonet": 384, "specrnet": 384}


@dataclass
class ModelSpec:
    arch: str
    input_dim: int
    expected_params: int | None = None

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise BadConfig(f"unknown arch {self.arch!r}")
        if self.input_dim <= 0:
            raise BadConfig("input_dim must be positive")


@dataclass
class ScoreBatch:
    utt_ids: list
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if len(self.utt_ids) != self.scores.shape[0]:
            raise ShapeMismatch("one score per utterance required")
        if not np.isfinite(self.scores).all():
            raise ShapeMismatch("scores must be finite")


class MaxFeatureMap2d(nn.Module):
    """Split channels in two and take the elementwise max."""

    def forward(self, x):
        a, b = x.chunk(2, dim=1)
        return torch.max(a, b)


class BlstmLayer(nn.Module):
    """Bi-LSTM whose output width equals its input width."""

    def __init__(self, input_dim, output_dim):
        super().__init__()
        if output_dim % 2:
            raise BadConfig("bi-LSTM output width must be even")
        self.lstm = nn.LSTM(input_dim, output_dim // 2, bidirectional=True, batch_first=True)

    def forward(self, x):
        return self.lstm(x)[0]


class LCNN(nn.Module):
    def __init__(self, input_dim):
        super().__init__()
        if input_dim < 16:
            raise BadConfig("LCNN needs an input height of at least 16")
        self.input_dim = input_dim
        width = (input_dim // 16) * 32
        self.transform = nn.Sequential(
            nn.Conv2d(1, 64, 5, 1, padding=2),
            MaxFeatureMap2d(),
            nn.MaxPool2d(2, 2),
            nn.Conv2d(32, 64, 1, 1, padding=0),
            MaxFeatureMap2d(),
            nn.BatchNorm2d(32, affine=False),
            nn.Conv2d(32, 96, 3, 1, padding=1),
            MaxFeatureMap2d(),
            nn.MaxPool2d(2, 2),
            nn.BatchNorm2d(48, affine=False),
            nn.Conv2d(48, 96, 1, 1, padding=0),
            MaxFeatureMap2d(),
            nn.BatchNorm2d(48, affine=False),
            nn.Conv2d(48, 128, 3, 1, padding=1),
            MaxFeatureMap2d(),
            nn.MaxPool2d(2, 2),
            nn.Conv2d(64, 128, 1, 1, padding=0),
            MaxFeatureMap2d(),
            nn.BatchNorm2d(64, affine=False),
            nn.Conv2d(64, 64, 3, 1, padding=1),
            MaxFeatureMap2d(),
            nn.BatchNorm2d(32, affine=False),
            nn.Conv2d(32, 64, 1, 1, padding=0),
            MaxFeatureMap2d(),
            nn.BatchNorm2d(32, affine=False),
            nn.Conv2d(32, 64, 3, 1, padding=1),
            MaxFeatureMap2d(),
            nn.MaxPool2d(2, 2),
            nn.Dropout(0.7),
        )
        self.blstm = nn.Sequential(BlstmLayer(width, width), BlstmLayer(width, width))
        self.head = nn.Linear(width, 1)

    def forward(self, feats):
        if feats.shape[1] != self.input_dim:
            raise ShapeMismatch(f"expected {self.input_dim} rows, got {feats.shape[1]}")
        # (batch, rows, frames) -> (batch, 1, frames, rows): time runs on the
        # conv height so pooling divides both axes by 16.
        x = feats.transpose(1, 2).unsqueeze(1).contiguous(memory_format=torch.channels_last)
        h = self.transform(x)
        h = h.permute(0, 2, 1, 3).flatten(2)
        r = self.blstm(h)
        return self.head((h + r).mean(dim=1)).squeeze(-1)


class _Inception(nn.Module):
    """Four dilated conv branches, concatenated (bias-free)."""

    def __init__(self, n_in, a, b, c, d):
        super().__init__()
        self.conv1 = nn.Conv2d(n_in, a, 1, bias=False)
        self.conv2_1 = nn.Conv2d(n_in, b, 1, bias=False)
        self.conv2_2 = nn.Conv2d(b, b, 3, padding=1, bias=False)
        self.conv3_1 = nn.Conv2d(n_in, c, 1, bias=False)
        self.conv3_2 = nn.Conv2d(c, c, 3, padding=2, dilation=2, bias=False)
        self.conv4_1 = nn.Conv2d(n_in, d, 1, bias=False)
        self.conv4_2 = nn.Conv2d(d, d, 3, padding=3, dilation=3, bias=False)

    def forward(self, x):
        return torch.cat(
            [
                self.conv1(x),
                self.conv2_2(self.conv2_1(x)),
                self.conv3_2(self.conv3_1(x)),
                self.conv4_2(self.conv4_1(x)),
            ],
            dim=1,
        )


class MesoInception4(nn.Module):
    def __init__(self, input_dim=384, fc1_dim=1024):
        super().__init__()
        self.input_dim = input_dim
        self.fc1_dim = fc1_dim
        self.inception1 = _Inception(1, 1, 4, 4, 2)
        self.bn1 = nn.BatchNorm2d(11)
        self.inception2 = _Inception(11, 2, 4, 4, 2)
        self.bn2 = nn.BatchNorm2d(12)
        self.conv1 = nn.Conv2d(12, 16, 5, padding=2, bias=False)
        self.conv2 = nn.Conv2d(16, 16, 5, padding=2, bias=False)
        # one norm layer shared by both conv stages
        self.bn_conv = nn.BatchNorm2d(16)
        self.pool2 = nn.MaxPool2d(2)
        self.pool4 = nn.MaxPool2d(4)
        self.relu = nn.ReLU()
        self.leakyrelu = nn.LeakyReLU(0.1)
        self.dropout = nn.Dropout(0.5)
        # any flattened conv output maps onto the fc input size
        self.pool_flat = nn.AdaptiveAvgPool1d(fc1_dim)
        self.fc1 = nn.Linear(fc1_dim, 16)
        self.fc2 = nn.Linear(16, 1)

    def forward(self, feats):
        x = feats.unsqueeze(1).contiguous(memory_format=torch.channels_last)
        x = self.pool2(self.bn1(self.inception1(x)))
        x = self.pool2(self.bn2(self.inception2(x)))
        x = self.pool2(self.bn_conv(self.relu(self.conv1(x))))
        x = self.pool4(self.bn_conv(self.relu(self.conv2(x))))
        x = x.flatten(1).unsqueeze(1)
        x = self.pool_flat(x).squeeze(1)
        x = self.dropout(x)
        x = self.leakyrelu(self.fc1(x))
        x = self.dropout(x)
        return self.fc2(x).squeeze(-1)


class _Residual2d(nn.Module):
    def __init__(self, n_in, n_out, first=False):
        super().__init__()
        self.first = first
        if not first:
            self.bn1 = nn.BatchNorm2d(n_in)
        self.lrelu = nn.LeakyReLU(0.3)
        self.conv1 = nn.Conv2d(n_in, n_out, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(n_out)
        self.conv2 = nn.Conv2d(n_out, n_out, 3, padding=1)
        self.shortcut = nn.Conv2d(n_in, n_out, 1) if n_in != n_out else None
        self.pool = nn.MaxPool2d(2)

    def forward(self, x):
        identity = x
        out = x if self.first else self.lrelu(self.bn1(x))
        out = self.conv1(out)
        out = self.lrelu(self.bn2(out))
        out = self.conv2(out)
        if self.shortcut is not None:
            identity = self.shortcut(identity)
        return self.pool(out + identity)


class SpecRNet(nn.Module):
    def __init__(self, input_dim=384, channels=(20, 64), gru_size=64):
        super().__init__()
        self.input_dim = input_dim
        c1, c2 = channels
        self.first_bn = nn.BatchNorm2d(1)
        self.selu = nn.SELU()
        self.block0 = _Residual2d(1, c1, first=True)
        self.block2 = _Residual2d(c1, c2)
        self.block4 = _Residual2d(c2, c2)
        self.att_pool = nn.AdaptiveAvgPool2d(1)
        self.fc_attention0 = nn.Linear(c1, c1)
        self.fc_attention2 = nn.Linear(c2, c2)
        self.fc_attention4 = nn.Linear(c2, c2)
        self.bn_before_gru = nn.BatchNorm2d(c2)
        # collapses any remaining feature height to 1 for the GRU
        self.pre_gru_pool = nn.AdaptiveAvgPool2d((1, None))
        self.gru = nn.GRU(c2, gru_size, num_layers=2, batch_first=True, bidirectional=True)
        self.fc1_gru = nn.Linear(gru_size * 2, gru_size * 2)
        self.fc2_gru = nn.Linear(gru_size * 2, 1)
        self.sig = nn.Sigmoid()

    def _attend(self, x, fc):
        y = self.sig(fc(self.att_pool(x).flatten(1)))[:, :, None, None]
        return x * y + y

    def forward(self, feats):
        x = feats.unsqueeze(1).contiguous(memory_format=torch.channels_last)
        x = self.selu(self.first_bn(x))
        x = self._attend(self.block0(x), self.fc_attention0)
        x = self._attend(self.block2(x), self.fc_attention2)
        x = self._attend(self.block4(x), self.fc_attention4)
        x = self.selu(self.bn_before_gru(x))
        x = self.pre_gru_pool(x)
        x = x.squeeze(2).transpose(1, 2)
        out, _ = self.gru(x)
        x = self.fc1_gru(out[:, -1, :])
        return self.fc2_gru(x).squeeze(-1)


def _seeded(seed):
    if seed is not None:
        torch.manual_seed(seed)


def build_lcnn(input_dim, seed=None):
    _seeded(seed)
    return LCNN(input_dim).to(memory_format=torch.channels_last)


def build_mesonet(input_dim, seed=None):
    _seeded(seed)
    return MesoInception4(input_dim).to(memory_format=torch.channels_last)


def build_specrnet(input_dim, seed=None):
    _seeded(seed)
    return SpecRNet(input_dim).to(memory_format=torch.channels_last)


_BUILDERS = {"lcnn": build_lcnn, "mesonet": build_mesonet, "specrnet": build_specrnet}


def build_model(arch, input_dim, seed=None):
    if arch not in _BUILDERS:
        raise BadConfig(f"unknown arch {arch!r}")
    return _BUILDERS[arch](input_dim, seed=seed)


def count_params(model):
    """Trainable parameter count, excluding any attached front-end encoder."""
    skip = set()
    for module in model.modules():
        if getattr(module, "_is_frontend_encoder", False):
            skip.update(id(p) for p in module.parameters())
    return sum(p.numel() for p in model.parameters() if p.requires_grad and id(p) not in skip)


def forward(model, features, utt_ids=None):
    """Score a batch of feature maps: sigmoid of the logit, eval mode."""
    if isinstance(features, (list, tuple)):
        utt_ids = utt_ids or [f.utt_id for f in features]
        features = np.stack([f.values for f in features])
    batch = torch.as_tensor(np.asarray(features, dtype=np.float32))
    if batch.ndim == 2:
        batch = batch[None]
    was_training = model.training
    model.eval()
    with torch.no_grad():
        scores = torch.sigmoid(model(batch)).numpy().astype(np.float64)
    model.train(was_training)
    return ScoreBatch(utt_ids if utt_ids is not None else [""] * len(scores), scores)


def save_model_checkpoint(path, model, meta):
    """Flat named-tensor map plus a metadata block."""
    torch.save({"state_dict": model.state_dict(), "meta": dict(meta)}, path)


def load_model_checkpoint(path, expected_arch=None, expected_frontend=None):
    blob = torch.load(path, map_location="cpu", weights_only=True)
    meta = blob.get("meta", {})
    if expected_arch is not None and meta.get("arch") != expected_arch:
        raise IncompatibleCheckpoint(
            f"{path}: checkpoint arch {meta.get('arch')!r} != configured {expected_arch!r}"
        )
    if expected_frontend is not None and meta.get("frontend_tag") != expected_frontend:
        raise IncompatibleCheckpoint(
            f"{path}: checkpoint front-end {meta.get('frontend_tag')!r} != "
            f"configured {expected_frontend!r}"
        )
    model = build_model(meta["arch"], int(meta["input_dim"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, meta
