"""Model definitions: classifier backbones, the double encoder-decoder
segmenter, 4-way flip test-time augmentation, and prediction ensembling."""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class TinyClassifier(nn.Module):
    """Small from-scratch CNN for desk-scale experiments."""

    downsampling = 16

    def __init__(self, n_classes, width=16, logit_scale=1.0):
        super().__init__()
        # GroupNorm keeps small-batch training stable
        self.features = nn.Sequential(
            nn.Conv2d(3, width, 5, stride=4, padding=2),
            nn.GroupNorm(4, width),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
            nn.GroupNorm(4, 2 * width),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * width, 4 * width, 3, stride=2, padding=1),
            nn.GroupNorm(4, 4 * width),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Linear(4 * width, n_classes)
        # fixed temperature on the logits; >1 speeds up confidence growth on
        # short schedules where the head sees few gradient steps
        self.logit_scale = logit_scale

    def forward(self, x):
        f = self.features(x)
        f = F.adaptive_avg_pool2d(f, 1).flatten(1)
        return self.head(f) * self.logit_scale


class ResNet50Classifier(nn.Module):
    """ResNet-50 backbone with an n_find head; pretrained weights are loaded
    from a user-supplied state-dict file, never downloaded."""

    downsampling = 32

    def __init__(self, n_classes, weights_path=None):
        super().__init__()
        from torchvision.models import resnet50
        self.backbone = resnet50(weights=None)
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu")
            self.backbone.load_state_dict(state, strict=False)
        self.backbone.fc = nn.Linear(self.backbone.fc.in_features, n_classes)

    def forward(self, x):
        return self.backbone(x)


def _conv_block(c_in, c_out):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1),
        nn.GroupNorm(2, c_out),
        nn.ReLU(inplace=True),
        nn.Conv2d(c_out, c_out, 3, padding=1),
        nn.GroupNorm(2, c_out),
        nn.ReLU(inplace=True),
    )


class TinyEncoderDecoder(nn.Module):
    """Small U-Net-style encoder-decoder producing a 1-channel logit map at the
    input resolution. Input sides must be divisible by 8."""

    downsampling = 8

    def __init__(self, in_channels=3, width=8):
        super().__init__()
        self.in_channels = in_channels
        w = width
        self.enc1 = _conv_block(in_channels, w)
        self.enc2 = _conv_block(w, 2 * w)
        self.enc3 = _conv_block(2 * w, 4 * w)
        self.bottom = _conv_block(4 * w, 8 * w)
        self.up3 = nn.ConvTranspose2d(8 * w, 4 * w, 2, stride=2)
        self.dec3 = _conv_block(8 * w, 4 * w)
        self.up2 = nn.ConvTranspose2d(4 * w, 2 * w, 2, stride=2)
        self.dec2 = _conv_block(4 * w, 2 * w)
        self.up1 = nn.ConvTranspose2d(2 * w, w, 2, stride=2)
        self.dec1 = _conv_block(2 * w, w)
        self.out = nn.Conv2d(w, 1, 1)

    def forward(self, x):
        if x.shape[-3] != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} input channels, got {x.shape[-3]}"
            )
        e1 = self.enc1(x)
        e2 = self.enc2(F.max_pool2d(e1, 2))
        e3 = self.enc3(F.max_pool2d(e2, 2))
        b = self.bottom(F.max_pool2d(e3, 2))
        d3 = self.dec3(torch.cat([self.up3(b), e3], dim=1))
        d2 = self.dec2(torch.cat([self.up2(d3), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return self.out(d1)


class DoubleEncoderDecoder(nn.Module):
    """Two cascaded encoder-decoders. The first network's sigmoid output is
    stacked with the RGB input as a fourth channel for the second network, and
    both logit maps are returned for dual supervision. Gradients flow end to
    end through the stacked channel."""

    def __init__(self, first: nn.Module, second: nn.Module):
        super().__init__()
        if getattr(second, "in_channels", None) != getattr(first, "in_channels", 3) + 1:
            raise ValueError(
                "second network must accept one more input channel than the first"
            )
        self.first = first
        self.second = second
        self.downsampling = max(first.downsampling, second.downsampling)

    def forward(self, x):
        logits_1 = self.first(x)
        attention = torch.sigmoid(logits_1)
        logits_2 = self.second(torch.cat([x, attention], dim=-3))
        return logits_1, logits_2


def make_tiny_double(width=8):
    return DoubleEncoderDecoder(
        TinyEncoderDecoder(3, width), TinyEncoderDecoder(4, width)
    )


MODEL_REGISTRY = {
    "tiny_cnn": lambda n_classes, **kw: TinyClassifier(n_classes, **kw),
    "resnet50": lambda n_classes, **kw: ResNet50Classifier(n_classes, **kw),
    "tiny_double_unet": lambda n_classes=None, **kw: make_tiny_double(**kw),
}


def register_model(name, factory):
    """Register a backbone factory (e.g. a DPN-92/FPN segmenter supplied by the
    user) under a config key."""
    MODEL_REGISTRY[name] = factory


def build_model(name, n_classes=None, **kwargs):
    if name not in MODEL_REGISTRY:
        raise KeyError(
            f"unknown model {name!r}; registered: {sorted(MODEL_REGISTRY)}"
        )
    return MODEL_REGISTRY[name](n_classes=n_classes, **kwargs)


_FLIPS = (
    (False, False),
    (True, False),
    (False, True),
    (True, True),
)


def _flip(x, h, v):
    if h:
        x = torch.flip(x, dims=(-1,))
    if v:
        x = torch.flip(x, dims=(-2,))
    return x


@torch.no_grad()
def tta_classify(model, x):
    """Mean softmax over identity / h-flip / v-flip / hv-flip inputs."""
    single = x.ndim == 3
    if single:
        x = x.unsqueeze(0)
    probs = [
        torch.softmax(model(_flip(x, h, v)), dim=-1) for h, v in _FLIPS
    ]
    out = torch.stack(probs).mean(dim=0)
    return out[0] if single else out


@torch.no_grad()
def tta_segment(model, x):
    """Flip-averaged probability map; each prediction is un-flipped back to the
    original frame before averaging. Works for single- and dual-head models."""
    single = x.ndim == 3
    if single:
        x = x.unsqueeze(0)
    maps = []
    for h, v in _FLIPS:
        out = model(_flip(x, h, v))
        if isinstance(out, tuple):
            out = out[-1]  # second head is the final prediction
        maps.append(_flip(torch.sigmoid(out), h, v))
    out = torch.stack(maps).mean(dim=0)
    return out[0] if single else out


def ensemble(predictions):
    """Arithmetic mean of probability vectors or maps of identical shape."""
    preds = [np.asarray(p) for p in predictions]
    if not preds:
        raise ValueError("ensemble needs at least one member")
    shape = preds[0].shape
    for p in preds[1:]:
        if p.shape != shape:
            raise ValueError(f"shape mismatch in ensemble: {p.shape} vs {shape}")
    return np.mean(preds, axis=0)


def ensemble_classify(predictions):
    """Averaged probabilities and the post-average argmax."""
    mean = ensemble(predictions)
    return mean, int(np.argmax(mean, axis=-1)) if mean.ndim == 1 else np.argmax(mean, axis=-1)


def ensemble_segment(predictions, threshold=0.5):
    """Averaged probability map thresholded after averaging."""
    mean = ensemble(predictions)
    return mean, (mean > threshold).astype(np.uint8)
