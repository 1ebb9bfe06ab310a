"""Anonymization, classifier and denoise networks plus the noise composition."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

log = logging.getLogger(__name__)

EMBED_DIM = 256


class CompositionMode(str, enum.Enum):
    FULL = "full"  # X + mu + sigma * n
    MU_ONLY = "mu_only"  # mu
    INPUT_PLUS_MU = "input_plus_mu"  # X + mu
    INPUT_PLUS_SIGMA_NOISE = "input_plus_sigma_noise"  # X + sigma * n


class Backbone(str, enum.Enum):
    SMALL_CNN = "small_cnn"
    RESNET50_STYLE = "resnet50_style"


@dataclass
class AnonymizerConfig:
    n_layers: int = 6
    kernel: int = 3
    stride: int = 1
    hidden_width: int = 64
    take_noise_input: bool = True
    predict_mu: bool = False
    predict_sigma: bool = True
    noise_input_std: float = 1.0
    sigma_scale: float = 1.0
    mode: CompositionMode = CompositionMode.INPUT_PLUS_SIGMA_NOISE

    def __post_init__(self):
        self.mode = CompositionMode(self.mode)
        if not (self.predict_mu or self.predict_sigma):
            raise ValueError("at least one of predict_mu / predict_sigma must be set")
        if self.kernel != 3 or self.stride != 1:
            raise ValueError("anonymizer uses 3x3 kernels with stride 1")
        if self.n_layers < 2:
            raise ValueError("n_layers must be >= 2")
        needs = {
            CompositionMode.FULL: (),
            CompositionMode.MU_ONLY: ("predict_mu",),
            CompositionMode.INPUT_PLUS_MU: ("predict_mu",),
            CompositionMode.INPUT_PLUS_SIGMA_NOISE: ("predict_sigma",),
        }[self.mode]
        for flag in needs:
            if not getattr(self, flag):
                raise ValueError(f"mode {self.mode.value} requires {flag}=True")


@dataclass
class AnonymizerOutput:
    mu: torch.Tensor
    sigma: torch.Tensor


class AnonymizationNet(nn.Module):
    """Fully convolutional noise predictor: stride 1 everywhere, no skips, no norm."""

    def __init__(self, cfg: AnonymizerConfig, channels: int):
        super().__init__()
        self.cfg = cfg
        self.channels = channels
        in_ch = channels * (2 if cfg.take_noise_input else 1)
        out_ch = channels * (int(cfg.predict_mu) + int(cfg.predict_sigma))
        widths = [in_ch] + [cfg.hidden_width] * (cfg.n_layers - 1) + [out_ch]
        layers = []
        for i in range(cfg.n_layers):
            layers.append(nn.Conv2d(widths[i], widths[i + 1], cfg.kernel, stride=1, padding=cfg.kernel // 2))
            if i < cfg.n_layers - 1:
                layers.append(nn.LeakyReLU(0.01))
        self.body = nn.Sequential(*layers)

    @property
    def head(self) -> nn.Conv2d:
        return self.body[-1]

    def forward(self, x, n) -> AnonymizerOutput:
        if x.shape != n.shape:
            raise ValueError(f"noise shape {tuple(n.shape)} does not match input {tuple(x.shape)}")
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        inp = torch.cat([x, n], dim=1) if self.cfg.take_noise_input else x
        raw = self.body(inp)
        zero = torch.zeros_like(x)
        mu = sigma = zero
        parts = torch.split(raw, self.channels, dim=1)
        if self.cfg.predict_mu:
            mu = parts[0]
        if self.cfg.predict_sigma:
            sigma = F.softplus(parts[-1]) * self.cfg.sigma_scale
        return AnonymizerOutput(mu=mu, sigma=sigma)


def compose_anonymized(x, out: AnonymizerOutput, n, mode=CompositionMode.FULL):
    """Combine the input with predicted mean/scale fields and the noise sample.

    ``n`` is treated as a constant; gradients reach ``mu`` and ``sigma`` only.
    """
    mode = CompositionMode(mode)
    if not (x.shape == out.mu.shape == out.sigma.shape == n.shape):
        raise ValueError("x, mu, sigma and n must share a shape")
    n = n.detach()
    if mode is CompositionMode.FULL:
        return x + out.mu + out.sigma * n
    if mode is CompositionMode.MU_ONLY:
        return out.mu
    if mode is CompositionMode.INPUT_PLUS_MU:
        return x + out.mu
    return x + out.sigma * n


class Anonymizer(nn.Module):
    """Callable anonymization: network + composition mode, ``forward(x, n) -> x'``."""

    def __init__(self, cfg: AnonymizerConfig, channels: int, force_identity: bool = False):
        super().__init__()
        self.cfg = cfg
        self.net = AnonymizationNet(cfg, channels)
        self.force_identity = force_identity

    @property
    def noise_std(self) -> float:
        return self.cfg.noise_input_std

    def fields(self, x, n) -> AnonymizerOutput:
        if self.force_identity:
            return AnonymizerOutput(mu=torch.zeros_like(x), sigma=torch.zeros_like(x))
        return self.net(x, n)

    def forward(self, x, n):
        return compose_anonymized(x, self.fields(x, n), n, self.cfg.mode)


class GaussianAnonymizer(nn.Module):
    """Input-independent baseline: x + std * n with n ~ N(0, 1)."""

    noise_std = 1.0

    def __init__(self, std: float):
        super().__init__()
        if std <= 0:
            raise ValueError("std must be > 0")
        self.std = float(std)

    def forward(self, x, n):
        return x + self.std * n


@dataclass
class ClassifierConfig:
    backbone: Backbone = Backbone.SMALL_CNN
    in_channels: int = 10
    embed_dim: int = EMBED_DIM
    n_classes: int = 2
    dropout_rate: float = 0.5
    pretrained_backbone: bool = False
    width: int = 32

    def __post_init__(self):
        self.backbone = Backbone(self.backbone)
        if self.embed_dim != EMBED_DIM:
            raise ValueError(f"embed_dim must be {EMBED_DIM}")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")


def _small_cnn(in_channels, width):
    widths = [in_channels, width, 2 * width, 4 * width, 4 * width]
    layers = []
    for i in range(4):
        layers += [
            nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(widths[i + 1]),
            nn.ReLU(inplace=True),
        ]
    layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten()]
    return nn.Sequential(*layers), widths[-1]


def adapt_pretrained_input(weight: torch.Tensor, target_channels: int) -> torch.Tensor:
    """Map 3-channel first-layer kernels to ``target_channels`` inputs.

    The per-kernel mean over RGB is replicated across all target channels and
    scaled by 3 / target_channels to keep the expected activation magnitude.
    """
    if weight.ndim != 4:
        raise ValueError("expected conv weight of shape (out, in, kh, kw)")
    mean = weight.mean(dim=1, keepdim=True)
    return mean.repeat(1, target_channels, 1, 1) * (weight.shape[1] / target_channels)


def _resnet50(in_channels, pretrained):
    from torchvision.models import ResNet50_Weights, resnet50

    net = resnet50(weights=ResNet50_Weights.IMAGENET1K_V1 if pretrained else None)
    old = net.conv1
    net.conv1 = nn.Conv2d(in_channels, 64, kernel_size=7, stride=2, padding=3, bias=False)
    if pretrained:
        with torch.no_grad():
            net.conv1.weight.copy_(adapt_pretrained_input(old.weight, in_channels))
    net.fc = nn.Identity()
    return net, 2048


class Classifier(nn.Module):
    """Backbone -> linear(256) -> BN -> LeakyReLU -> dropout embedding -> linear logits."""

    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.backbone is Backbone.SMALL_CNN:
            if cfg.pretrained_backbone:
                log.warning("pretrained_backbone ignored for the small CNN backbone")
            self.backbone, feat = _small_cnn(cfg.in_channels, cfg.width)
        else:
            self.backbone, feat = _resnet50(cfg.in_channels, cfg.pretrained_backbone)
        self.head = nn.Sequential(
            nn.Linear(feat, cfg.embed_dim),
            nn.BatchNorm1d(cfg.embed_dim),
            nn.LeakyReLU(0.01),
            nn.Dropout(cfg.dropout_rate),
        )
        self.classifier = nn.Linear(cfg.embed_dim, cfg.n_classes)

    def forward(self, x):
        if x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected {self.cfg.in_channels} input channels, got {x.shape[1]}")
        emb = self.head(self.backbone(x))
        return emb, self.classifier(emb)


@dataclass
class DenoiserConfig:
    n_layers: int = 15
    kernel: int = 3
    stride: int = 1
    hidden_width: int = 64
    batch_norm: bool = True
    residual: bool = True

    def __post_init__(self):
        if self.n_layers != 15 or self.kernel != 3 or self.stride != 1:
            raise ValueError("denoiser is fixed at 15 layers of 3x3 stride-1 convolutions")


class Denoiser(nn.Module):
    def __init__(self, cfg: DenoiserConfig, channels: int):
        super().__init__()
        self.cfg = cfg
        layers = []
        c_in = channels
        for _ in range(cfg.n_layers - 1):
            layers.append(nn.Conv2d(c_in, cfg.hidden_width, 3, padding=1, bias=not cfg.batch_norm))
            if cfg.batch_norm:
                layers.append(nn.BatchNorm2d(cfg.hidden_width))
            layers.append(nn.LeakyReLU(0.01))
            c_in = cfg.hidden_width
        layers.append(nn.Conv2d(c_in, channels, 3, padding=1))
        self.body = nn.Sequential(*layers)
        if cfg.residual:
            # predict the noise and start from the identity map
            nn.init.zeros_(layers[-1].weight)
            nn.init.zeros_(layers[-1].bias)

    def forward(self, x):
        if self.cfg.residual:
            return x - self.body(x)
        return self.body(x)
