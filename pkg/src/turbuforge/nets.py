"""Generator and discriminator networks.

The discriminator is a plain strided conv stack (no normalization, which
interacts badly with the input-gradient penalty). Two generators are
provided: a direct pixel grid behind a sigmoid, which isolates the
adversarial-sensing mechanism from any network prior, and an untrained
4-level encoder-decoder with skip connections driven by a frozen random
input, which adds the implicit convolutional prior. The generator's conv
blocks carry per-channel instance normalization: without it the plain
stack is unstable under scale-free optimizers, whose early coherent kicks
compound multiplicatively across the depth until the output sigmoid
saturates and its derivative rounds to exact zero. The output head stays
unnormalized so the pre-sigmoid logits keep their mean.

All parameters are filled from a counter-based stream keyed by an explicit
seed, so construction is bit-reproducible without touching torch's global
generator state.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

_LEAK = 0.2


def _philox(seed: int, salt: int) -> np.random.Generator:
    # The key must be an explicit uint64 array: numpy coerces plain python
    # ints through float64, which silently drops low bits above 2**53 and
    # can collapse distinct seeds onto one stream.
    key = np.array([(seed ^ (salt * 0x9E3779B97F4A7C15)) % 2**64, 0],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def init_params(module: nn.Module, seed: int) -> None:
    """Deterministically fill all conv/linear parameters.

    Uses U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases, the
    same bound torch's default init gives conv and linear layers, but drawn
    from a seeded counter-based stream.
    """
    rng = _philox(seed, 0x11)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = int(np.prod(m.weight.shape[1:]))
                bound = 1.0 / np.sqrt(fan_in)
                for p in (m.weight, m.bias):
                    if p is None:
                        continue
                    vals = rng.uniform(-bound, bound, size=p.shape)
                    p.copy_(torch.as_tensor(vals, dtype=p.dtype))


class Discriminator(nn.Module):
    """Frame -> scalar score: 4 stride-2 convs (32-64-128-256, kernel 4),
    leaky-relu 0.2, then a linear head. Requires N divisible by 16."""

    def __init__(self, image_size_px: int, in_channels: int = 1,
                 seed: int = 0):
        super().__init__()
        if image_size_px % 16 != 0:
            raise ValueError("image_size_px must be divisible by 16")
        self.image_size_px = image_size_px
        self.in_channels = in_channels
        chans = (32, 64, 128, 256)
        layers = []
        prev = in_channels
        for ch in chans:
            layers.append(nn.Conv2d(prev, ch, kernel_size=4, stride=2,
                                    padding=1))
            prev = ch
        self.convs = nn.ModuleList(layers)
        side = image_size_px // 16
        self.head = nn.Linear(chans[-1] * side * side, 1)
        init_params(self, seed)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """Scores for frames shaped (N,N), (K,N,N) or (K,C,N,N)."""
        x = frames
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        if x.dim() == 3:
            x = x.unsqueeze(1)
        for conv in self.convs:
            x = F.leaky_relu(conv(x), _LEAK)
        scores = self.head(x.flatten(1)).squeeze(-1)
        return scores.squeeze(0) if squeeze else scores


class PixelGridGenerator(nn.Module):
    """Scene as free pixel logits behind a sigmoid."""

    def __init__(self, image_size_px: int, channels: int = 1, seed: int = 0):
        super().__init__()
        self.image_size_px = image_size_px
        self.channels = channels
        self.logits = nn.Parameter(torch.zeros(channels, image_size_px,
                                               image_size_px))

    def forward(self) -> torch.Tensor:
        out = torch.sigmoid(self.logits)
        return out.squeeze(0) if self.channels == 1 else out

    @torch.no_grad()
    def init_from_image(self, image: np.ndarray, eps: float = 1e-4) -> None:
        """Set the logits so the output equals ``image`` (clamped away from
        the saturated ends of the sigmoid)."""
        img = np.clip(np.asarray(image, dtype=np.float64), eps, 1.0 - eps)
        if img.ndim == 2:
            img = img[None]
        if img.shape != tuple(self.logits.shape):
            raise ValueError(f"image shape {img.shape} does not match "
                             f"{tuple(self.logits.shape)}")
        self.logits.copy_(torch.as_tensor(np.log(img / (1.0 - img)),
                                          dtype=self.logits.dtype))


class _NormConvBlock(nn.Module):
    """Conv, per-channel instance normalization, leaky relu."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride=stride,
                              padding=kernel // 2)
        self.norm = nn.InstanceNorm2d(out_ch, affine=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(self.norm(self.conv(x)), _LEAK)


class UntrainedConvGenerator(nn.Module):
    """Untrained encoder-decoder prior: 4 stride-2 levels with skip
    connections, fed by a frozen random input tensor z."""

    Z_CHANNELS = 8
    SKIP_CHANNELS = 4

    def __init__(self, image_size_px: int, channels: int = 1, seed: int = 0):
        super().__init__()
        if image_size_px % 16 != 0:
            raise ValueError("image_size_px must be divisible by 16")
        self.image_size_px = image_size_px
        self.channels = channels
        enc_ch = (32, 64, 64, 64)
        prev = self.Z_CHANNELS
        self.enc = nn.ModuleList()
        self.skips = nn.ModuleList()
        for ch in enc_ch:
            self.enc.append(nn.ModuleList([
                _NormConvBlock(prev, ch, 3, stride=2),
                _NormConvBlock(ch, ch, 3),
            ]))
            self.skips.append(_NormConvBlock(ch, self.SKIP_CHANNELS, 1))
            prev = ch
        sc = self.SKIP_CHANNELS
        self.dec = nn.ModuleList([
            _NormConvBlock(enc_ch[3] + sc, 64, 3),
            _NormConvBlock(64 + sc, 64, 3),
            _NormConvBlock(64 + sc, 32, 3),
            _NormConvBlock(32, 32, 3),
        ])
        self.head = nn.Conv2d(32, channels, 1)
        init_params(self, seed)
        rng = _philox(seed, 0x22)
        z = 0.1 * rng.standard_normal(
            (1, self.Z_CHANNELS, image_size_px, image_size_px))
        self.register_buffer("z", torch.as_tensor(
            z, dtype=self.head.weight.dtype))

    def forward(self) -> torch.Tensor:
        x = self.z
        feats = []
        for down, keep in self.enc:
            x = keep(down(x))
            feats.append(x)
        up = F.interpolate(feats[3], scale_factor=2, mode="nearest")
        x = self.dec[0](torch.cat([up, self.skips[2](feats[2])], dim=1))
        up = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.dec[1](torch.cat([up, self.skips[1](feats[1])], dim=1))
        up = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.dec[2](torch.cat([up, self.skips[0](feats[0])], dim=1))
        up = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.dec[3](up)
        out = torch.sigmoid(self.head(x))[0]
        return out.squeeze(0) if self.channels == 1 else out

    def init_from_image(self, image: np.ndarray, iters: int = 300,
                        lr: float = 2e-3) -> float:
        """Pre-fit the network output to ``image`` with Adam on MSE.

        The network has no closed-form inverse, so initialization is a short
        deterministic fit. Returns the final MSE.
        """
        target = torch.as_tensor(np.asarray(image, dtype=np.float64),
                                 dtype=self.head.weight.dtype)
        opt = torch.optim.Adam(self.parameters(), lr=lr)
        loss = torch.as_tensor(float("nan"))
        for _ in range(iters):
            opt.zero_grad()
            loss = ((self.forward() - target) ** 2).mean()
            loss.backward()
            opt.step()
        return float(loss.detach())
