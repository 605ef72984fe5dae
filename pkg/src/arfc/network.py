"""Five-stage encoder-decoder, SoftIoU objective and thresholded inference."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .functional import ConvSpec
from .gmea import GMEA
from .hlff import HLFF
from .mrffi import MRFFIConv
from .nn import ConvBNReLU, Module, conv1x1
from .tensor import ConfigError, ShapeError, Tensor, concat, no_grad, sigmoid
from .wavelet import WFED

DOWNSAMPLINGS = 4


@dataclass
class NetConfig:
    stage_channels: tuple = (8, 16, 32, 64, 128)
    input_channels: int = 1
    use_mrffi: bool = True
    use_wfed: bool = True
    use_hlff: bool = True
    use_gmea: bool = True
    seed: int = 0
    gate_hidden: int = 16

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        chans = self.stage_channels
        if len(chans) != DOWNSAMPLINGS + 1:
            raise ConfigError(f"expected 5 stage widths, got {len(chans)}")
        for i, c in enumerate(chans):
            if c % 4:
                raise ConfigError(f"stage {i}: width {c} is not divisible by 4")
            if i and c <= chans[i - 1]:
                raise ConfigError(f"stage {i}: widths must be strictly increasing ({chans[i - 1]} -> {c})")
        if self.input_channels < 1:
            raise ConfigError("input_channels must be positive")


class DoubleConv(Module):
    """Plain baseline block: two 3x3 conv + BN + ReLU."""

    def __init__(self, cin, cout, rng):
        super().__init__()
        self.conv1 = ConvBNReLU(ConvSpec.same(cin, cout, 3, bias=False), rng)
        self.conv2 = ConvBNReLU(ConvSpec.same(cout, cout, 3, bias=False), rng)

    def forward(self, x):
        return self.conv2(self.conv1(x))


def _block(cfg: NetConfig, cin: int, cout: int, rng, where: str) -> Module:
    try:
        if cfg.use_mrffi:
            return MRFFIConv(cin, cout, rng, cfg.gate_hidden)
        return DoubleConv(cin, cout, rng)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


class ARFCNet(Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        ch = cfg.stage_channels
        cins = (cfg.input_channels,) + ch[:-1]
        self.encoder = [_block(cfg, cins[i], ch[i], rng, f"encoder stage {i}") for i in range(5)]
        self.down = [WFED(ch[i], rng) for i in range(DOWNSAMPLINGS)] if cfg.use_wfed else []
        self.fuse = [HLFF(ch[i], ch[i + 1], rng) for i in range(DOWNSAMPLINGS)] if cfg.use_hlff else []
        self.decoder = [_block(cfg, ch[i] if cfg.use_hlff else ch[i] + ch[i + 1], ch[i], rng,
                               f"decoder stage {i}") for i in range(DOWNSAMPLINGS)]
        self.attention = [GMEA(ch[i], rng) for i in range(DOWNSAMPLINGS)] if cfg.use_gmea else []
        self.head = conv1x1(ch[0], 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        """Logits of shape (N, 1, H, W)."""
        skips = []
        for i in range(5):
            x = self.encoder[i](x)
            if i < DOWNSAMPLINGS:
                skips.append(x)
                x = self.down[i](x) if self.down else F.pool2d(x, "max", 2, 2)
        for i in reversed(range(DOWNSAMPLINGS)):
            low = skips[i]
            if self.fuse:
                x = self.fuse[i](low, x)
            else:
                x = concat([low, F.bilinear_upsample(x, 2)], axis=1)
            x = self.decoder[i](x)
            if self.attention:
                x = self.attention[i](x)
        return self.head(x)


def build_network(cfg: NetConfig | None = None) -> ARFCNet:
    return ARFCNet(cfg or NetConfig())


def soft_iou_loss(logits: Tensor, mask, delta: float = 1.0) -> Tensor:
    """Mean over samples of ``1 - (sum(s*y) + d) / (sum(s + y - s*y) + d)``, ``s = sigmoid(logits)``."""
    y = Tensor(np.asarray(getattr(mask, "data", mask), dtype=logits.dtype))
    if y.shape != logits.shape:
        raise ShapeError(f"mask {y.shape} != logits {logits.shape}")
    s = sigmoid(logits)
    inter = s * y
    axes = tuple(range(1, logits.ndim))
    ratio = (inter.sum(axis=axes) + delta) / ((s + y - inter).sum(axis=axes) + delta)
    return (1.0 - ratio).mean()


MULTIPLE = 2 ** DOWNSAMPLINGS


def _as_batch(image) -> np.ndarray:
    arr = np.asarray(getattr(image, "data", image))
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[None]
    return arr


def infer(network: ARFCNet, image, threshold: float = 0.5):
    """Saliency map and binary mask (``saliency > threshold``).

    Spatial dims must be multiples of 16; use :func:`infer_padded` for
    arbitrary sizes.
    """
    batch = _as_batch(image)
    h, w = batch.shape[-2:]
    if h % MULTIPLE or w % MULTIPLE:
        raise ShapeError(f"image {h}x{w} is not divisible by {MULTIPLE}; reflect-pad and crop "
                         f"(see infer_padded)")
    dtype = network.head.weight.dtype
    was_training = network.training
    network.eval()
    try:
        with no_grad():
            saliency = sigmoid(network(Tensor(batch.astype(dtype)))).data
    finally:
        network.train(was_training)
    return saliency > threshold, saliency


def infer_padded(network: ARFCNet, image, threshold: float = 0.5):
    """Reflect-pad to a multiple of 16, run :func:`infer`, crop back."""
    batch = _as_batch(image)
    h, w = batch.shape[-2:]
    ph, pw = (-h) % MULTIPLE, (-w) % MULTIPLE
    mode = "reflect" if ph < h and pw < w else "symmetric"
    padded = np.pad(batch, ((0, 0), (0, 0), (0, ph), (0, pw)), mode=mode)
    mask, saliency = infer(network, padded, threshold)
    return mask[..., :h, :w], saliency[..., :h, :w]
