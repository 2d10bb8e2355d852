"""Composite-branch encoder/decoder change-detection network.

Layout (K-Nums at ``scale=1``; every width is divided by ``scale``)::

    shared   DConv1(64) Pool DConv2(128) Pool DConv3(256) Pool
    branch   DConv4(512) Pool DConv5(1024)                  x2 (A for x1, B for x2)
    decoder  TConv6(512)+skip4 DConv6(512) TConv7(256)+skip3 DConv7(256)
             TConv8(128)+skip2 DConv8(128) TConv9(64)+skip1 DConv9(64)   x2
    head     concat(A, B) Conv10(1x1, 16) ReLU Conv11(1x1, 1) Sigmoid

A DConv is two consecutive 3x3 conv / batchnorm / ReLU blocks.  ``single``
mode shares DConv1-5 between the images; ``double`` gives each image its own
DConv1-5.  Decoders are per-image in every mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import checkpoint as nn_checkpoint
from .raster import RasterImage, ScalarMap
from .threshold import fixed_threshold

BRANCH_MODES = ("composite", "single", "double")
DEPTH_MULTIPLE = 16


class NetworkConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    base_width: int = 64
    scale: int = 1
    branch_mode: str = "composite"
    input_channels: int = 3

    def __post_init__(self):
        if self.branch_mode not in BRANCH_MODES:
            raise NetworkConfigError(f"branch_mode must be one of {BRANCH_MODES}, got {self.branch_mode!r}")
        if self.input_channels < 1:
            raise NetworkConfigError("input_channels must be >= 1")
        if self.scale < 1:
            raise NetworkConfigError("scale must be >= 1")
        for name, k in self.k_nums().items():
            if k % self.scale or k // self.scale < 1:
                raise NetworkConfigError(f"scale {self.scale} leaves {name} with {k}/{self.scale} channels")

    def k_nums(self):
        """Undivided kernel counts per layer."""
        b = self.base_width
        return {
            "dconv1": b, "dconv2": 2 * b, "dconv3": 4 * b, "dconv4": 8 * b, "dconv5": 16 * b,
            "tconv6": 8 * b, "dconv6": 8 * b, "tconv7": 4 * b, "dconv7": 4 * b,
            "tconv8": 2 * b, "dconv8": 2 * b, "tconv9": b, "dconv9": b,
            "conv10": b // 4,
        }

    def widths(self):
        widths = {k: v // self.scale for k, v in self.k_nums().items()}
        widths["conv11"] = 1
        return widths


class ConvBNReLU:
    def __init__(self, prefix, in_c, out_c, rng):
        self.weight = nn.xavier_init((out_c, in_c, 3, 3), rng, name=f"{prefix}.weight")
        self.gamma = nn.Tensor(np.ones(out_c), requires_grad=True, name=f"{prefix}.bn.gamma")
        self.beta = nn.Tensor(np.zeros(out_c), requires_grad=True, name=f"{prefix}.bn.beta")
        self.stats = nn.RunningStats.fresh(out_c)
        self.prefix = prefix

    def __call__(self, x, mode):
        y = nn.conv2d(x, self.weight, padding=1)
        return nn.relu(nn.batchnorm(y, self.gamma, self.beta, self.stats, mode))

    def parameters(self):
        return [self.weight, self.gamma, self.beta]

    def buffers(self):
        return {f"{self.prefix}.bn.running_mean": self.stats.mean, f"{self.prefix}.bn.running_var": self.stats.var}


class DConv:
    def __init__(self, prefix, in_c, out_c, rng):
        self.blocks = [ConvBNReLU(f"{prefix}.0", in_c, out_c, rng), ConvBNReLU(f"{prefix}.1", out_c, out_c, rng)]

    def __call__(self, x, mode):
        for block in self.blocks:
            x = block(x, mode)
        return x

    def parameters(self):
        return [p for b in self.blocks for p in b.parameters()]

    def buffers(self):
        return {k: v for b in self.blocks for k, v in b.buffers().items()}


class PointConv:
    """1x1 convolution with bias."""

    def __init__(self, prefix, in_c, out_c, rng):
        self.weight = nn.xavier_init((out_c, in_c, 1, 1), rng, name=f"{prefix}.weight")
        self.bias = nn.Tensor(np.zeros(out_c), requires_grad=True, name=f"{prefix}.bias")

    def __call__(self, x):
        return nn.conv2d(x, self.weight, self.bias)

    def parameters(self):
        return [self.weight, self.bias]

    def buffers(self):
        return {}


class UpConv:
    def __init__(self, prefix, in_c, out_c, rng):
        self.weight = nn.xavier_init((in_c, out_c, 2, 2), rng, name=f"{prefix}.weight")
        self.bias = nn.Tensor(np.zeros(out_c), requires_grad=True, name=f"{prefix}.bias")

    def __call__(self, x):
        return nn.tconv2(x, self.weight, self.bias)

    def parameters(self):
        return [self.weight, self.bias]

    def buffers(self):
        return {}


class Stage:
    """An ordered group of named layers, e.g. ``shared`` or ``decoder_a``."""

    def __init__(self, name, layers):
        self.name = name
        self.layers = layers

    def __getitem__(self, key):
        return self.layers[key]

    def parameters(self):
        return [p for layer in self.layers.values() for p in layer.parameters()]

    def buffers(self):
        return {k: v for layer in self.layers.values() for k, v in layer.buffers().items()}


def _low_encoder(name, cfg, wd, rng):
    c = cfg.input_channels
    return Stage(name, {
        "dconv1": DConv(f"{name}.dconv1", c, wd["dconv1"], rng),
        "dconv2": DConv(f"{name}.dconv2", wd["dconv1"], wd["dconv2"], rng),
        "dconv3": DConv(f"{name}.dconv3", wd["dconv2"], wd["dconv3"], rng),
    })


def _high_encoder(name, wd, rng):
    return Stage(name, {
        "dconv4": DConv(f"{name}.dconv4", wd["dconv3"], wd["dconv4"], rng),
        "dconv5": DConv(f"{name}.dconv5", wd["dconv4"], wd["dconv5"], rng),
    })


def _decoder(name, wd, rng):
    layers = {}
    below = wd["dconv5"]
    for level, skip in ((6, "dconv4"), (7, "dconv3"), (8, "dconv2"), (9, "dconv1")):
        up = wd[f"tconv{level}"]
        layers[f"tconv{level}"] = UpConv(f"{name}.tconv{level}", below, up, rng)
        layers[f"dconv{level}"] = DConv(f"{name}.dconv{level}", up + wd[skip], wd[f"dconv{level}"], rng)
        below = wd[f"dconv{level}"]
    return Stage(name, layers)


class ChangeDetector:
    def __init__(self, config: NetworkConfig, stages):
        self.config = config
        self.stages = stages

    @property
    def low_a(self):
        return self.stages["shared" if "shared" in self.stages else "low_a"]

    @property
    def low_b(self):
        return self.stages["shared" if "shared" in self.stages else "low_b"]

    @property
    def high_a(self):
        return self.stages["branch_a"]

    @property
    def high_b(self):
        # single mode aliases branch B onto branch A
        return self.stages["branch_b" if "branch_b" in self.stages else "branch_a"]

    def parameters(self):
        return [p for stage in self.stages.values() for p in stage.parameters()]

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def state_arrays(self):
        """Name -> live ndarray for every parameter and batchnorm buffer."""
        out = {p.name: p.data for p in self.parameters()}
        for stage in self.stages.values():
            out.update(stage.buffers())
        return out

    def parameter_count(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        nn.zero_grad(self.parameters())

    def save(self, path):
        nn_checkpoint.save(sorted(self.state_arrays().items()), path)

    def load(self, path):
        nn_checkpoint.restore(self.state_arrays(), path)


def build(config: NetworkConfig, rng: np.random.Generator) -> ChangeDetector:
    """Create a Xavier-initialised network; parameters are drawn in a fixed order."""
    wd = config.widths()
    stages = {}
    if config.branch_mode == "double":
        stages["low_a"] = _low_encoder("low_a", config, wd, rng)
        stages["low_b"] = _low_encoder("low_b", config, wd, rng)
    else:
        stages["shared"] = _low_encoder("shared", config, wd, rng)
    stages["branch_a"] = _high_encoder("branch_a", wd, rng)
    if config.branch_mode != "single":
        stages["branch_b"] = _high_encoder("branch_b", wd, rng)
    stages["decoder_a"] = _decoder("decoder_a", wd, rng)
    stages["decoder_b"] = _decoder("decoder_b", wd, rng)
    stages["head"] = Stage("head", {
        "conv10": PointConv("head.conv10", 2 * wd["dconv9"], wd["conv10"], rng),
        "conv11": PointConv("head.conv11", wd["conv10"], 1, rng),
    })
    return ChangeDetector(config, stages)


def _encode(x, low, high, mode):
    f1 = low["dconv1"](x, mode)
    f2 = low["dconv2"](nn.maxpool2(f1), mode)
    f3 = low["dconv3"](nn.maxpool2(f2), mode)
    f4 = high["dconv4"](nn.maxpool2(f3), mode)
    f5 = high["dconv5"](nn.maxpool2(f4), mode)
    return [f1, f2, f3, f4, f5]


def _decode(feats, dec, mode):
    f1, f2, f3, f4, y = feats
    for level, skip in ((6, f4), (7, f3), (8, f2), (9, f1)):
        up = dec[f"tconv{level}"](y)
        y = dec[f"dconv{level}"](nn.concat_channels(skip, up), mode)
    return y


def forward(net: ChangeDetector, x1, x2, mode="train", features=None):
    """Map an image pair (NCHW tensors or arrays) to a change probability tensor (N,1,H,W).

    The shared low-level encoder is applied to each image in its own pass, so
    batchnorm statistics are per image.  When ``features`` is a dict it
    receives the intermediate activations, keyed like ``"a.dconv5"``.
    """
    x1 = x1 if isinstance(x1, nn.Tensor) else nn.Tensor(x1)
    x2 = x2 if isinstance(x2, nn.Tensor) else nn.Tensor(x2)
    if x1.shape != x2.shape:
        raise ValueError(f"image tensors differ in shape: {x1.shape} vs {x2.shape}")
    if x1.ndim != 4 or x1.shape[1] != net.config.input_channels:
        raise ValueError(f"expected (N, {net.config.input_channels}, H, W) input, got {x1.shape}")
    h, w = x1.shape[2:]
    if h % DEPTH_MULTIPLE or w % DEPTH_MULTIPLE:
        raise ValueError(f"spatial dims {h}x{w} must be multiples of {DEPTH_MULTIPLE}")

    feats_a = _encode(x1, net.low_a, net.high_a, mode)
    feats_b = _encode(x2, net.low_b, net.high_b, mode)
    ya = _decode(feats_a, net.stages["decoder_a"], mode)
    yb = _decode(feats_b, net.stages["decoder_b"], mode)
    if features is not None:
        for tag, feats, y in (("a", feats_a, ya), ("b", feats_b, yb)):
            for i, f in enumerate(feats, start=1):
                features[f"{tag}.dconv{i}"] = f
            features[f"{tag}.dconv9"] = y
    head = net.stages["head"]
    z = head["conv10"](nn.concat_channels(ya, yb))
    return nn.sigmoid(head["conv11"](z))


def _pad_to_multiple(arr, multiple):
    h, w = arr.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if not ph and not pw:
        return arr
    pad = ((0, ph), (0, pw)) + ((0, 0),) * (arr.ndim - 2)
    return np.pad(arr, pad, mode="reflect" if min(h, w) > 1 else "edge")


def predict_change_map(net: ChangeDetector, x1: RasterImage, x2: RasterImage, threshold=0.5):
    """Eval-mode inference on full images of any size; returns (DI, change map)."""
    if x1.data.shape != x2.data.shape:
        raise ValueError(f"image shapes differ: {x1.data.shape} vs {x2.data.shape}")
    h, w = x1.height, x1.width
    a = _pad_to_multiple(x1.data, DEPTH_MULTIPLE).transpose(2, 0, 1)[None]
    b = _pad_to_multiple(x2.data, DEPTH_MULTIPLE).transpose(2, 0, 1)[None]
    out = forward(net, a, b, mode="eval").data[0, 0, :h, :w]
    di = ScalarMap(out)
    return di, fixed_threshold(di, threshold)
