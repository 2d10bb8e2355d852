"""Unsupervised teacher/student self-training.

Stages, all driven by one :class:`TrainConfig`:

1. pre-detection: CVA, Otsu, confidence filter, gate -> (CM1, PC1*)
2. teacher trained on CM1 weighted by PC1*
3. teacher inference -> CM2, gated confidence PC2*
4. fresh student trained on beta * L1 + (1 - beta) * L2 over the same tiles
5. student inference is the final change map

Reference maps never enter any of these functions.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .classical_di import cva
from .conf_filter import FilterConfig, filter as confidence, gate
from .network import ChangeDetector, NetworkConfig, build, forward, predict_change_map
from .raster import ChangeMap, RasterImage, ScalarMap
from .threshold import otsu

PROB_EPS = 1e-7
N_AUGMENT = 6
CONFIG_KEYS = (
    "w", "alpha", "beta", "lr", "batch_size", "epochs_teacher",
    "epochs_student", "crop", "stride", "scale", "seed",
)


class TrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    w: int = 5
    alpha: float = 0.5
    beta: float = 0.6
    lr: float = 1e-4
    batch_size: int = 8
    epochs_teacher: int = 30
    epochs_student: int = 30
    crop: int = 112
    stride: int = 56
    scale: int = 8
    seed: int = 0
    # API-only switches, not accepted in config files
    branch_mode: str = "composite"
    use_filter: bool = True
    normalize_loss: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        try:
            FilterConfig(self.w, self.alpha)
        except ValueError as exc:
            raise TrainConfigError(str(exc)) from None
        if not 0.0 <= self.beta <= 1.0:
            raise TrainConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.lr > 0:
            raise TrainConfigError(f"lr must be positive, got {self.lr}")
        for name in ("batch_size", "stride"):
            if getattr(self, name) < 1:
                raise TrainConfigError(f"{name} must be >= 1")
        for name in ("epochs_teacher", "epochs_student", "seed"):
            if getattr(self, name) < 0:
                raise TrainConfigError(f"{name} must be >= 0")
        if self.crop < 16 or self.crop % 16:
            raise TrainConfigError(f"crop must be a positive multiple of 16, got {self.crop}")
        if self.dtype not in ("float32", "float64"):
            raise TrainConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        try:
            self.network_config()
        except ValueError as exc:
            raise TrainConfigError(str(exc)) from None

    def network_config(self, input_channels=3):
        return NetworkConfig(scale=self.scale, branch_mode=self.branch_mode, input_channels=input_channels)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key or not value:
            raise TrainConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in CONFIG_KEYS:
            raise TrainConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise TrainConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = int(value) if types[key] == "int" else float(value)
        except ValueError:
            raise TrainConfigError(f"line {lineno}: bad {types[key]} value {value!r} for {key}") from None
    return (base or TrainConfig()).replace(**values)


def read_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {getattr(cfg, k)}\n" for k in CONFIG_KEYS)


# -- pre-detection and pseudo labels --------------------------------------------

def _confidence(cm: ChangeMap, cfg: TrainConfig) -> ScalarMap:
    if not cfg.use_filter:
        return ScalarMap(np.ones(cm.data.shape))
    return gate(confidence(cm, cfg.w), cfg.alpha)


def predetect(x1: RasterImage, x2: RasterImage, cfg: TrainConfig):
    """CVA + Otsu pseudo labels with their gated neighbourhood confidence."""
    cm1, _ = otsu(cva(x1, x2))
    return cm1, _confidence(cm1, cfg)


def pseudo_label_2(teacher: ChangeDetector, x1: RasterImage, x2: RasterImage, cfg: TrainConfig):
    with nn.precision(cfg.dtype):
        _, cm2 = predict_change_map(teacher, x1, x2)
    return cm2, _confidence(cm2, cfg)


# -- tiles --------------------------------------------------------------------------

def tile_origins(size: int, crop: int, stride: int):
    """Offsets every ``stride``; a final tile flush with the far edge covers any remainder."""
    if size < crop:
        raise TrainConfigError(f"image side {size} is smaller than crop {crop}")
    starts = list(range(0, size - crop + 1, stride))
    if starts[-1] != size - crop:
        starts.append(size - crop)
    return starts


AUGMENTATIONS = ("original", "rot90", "rot180", "rot270", "hflip", "vflip")


def augment(tile: np.ndarray, kind: str) -> np.ndarray:
    """Spatial transform of an (H, W, ...) array."""
    if kind == "original":
        return tile
    if kind.startswith("rot"):
        return np.rot90(tile, int(kind[3:]) // 90, axes=(0, 1))
    if kind == "hflip":
        return tile[:, ::-1]
    if kind == "vflip":
        return tile[::-1]
    raise ValueError(f"unknown augmentation {kind!r}")


def invert_augment(tile: np.ndarray, kind: str) -> np.ndarray:
    if kind.startswith("rot") and kind != "rot180":
        return np.rot90(tile, -int(kind[3:]) // 90, axes=(0, 1))
    return augment(tile, kind)


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Stacked tiles: images (n, C, S, S), labels and weights (n, 1, S, S)."""

    x1: np.ndarray
    x2: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return self.x1.shape[0]

    def __getitem__(self, i):
        return self.x1[i], self.x2[i], self.labels[i], self.weights[i]

    @property
    def crop(self):
        return self.x1.shape[-1]


def make_training_set(x1: RasterImage, x2: RasterImage, cm: ChangeMap, pcs: ScalarMap, cfg: TrainConfig) -> TrainingSet:
    """Overlapping tiles, each emitted in the six orientations of ``AUGMENTATIONS``."""
    h, w = x1.height, x1.width
    for plane in (x2.data, cm.data, pcs.data):
        if plane.shape[:2] != (h, w):
            raise ValueError(f"plane of shape {plane.shape[:2]} does not match image {h}x{w}")
    s = cfg.crop
    out = ([], [], [], [])
    planes = (x1.data, x2.data, cm.data[:, :, None].astype(np.float64), pcs.data[:, :, None])
    for top in tile_origins(h, s, cfg.stride):
        for left in tile_origins(w, s, cfg.stride):
            tiles = [p[top:top + s, left:left + s] for p in planes]
            for kind in AUGMENTATIONS:
                for dst, t in zip(out, tiles):
                    dst.append(augment(t, kind).transpose(2, 0, 1))
    return TrainingSet(*(np.ascontiguousarray(np.stack(a)) for a in out))


# -- loss and training ----------------------------------------------------------------

def weighted_bce_loss(di: nn.Tensor, cm, weights, normalize: bool = True) -> nn.Tensor:
    """Confidence-weighted binary cross-entropy.

    With ``normalize`` the weighted sum is divided by the number of pixels with
    positive weight (at least 1), which keeps its scale independent of how
    many pixels the gate removes.
    """
    cm = np.asarray(cm, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if cm.shape != di.shape or weights.shape != di.shape:
        raise ValueError(f"shape mismatch: prediction {di.shape}, labels {cm.shape}, weights {weights.shape}")
    denom = max(int(np.count_nonzero(weights > 0)), 1) if normalize else 1
    p = nn.clip(di, PROB_EPS, 1.0 - PROB_EPS)
    pos = -weights * cm / denom
    neg = -weights * (1.0 - cm) / denom
    return nn.tsum(nn.add(nn.mul(nn.log(p), pos), nn.mul(nn.log(1.0 - p), neg)))


@dataclass
class TrainingLog:
    """One record per epoch: stage, epoch, mean batch loss, seconds since stage start."""

    records: list = field(default_factory=list)

    def add(self, stage, epoch, loss, wall):
        self.records.append((stage, epoch, loss, wall))

    def losses(self, stage):
        return [r[2] for r in self.records if r[0] == stage]

    def lines(self, timing=True):
        if timing:
            return [f"{s} {e} {loss:.8f} {wall:.3f}" for s, e, loss, wall in self.records]
        return [f"{s} {e} {loss:.8f}" for s, e, loss, _ in self.records]

    def write(self, path, timing=True):
        """Write the log; ``timing=False`` drops the wall-clock column so reruns are byte-identical."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("stage epoch loss" + (" wall_s" if timing else "") + "\n")
            fh.writelines(line + "\n" for line in self.lines(timing))


def _fit(net, data: TrainingSet, targets, epochs, cfg: TrainConfig, rng, log, stage):
    """Adam over seeded shuffled batches.

    ``targets`` is a list of (coefficient, labels, weights) whose weighted
    losses are summed per batch; zero coefficients are skipped.
    """
    params = net.parameters()
    opt = nn.AdamState(lr=cfg.lr)
    targets = [t for t in targets if t[0] != 0]
    n = len(data)
    start = time.perf_counter()
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = np.sort(order[s:s + cfg.batch_size])
            probs = forward(net, data.x1[idx], data.x2[idx], mode="train")
            loss = None
            for coef, labels, weights in targets:
                term = weighted_bce_loss(probs, labels[idx], weights[idx], cfg.normalize_loss)
                term = term if coef == 1 else nn.mul(term, coef)
                loss = term if loss is None else nn.add(loss, term)
            net.zero_grad()
            if loss is None:
                continue
            nn.backward(loss)
            nn.adam_step(params, opt)
            total += float(loss.data)
            batches += 1
        if log is not None:
            log.add(stage, epoch, total / max(batches, 1), time.perf_counter() - start)
    return net


def stage_rngs(seed: int):
    """Independent generators for the teacher and student stages."""
    teacher, student = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(teacher), np.random.default_rng(student)


def train_teacher(x1: RasterImage, x2: RasterImage, cfg: TrainConfig, rng, log=None, pseudo=None) -> ChangeDetector:
    """Train on the pre-detection labels; ``pseudo`` reuses an existing (CM1, PC1*) pair."""
    cm1, pc1s = pseudo if pseudo is not None else predetect(x1, x2, cfg)
    data = make_training_set(x1, x2, cm1, pc1s, cfg)
    with nn.precision(cfg.dtype):
        net = build(cfg.network_config(x1.channels), rng)
        return _fit(net, data, [(1.0, data.labels, data.weights)], cfg.epochs_teacher, cfg, rng, log, "teacher")


def train_student(x1, x2, cm1, pc1s, cm2, pc2s, cfg: TrainConfig, rng, log=None) -> ChangeDetector:
    """Fresh network on ``beta * L1 + (1 - beta) * L2`` over identical tiles."""
    d1 = make_training_set(x1, x2, cm1, pc1s, cfg)
    d2 = make_training_set(x1, x2, cm2, pc2s, cfg)
    targets = [(cfg.beta, d1.labels, d1.weights), (1.0 - cfg.beta, d2.labels, d2.weights)]
    with nn.precision(cfg.dtype):
        net = build(cfg.network_config(x1.channels), rng)
        return _fit(net, d1, targets, cfg.epochs_student, cfg, rng, log, "student")


@dataclass(eq=False)
class UstaResult:
    change_map: ChangeMap
    di: ScalarMap
    teacher: ChangeDetector
    student: ChangeDetector
    cm1: ChangeMap
    pc1s: ScalarMap
    cm2: ChangeMap
    pc2s: ScalarMap
    teacher_di: ScalarMap
    log: TrainingLog


def run_usta(x1: RasterImage, x2: RasterImage, cfg: TrainConfig, teacher: ChangeDetector | None = None) -> UstaResult:
    """Full pipeline.  A ``teacher`` trained earlier under the same settings
    (``beta`` aside) skips the teacher stage without changing the result."""
    t_rng, s_rng = stage_rngs(cfg.seed)
    log = TrainingLog()
    cm1, pc1s = predetect(x1, x2, cfg)
    if teacher is None:
        teacher = train_teacher(x1, x2, cfg, t_rng, log, pseudo=(cm1, pc1s))
    with nn.precision(cfg.dtype):
        teacher_di, cm2 = predict_change_map(teacher, x1, x2)
    pc2s = _confidence(cm2, cfg)
    student = train_student(x1, x2, cm1, pc1s, cm2, pc2s, cfg, s_rng, log)
    with nn.precision(cfg.dtype):
        di, final = predict_change_map(student, x1, x2)
    return UstaResult(final, di, teacher, student, cm1, pc1s, cm2, pc2s, teacher_di, log)
