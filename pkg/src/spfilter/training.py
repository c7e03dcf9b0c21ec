"""Losses, augmentation and a small trainable two-head predictor.

The network is a stack of 'same'-padded convolutions written directly in
numpy with hand-derived backpropagation: 3x3 (4 -> h) tanh, 3x3 (h -> h)
tanh, 1x1 (h -> 3). Output channel 0 is the support-surface depth through a
scaled softplus, channels 1-2 are rigid/support class scores.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .filter import BasePredictor
from .geometry import CameraIntrinsics, SparseDepthImage
from .io import FormatError
from .labels import SsdeLabel, TrainingSample

logger = logging.getLogger(__name__)

W_DEPTH = 0.02
VARIANCE_FLOOR = 1e-6
SPFM_MAGIC = b"SPFM"
SPFM_VERSION = 1


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message, params, history):
        super().__init__(message)
        self.params = params
        self.history = history


# -- losses ---------------------------------------------------------------------------

@dataclass
class LossReport:
    L_de: float
    L_seg: float
    L_total: float
    valid_pixel_count: int
    empty_label: bool = False


def depth_loss(depth_pred, ssde: SsdeLabel, reduction: str = "mean") -> tuple[float, bool]:
    """Inverse-variance weighted squared error over labeled pixels.

    Returns ``(loss, empty)``; ``empty`` flags a label without valid pixels.
    """
    depth_pred = np.asarray(depth_pred, dtype=float)
    if depth_pred.shape != ssde.shape:
        raise ValueError("prediction and label differ in shape")
    sel = np.asarray(ssde.valid, dtype=bool)
    n = int(np.count_nonzero(sel))
    if n == 0:
        return 0.0, True
    var = np.maximum(np.asarray(ssde.variance, dtype=float)[sel], VARIANCE_FLOOR)
    err = depth_pred[sel] - np.asarray(ssde.depth, dtype=float)[sel]
    total = float(np.sum(err * err / var))
    return (total / n if reduction == "mean" else total), False


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    mx = scores.max(axis=-1, keepdims=True)
    return scores - mx - np.log(np.sum(np.exp(scores - mx), axis=-1, keepdims=True))


def seg_loss(class_scores, y_s) -> float:
    """Mean two-class cross-entropy over all pixels."""
    s = np.asarray(class_scores, dtype=float)
    y = np.asarray(y_s).astype(np.int64)
    logp = _log_softmax(s)
    picked = np.take_along_axis(logp, y[..., None], axis=-1)[..., 0]
    return float(-np.mean(picked))


def total_loss(L_seg: float, L_de: float, w: float = W_DEPTH) -> float:
    if L_seg < 0 or L_de < 0:
        raise ValueError("losses must be non-negative")
    return L_seg + w * L_de


# -- augmentation -------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    hflip_prob: float = 0.5
    crop_from: tuple[int, int] = (540, 720)
    crop_to: tuple[int, int] = (352, 704)
    seed: int = 0

    def __post_init__(self):
        if any(t > f for t, f in zip(self.crop_to, self.crop_from)):
            raise ValueError("crop_to must not exceed crop_from")


def _flip_depth(img: SparseDepthImage) -> SparseDepthImage:
    n = img.shape[1]
    uv = None
    if img.uv is not None:
        uv = img.uv[:, ::-1].copy()
        uv[..., 0] = (n - 1) - uv[..., 0]
    return SparseDepthImage(img.depth[:, ::-1], img.valid[:, ::-1], uv)


def _crop_depth(img: SparseDepthImage, r0, c0, h, w) -> SparseDepthImage:
    win = (slice(r0, r0 + h), slice(c0, c0 + w))
    uv = None
    if img.uv is not None:
        uv = img.uv[win].copy()
        uv[..., 0] -= c0
        uv[..., 1] -= r0
    return SparseDepthImage(img.depth[win], img.valid[win], uv)


def hflip_sample(s: TrainingSample) -> TrainingSample:
    intr = s.intrinsics
    if intr is not None:
        intr = replace(intr, cx=(intr.width - 1) - intr.cx)
    ssde = SsdeLabel(s.ssde.depth[:, ::-1], s.ssde.variance[:, ::-1], s.ssde.valid[:, ::-1])
    seg = None if s.seg is None else s.seg[:, ::-1]
    return TrainingSample(s.rgb[:, ::-1], _flip_depth(s.sparse_depth), ssde, seg, s.cam_pose, intr)


def crop_sample(s: TrainingSample, r0: int, c0: int, h: int, w: int) -> TrainingSample:
    m, n = s.shape
    if r0 < 0 or c0 < 0 or r0 + h > m or c0 + w > n:
        raise ValueError(f"crop window ({r0}, {c0}, {h}, {w}) exceeds sample of shape {(m, n)}")
    win = (slice(r0, r0 + h), slice(c0, c0 + w))
    intr = s.intrinsics
    if intr is not None:
        try:
            intr = CameraIntrinsics(intr.fx, intr.fy, intr.cx - c0, intr.cy - r0, w, h)
        except ValueError:
            intr = None
    ssde = SsdeLabel(s.ssde.depth[win], s.ssde.variance[win], s.ssde.valid[win])
    seg = None if s.seg is None else s.seg[win]
    return TrainingSample(s.rgb[win], _crop_depth(s.sparse_depth, r0, c0, h, w), ssde, seg, s.cam_pose, intr)


def augment_sample(sample: TrainingSample, cfg: AugmentConfig, rng=None) -> TrainingSample:
    """Random horizontal flip then random crop, applied identically to every raster."""
    m, n = sample.shape
    h, w = cfg.crop_to
    if m < h or n < w:
        raise ValueError(f"sample of shape {(m, n)} is smaller than the crop {cfg.crop_to}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    flip = rng.random() < cfg.hflip_prob
    r0 = int(rng.integers(0, m - h + 1))
    c0 = int(rng.integers(0, n - w + 1))
    out = hflip_sample(sample) if flip else sample
    return crop_sample(out, r0, c0, h, w)


# -- network --------------------------------------------------------------------------

LAYERS = ("conv1", "conv2", "head")


def init_params(seed: int = 0, hidden: int = 16, in_ch: int = 4) -> dict[str, np.ndarray]:
    """Uniform fan-in initialization, biases zero."""
    rng = np.random.default_rng(seed)
    shapes = {"conv1": (hidden, in_ch, 3, 3), "conv2": (hidden, hidden, 3, 3), "head": (3, hidden, 1, 1)}
    params = {}
    for name in LAYERS:
        shp = shapes[name]
        fan_in = shp[1] * shp[2] * shp[3]
        bound = np.sqrt(3.0 / fan_in)
        params[f"{name}.w"] = rng.uniform(-bound, bound, size=shp)
        params[f"{name}.b"] = np.zeros(shp[0])
    return params


def n_parameters(params) -> int:
    return int(sum(v.size for v in params.values()))


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # C, H, W, k, k
    C, H, W = x.shape
    return win.transpose(0, 3, 4, 1, 2).reshape(C * k * k, H * W)


def _col2im(cols: np.ndarray, shape, k: int) -> np.ndarray:
    C, H, W = shape
    pad = k // 2
    out = np.zeros((C, H + 2 * pad, W + 2 * pad))
    cols = cols.reshape(C, k, k, H, W)
    for di in range(k):
        for dj in range(k):
            out[:, di:di + H, dj:dj + W] += cols[:, di, dj]
    return out[:, pad:pad + H, pad:pad + W]


def _conv(x, w, b):
    k = w.shape[-1]
    cols = _im2col(x, k)
    out = w.reshape(w.shape[0], -1) @ cols + b[:, None]
    return out.reshape(w.shape[0], x.shape[1], x.shape[2]), cols


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def network_input(x_rgb, x_d: SparseDepthImage, depth_scale: float) -> np.ndarray:
    rgb = np.asarray(x_rgb, dtype=float)
    return np.concatenate([np.moveaxis(rgb, -1, 0), (x_d.filled(0.0) / depth_scale)[None]], axis=0)


def forward(params, x: np.ndarray, depth_scale: float, cache: bool = False):
    z1, c1 = _conv(x, params["conv1.w"], params["conv1.b"])
    a1 = np.tanh(z1)
    z2, c2 = _conv(a1, params["conv2.w"], params["conv2.b"])
    a2 = np.tanh(z2)
    o, c3 = _conv(a2, params["head.w"], params["head.b"])
    depth = depth_scale * _softplus(o[0])
    scores = np.moveaxis(o[1:], 0, -1)
    if cache:
        return depth, scores, (x, c1, a1, c2, a2, c3, o)
    return depth, scores


def sample_loss_and_grad(params, sample: TrainingSample, w: float = W_DEPTH, depth_scale: float = 5.0,
                         reduction: str = "mean", need_grad: bool = True):
    x = network_input(sample.rgb, sample.sparse_depth, depth_scale)
    depth, scores, (x, c1, a1, c2, a2, c3, o) = forward(params, x, depth_scale, cache=True)

    L_de, empty = depth_loss(depth, sample.ssde, reduction)
    g_o = np.zeros_like(o)
    if not empty:
        sel = sample.ssde.valid
        n = int(np.count_nonzero(sel))
        var = np.maximum(np.asarray(sample.ssde.variance, dtype=float), VARIANCE_FLOOR)
        g_depth = np.where(sel, 2.0 * (depth - sample.ssde.depth) / var, 0.0)
        if reduction == "mean":
            g_depth /= n
        g_o[0] = w * g_depth * depth_scale * _sigmoid(o[0])
    if sample.seg is not None:
        L_seg = seg_loss(scores, sample.seg)
        p = np.exp(_log_softmax(scores))
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, sample.seg.astype(np.int64)[..., None], 1.0, axis=-1)
        g_o[1:] = np.moveaxis((p - onehot) / sample.seg.size, -1, 0)
    else:
        L_seg = 0.0
    report = LossReport(L_de, L_seg, total_loss(L_seg, L_de, w), int(np.count_nonzero(sample.ssde.valid)), empty)
    if not need_grad:
        return report, None

    grads = {}
    C, H, W = o.shape
    go = g_o.reshape(C, -1)
    grads["head.w"] = (go @ c3.T).reshape(params["head.w"].shape)
    grads["head.b"] = go.sum(axis=1)
    g_a2 = _col2im(params["head.w"].reshape(C, -1).T @ go, a2.shape, 1)
    g_z2 = (g_a2 * (1 - a2 ** 2)).reshape(a2.shape[0], -1)
    grads["conv2.w"] = (g_z2 @ c2.T).reshape(params["conv2.w"].shape)
    grads["conv2.b"] = g_z2.sum(axis=1)
    g_a1 = _col2im(params["conv2.w"].reshape(a2.shape[0], -1).T @ g_z2, a1.shape, 3)
    g_z1 = (g_a1 * (1 - a1 ** 2)).reshape(a1.shape[0], -1)
    grads["conv1.w"] = (g_z1 @ c1.T).reshape(params["conv1.w"].shape)
    grads["conv1.b"] = g_z1.sum(axis=1)
    return report, grads


def batch_loss_and_grad(params, samples, **kw):
    """Mean over samples, accumulated in list order for deterministic sums."""
    reports, total = [], None
    for s in samples:
        rep, g = sample_loss_and_grad(params, s, **kw)
        reports.append(rep)
        if g is not None:
            total = g if total is None else {k: total[k] + g[k] for k in total}
    n = len(samples)
    grads = None if total is None else {k: v / n for k, v in total.items()}
    mean = LossReport(
        float(np.mean([r.L_de for r in reports])),
        float(np.mean([r.L_seg for r in reports])),
        float(np.mean([r.L_total for r in reports])),
        int(sum(r.valid_pixel_count for r in reports)),
        all(r.empty_label for r in reports),
    )
    return mean, grads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.01
    seed: int = 0
    w: float = W_DEPTH
    hidden: int = 16
    depth_scale: float = 5.0
    reduction: str = "mean"
    augment: AugmentConfig | None = None


def train_predictor(samples, cfg: TrainConfig = TrainConfig()):
    """Full-batch gradient descent on the total loss, one step per epoch.

    Returns ``(params, history)`` with the loss report before each step and
    a final entry for the trained parameters.
    """
    samples = list(samples)
    if not samples or not any(np.any(s.ssde.valid) or s.seg is not None for s in samples):
        raise ValueError("need at least one sample with depth labels or a segmentation mask")
    params = init_params(cfg.seed, cfg.hidden)
    rng = np.random.default_rng(cfg.seed)
    history = []
    kw = dict(w=cfg.w, depth_scale=cfg.depth_scale, reduction=cfg.reduction)
    for epoch in range(cfg.epochs):
        batch = samples if cfg.augment is None else [augment_sample(s, cfg.augment, rng) for s in samples]
        report, grads = batch_loss_and_grad(params, batch, **kw)
        if not np.isfinite(report.L_total):
            raise TrainingDivergedError(f"loss became non-finite at epoch {epoch}", params, history)
        history.append(report)
        if cfg.learning_rate == 0:
            continue
        new = {k: params[k] - cfg.learning_rate * grads[k] for k in params}
        if not all(np.all(np.isfinite(v)) for v in new.values()):
            raise TrainingDivergedError(f"parameters became non-finite at epoch {epoch}", params, history)
        params = new
    final, _ = batch_loss_and_grad(params, samples, need_grad=False, **kw)
    history.append(final)
    return params, history


# -- checkpoints ----------------------------------------------------------------------

def save_checkpoint(path, params, config: dict | None = None) -> None:
    meta = json.dumps(config or {}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<4sII", SPFM_MAGIC, SPFM_VERSION, len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            bname = name.encode()
            f.write(struct.pack("<I", len(bname)) + bname)
            f.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12:
        raise FormatError(f"{path}: truncated checkpoint")
    magic, version, mlen = struct.unpack_from("<4sII", data)
    if magic != SPFM_MAGIC:
        raise FormatError(f"{path}: not an SPFM checkpoint")
    if version != SPFM_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    config = json.loads(data[off:off + mlen].decode() or "{}")
    off += mlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(shape).astype(float)
        off += 4 * size
    return params, config


class TinyConvPredictor(BasePredictor):
    """Trainable predictor satisfying the filter's predictor contract."""

    name = "tinyconv"
    version = str(SPFM_VERSION)

    def __init__(self, hidden=16, depth_scale=5.0, epochs=100, learning_rate=0.01, w=W_DEPTH,
                 seed=0, reduction="mean"):
        self.hidden = hidden
        self.depth_scale = depth_scale
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.w = w
        self.seed = seed
        self.reduction = reduction

    def _config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.learning_rate, self.seed, self.w, self.hidden,
                           self.depth_scale, self.reduction)

    def fit(self, samples, y=None):
        self.params_, self.history_ = train_predictor(samples, self._config())
        return self

    def predict(self, x_rgb, x_d):
        params = getattr(self, "params_", None)
        if params is None:
            params = init_params(self.seed, self.hidden)
        return forward(params, network_input(x_rgb, x_d, self.depth_scale), self.depth_scale)

    def save(self, path) -> None:
        save_checkpoint(path, self.params_, self.get_params())

    @classmethod
    def load(cls, path) -> "TinyConvPredictor":
        params, config = load_checkpoint(path)
        model = cls(**{k: v for k, v in config.items() if k in cls().get_params()})
        model.params_ = params
        return model
