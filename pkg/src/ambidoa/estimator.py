"""Trainable DOA estimator with three interchangeable output heads.

One convolutional-recurrent trunk (conv/ReLU/batch-norm/max-pool stages, a
two-layer bidirectional LSTM, and a shared per-frame dense layer) feeds a
formulation-specific head:

* categorical - one sigmoid score per sphere-grid class, binary cross-entropy
* cartesian   - unconstrained 3-vector, mean squared error against the unit label
* spherical   - (azimuth, elevation) pair, haversine distance loss

Trunk parameters are drawn before head parameters from one seeded generator,
so the three formulations share bit-identical initial trunks.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import nn
from .features import intensity_features
from .geometry import (
    SphereGrid,
    great_circle,
    nearest_class,
    to_cartesian,
    to_spherical,
)

__all__ = [
    "Formulation",
    "NetworkConfig",
    "TrainConfig",
    "Network",
    "build_network",
    "loss_categorical",
    "loss_cartesian",
    "loss_haversine",
    "backward",
    "grad_check",
    "train",
    "predict_window",
    "predict_sample",
    "param_count",
    "save_model",
    "load_model",
    "TrainingDiverged",
]

PROB_CLAMP = 1e-7
HAVERSINE_CLAMP = 1e-12
MODEL_MAGIC = b"ADOM"
MODEL_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class Formulation:
    """Output-head selector; ``grid`` is required for the categorical kind."""

    kind: str  # "categorical" | "cartesian" | "spherical"
    grid: SphereGrid | None = None

    def __post_init__(self):
        if self.kind not in ("categorical", "cartesian", "spherical"):
            raise ValueError(f"unknown formulation kind {self.kind!r}")
        if self.kind == "categorical" and self.grid is None:
            raise ValueError("categorical formulation needs a sphere grid")

    @property
    def out_dim(self):
        if self.kind == "categorical":
            return len(self.grid)
        return 3 if self.kind == "cartesian" else 2


@dataclass(frozen=True)
class NetworkConfig:
    """Topology knobs. ``conv_channels[i]`` and ``pool_factors[i]`` describe
    conv stage i (3x3 conv, ReLU, batch norm, frequency max-pool)."""

    conv_channels: tuple = (64, 64, 64)
    pool_factors: tuple = (8, 8, 4)
    hidden: int = 64
    lstm_layers: int = 2
    fc_width: int = 128
    frames: int = 25
    freq_bins: int = 513

    @staticmethod
    def paper():
        """Full-scale topology: stage outputs 64x25x64, 64x25x8, 64x25x2 on a
        6x25x513 input, flattening to 128 per frame."""
        return NetworkConfig()

    @staticmethod
    def desk():
        """Laptop-scale topology with the same structure (window-256 features)."""
        return NetworkConfig(
            conv_channels=(8, 8, 8),
            pool_factors=(4, 4, 4),
            hidden=16,
            fc_width=16,
            frames=25,
            freq_bins=129,
        )

    @staticmethod
    def tiny():
        """Gradient-check scale: 2 conv channels, hidden 8, 3 frames, 16 bins."""
        return NetworkConfig(
            conv_channels=(2, 2, 2),
            pool_factors=(2, 2, 2),
            hidden=8,
            fc_width=8,
            frames=3,
            freq_bins=16,
        )

    def stage_shapes(self):
        """Per-stage output shapes (channels, frames, bins) of the conv stack."""
        bins = self.freq_bins
        shapes = []
        for ch, pool in zip(self.conv_channels, self.pool_factors):
            bins //= pool
            shapes.append((ch, self.frames, bins))
        return shapes

    @property
    def flat_width(self):
        ch, _, bins = self.stage_shapes()[-1]
        return ch * bins

    def to_dict(self):
        return {
            "conv_channels": list(self.conv_channels),
            "pool_factors": list(self.pool_factors),
            "hidden": self.hidden,
            "lstm_layers": self.lstm_layers,
            "fc_width": self.fc_width,
            "frames": self.frames,
            "freq_bins": self.freq_bins,
        }

    @staticmethod
    def from_dict(d):
        return NetworkConfig(
            conv_channels=tuple(d["conv_channels"]),
            pool_factors=tuple(d["pool_factors"]),
            hidden=d["hidden"],
            lstm_layers=d["lstm_layers"],
            fc_width=d["fc_width"],
            frames=d["frames"],
            freq_bins=d["freq_bins"],
        )


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    clip_norm: float = 5.0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0 and self.learning_rate != 0.0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


class Network:
    """Layer stack plus adaptive-moment optimizer state."""

    def __init__(self, config, formulation, model):
        self.config = config
        self.formulation = formulation
        self.model = model
        self.moment1 = {k: np.zeros_like(v) for k, v in model.named_params().items()}
        self.moment2 = {k: np.zeros_like(v) for k, v in model.named_params().items()}
        self.step = 0

    def forward(self, x, train=False):
        """Per-frame outputs for a (6, frames, bins) tensor or a batch of them."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        expected = (6, self.config.frames, self.config.freq_bins)
        if x.shape[1:] != expected:
            raise ValueError(f"input shape {x.shape[1:]} does not match {expected}")
        y = self.model.forward(x, train=train)
        return y[0] if single else y

    def stage_outputs(self, x):
        """Shapes produced by each conv stage for one input; for reporting."""
        x = np.asarray(x, dtype=np.float64)[None]
        shapes = []
        for layer in self.model.layers:
            x = layer.forward(x, train=False)
            if isinstance(layer, nn.MaxPoolFreq):
                shapes.append(tuple(x.shape[1:]))
        return shapes


def build_network(config: NetworkConfig, formulation: Formulation, seed=0):
    """Assemble the CRNN; the trunk is drawn before the head so that all three
    formulations built from one seed start from the same trunk parameters."""
    rng = np.random.default_rng(seed)
    layers = []
    c_in = 6
    for ch, pool in zip(config.conv_channels, config.pool_factors):
        layers.append(nn.Conv2d(c_in, ch, rng))
        layers.append(nn.ReLU())
        layers.append(nn.BatchNorm2d(ch))
        layers.append(nn.MaxPoolFreq(pool))
        c_in = ch
    layers.append(nn.FrameFlatten())
    d = config.flat_width
    for _ in range(config.lstm_layers):
        layers.append(nn.BiLSTM(d, config.hidden, rng))
        d = 2 * config.hidden
    layers.append(nn.TimeDense(d, config.fc_width, rng))
    layers.append(nn.ReLU())
    layers.append(nn.TimeDense(config.fc_width, formulation.out_dim, rng))
    if formulation.kind == "categorical":
        layers.append(nn.Sigmoid())
    return Network(config, formulation, nn.Sequential(layers))


# ---------------------------------------------------------------------------
# losses (value + gradient with respect to the network output)
# ---------------------------------------------------------------------------

def loss_categorical(outputs, class_index, with_grad=False):
    """Per-frame binary cross-entropy against the one-hot class, summed over
    classes and averaged over frames (and batch). ``outputs`` are sigmoid
    scores in (0, 1); they are clamped away from {0, 1} for finite logs."""
    p, y, (b, t, c) = _prep_scores(outputs, class_index)
    clamped = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -(y * np.log(clamped) + (1 - y) * np.log(1 - clamped)).sum() / (b * t)
    if not with_grad:
        return loss
    grad = np.where(
        (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP),
        (-y / clamped + (1 - y) / (1 - clamped)) / (b * t),
        0.0,
    )
    return loss, grad


def _prep_scores(outputs, class_index):
    p = np.asarray(outputs, dtype=np.float64)
    if p.ndim == 2:
        p = p[None]
    b, t, c = p.shape
    idx = np.atleast_1d(np.asarray(class_index, dtype=np.int64))
    y = np.zeros((b, c))
    y[np.arange(b), idx] = 1.0
    return p, y[:, None, :], (b, t, c)


def loss_cartesian(outputs, label, with_grad=False):
    """Mean over frames and components of the squared difference from the
    unit-vector label; outputs are not renormalized."""
    o = np.asarray(outputs, dtype=np.float64)
    if o.ndim == 2:
        o = o[None]
    b, t, _ = o.shape
    lab = np.atleast_2d(np.asarray(label, dtype=np.float64))[:, None, :]
    diff = o - lab
    loss = (diff**2).sum() / (b * t * 3)
    if not with_grad:
        return loss
    return loss, 2.0 * diff / (b * t * 3)


def loss_haversine(outputs, label, with_grad=False):
    """Mean over frames of the great-circle distance between predicted and
    label (azimuth, elevation), with the haversine intermediate clamped to
    [1e-12, 1 - 1e-12] so the arcsin stays differentiable at the endpoints."""
    o = np.asarray(outputs, dtype=np.float64)
    if o.ndim == 2:
        o = o[None]
    b, t, _ = o.shape
    lab = np.atleast_2d(np.asarray(label, dtype=np.float64))
    az1, el1 = lab[:, None, 0], lab[:, None, 1]
    az2, el2 = o[:, :, 0], o[:, :, 1]
    h_raw = (
        np.sin((el2 - el1) / 2.0) ** 2
        + np.cos(el1) * np.cos(el2) * np.sin((az2 - az1) / 2.0) ** 2
    )
    h = np.clip(h_raw, HAVERSINE_CLAMP, 1.0 - HAVERSINE_CLAMP)
    d = 2.0 * np.arcsin(np.sqrt(h))
    loss = d.sum() / (b * t)
    if not with_grad:
        return loss
    active = (h_raw > HAVERSINE_CLAMP) & (h_raw < 1.0 - HAVERSINE_CLAMP)
    dd_dh = np.where(active, 1.0 / np.sqrt(h * (1.0 - h)), 0.0) / (b * t)
    dh_daz2 = 0.5 * np.cos(el1) * np.cos(el2) * np.sin(az2 - az1)
    dh_del2 = (
        0.5 * np.sin(el2 - el1)
        - np.cos(el1) * np.sin(el2) * np.sin((az2 - az1) / 2.0) ** 2
    )
    grad = np.stack([dd_dh * dh_daz2, dd_dh * dh_del2], axis=2)
    return loss, grad


def _loss_for(formulation: Formulation):
    return {
        "categorical": loss_categorical,
        "cartesian": loss_cartesian,
        "spherical": loss_haversine,
    }[formulation.kind]


def labels_for(formulation: Formulation, unit_vectors):
    """Convert unit-vector ground truth into the formulation's label space."""
    u = np.atleast_2d(np.asarray(unit_vectors, dtype=np.float64))
    if formulation.kind == "cartesian":
        return u
    if formulation.kind == "spherical":
        az, el = to_spherical(u)
        return np.stack([az, el], axis=-1)
    return np.asarray(nearest_class(formulation.grid, u), dtype=np.int64)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def backward(net: Network, x, target, formulation: Formulation = None):
    """Loss and analytic parameter gradients for one (batch of) input(s);
    raises if any gradient turns non-finite, naming the parameter."""
    formulation = formulation or net.formulation
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    net.model.zero_grads()
    out = net.model.forward(x, train=True)
    loss, dout = _loss_for(formulation)(out, target, with_grad=True)
    net.model.backward(dout)
    grads = net.model.named_grads()
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    return loss, grads


def _activation_signature(model):
    """Active-piece fingerprint of the last forward pass: ReLU sign masks and
    max-pool argmax choices. Central differences estimate the derivative only
    while both endpoint evaluations stay on the same piece."""
    parts = []
    for layer in model.layers:
        if isinstance(layer, nn.ReLU):
            parts.append(layer._mask.tobytes())
        elif isinstance(layer, nn.MaxPoolFreq):
            parts.append(layer._argmax.tobytes())
    return b"".join(parts)


def grad_check(net: Network, x, target, formulation: Formulation = None, step=1e-4,
               return_skipped=False):
    """Max over parameter tensors of the relative error between analytic
    gradients and central finite differences:

        ||g_analytic - g_numeric|| / max(||g_analytic|| + ||g_numeric||, 1e-12)

    Every scalar parameter is perturbed (practical at the tiny preset only).
    Scalars whose +/-step interval crosses a ReLU or max-pool kink are
    excluded from the comparison, because the two-point difference does not
    estimate the derivative across a kink; their count is available via
    ``return_skipped``. The analytic value replaces the numeric one in the
    norm so skipping can only be neutral, never flattering.
    """
    formulation = formulation or net.formulation
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    loss_fn = _loss_for(formulation)

    def eval_loss():
        out = net.model.forward(x, train=True)
        return loss_fn(out, target), _activation_signature(net.model)

    _, analytic = backward(net, x, target, formulation)
    worst = 0.0
    skipped = 0
    for name, param in net.model.named_params().items():
        ga = analytic[name]
        numeric = ga.copy()  # skipped entries contribute zero error
        flat = param.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp, sig_p = eval_loss()
            flat[i] = orig - step
            lm, sig_m = eval_loss()
            flat[i] = orig
            if sig_p != sig_m:
                skipped += 1
                continue
            nflat[i] = (lp - lm) / (2.0 * step)
        denom = max(np.linalg.norm(ga) + np.linalg.norm(numeric), 1e-12)
        worst = max(worst, np.linalg.norm(ga - numeric) / denom)
    if return_skipped:
        return worst, skipped
    return worst


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _adam_step(net: Network, lr, clip_norm):
    grads = net.model.named_grads()
    if clip_norm is not None and clip_norm > 0:
        total = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
        if total > clip_norm:
            scale = clip_norm / total
            for g in grads.values():
                g *= scale
    net.step += 1
    t = net.step
    params = net.model.named_params()
    for name, p in params.items():
        g = grads[name]
        m = net.moment1[name]
        v = net.moment2[name]
        m[...] = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v[...] = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g**2
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def train(features, unit_labels, formulation: Formulation, cfg: TrainConfig,
          config: NetworkConfig = None, net: Network = None):
    """Mini-batch adaptive-moment training; deterministic for a fixed seed.

    ``features`` is an (n, 6, frames, bins) array, ``unit_labels`` (n, 3).
    Returns the trained network and a per-epoch history with train loss,
    validation loss, and mean validation angular error in degrees.
    """
    features = np.asarray(features, dtype=np.float64)
    unit_labels = np.asarray(unit_labels, dtype=np.float64)
    n = features.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    if config is None:
        config = NetworkConfig.desk()
    if net is None:
        net = build_network(config, formulation, seed=cfg.seed)
    labels = labels_for(formulation, unit_labels)

    rng = np.random.default_rng(cfg.seed + 0x5EED)
    order = rng.permutation(n)
    n_val = int(round(n * cfg.val_fraction))
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    if train_idx.size == 0:
        raise ValueError("no training samples left after validation split")

    loss_fn = _loss_for(formulation)
    history = []
    for epoch in range(cfg.epochs):
        perm = train_idx[rng.permutation(train_idx.size)]
        running, batches = 0.0, 0
        for start in range(0, perm.size, cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            try:
                loss, _ = backward(net, features[sel], labels[sel], formulation)
            except FloatingPointError as exc:
                raise TrainingDiverged(
                    f"{exc} at epoch {epoch}, batch {batches}"
                ) from exc
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, batch {batches}"
                )
            if cfg.learning_rate > 0:
                _adam_step(net, cfg.learning_rate, cfg.clip_norm)
            running += float(loss)
            batches += 1
        entry = {"epoch": epoch, "train_loss": running / batches}
        if val_idx.size:
            val_out = net.forward(features[val_idx], train=False)
            entry["val_loss"] = float(loss_fn(val_out, labels[val_idx]))
            preds = np.stack([decode_outputs(o, formulation) for o in val_out])
            errs = np.degrees(great_circle(preds, unit_labels[val_idx]))
            entry["val_error_deg"] = float(errs.mean())
        history.append(entry)
    return net, history


# ---------------------------------------------------------------------------
# decoding and inference
# ---------------------------------------------------------------------------

def decode_outputs(outputs, formulation: Formulation):
    """Aggregate per-frame outputs (frames x d) into one unit direction.

    Cartesian: normalized mean vector. Spherical: circular-mean azimuth and
    arithmetic-mean elevation. Categorical: class scores summed over frames,
    argmax class center (invariant to positive rescaling of the scores).
    """
    o = np.asarray(outputs, dtype=np.float64)
    if formulation.kind == "cartesian":
        mean = o.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-6:
            raise ValueError("ambiguous prediction: mean output vector is near zero")
        return mean / norm
    if formulation.kind == "spherical":
        az = np.arctan2(np.sin(o[:, 0]).mean(), np.cos(o[:, 0]).mean())
        el = o[:, 1].mean()
        return to_cartesian(az, el)
    scores = o.sum(axis=0)
    return formulation.grid.directions[int(np.argmax(scores))]


def predict_sample(net: Network, feature_tensor, formulation: Formulation = None):
    """Direction estimate for one full feature tensor (6, frames, bins)."""
    formulation = formulation or net.formulation
    out = net.forward(feature_tensor, train=False)
    return decode_outputs(out, formulation)


def predict_window(net: Network, spec, center_frame, formulation: Formulation = None):
    """Direction estimate from the window of ``config.frames`` frames centered
    at ``center_frame`` of a spectrogram."""
    formulation = formulation or net.formulation
    frames = net.config.frames
    half = frames // 2
    start = center_frame - half
    if start < 0 or start + frames > spec.n_frames:
        raise ValueError(
            f"window [{start}, {start + frames}) does not fit in "
            f"{spec.n_frames} frames"
        )
    feats = intensity_features(spec)
    window = feats.values[:, start : start + frames, :]
    return predict_sample(net, window, formulation)


def param_count(net: Network):
    """Exact number of trainable scalars."""
    return int(sum(p.size for p in net.model.named_params().values()))


# ---------------------------------------------------------------------------
# checkpoints: magic "ADOM", config JSON, little-endian float64 blob
# ---------------------------------------------------------------------------

def save_model(path, net: Network):
    params = net.model.named_params()
    buffers = net.model.named_buffers()
    meta = {
        "config": net.config.to_dict(),
        "formulation": net.formulation.kind,
        "grid_resolution": (
            net.formulation.grid.resolution
            if net.formulation.kind == "categorical"
            else None
        ),
        "params": [[k, list(v.shape)] for k, v in params.items()],
        "buffers": [[k, list(v.shape)] for k, v in buffers.items()],
    }
    blob = json.dumps(meta, sort_keys=True).encode("ascii")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<II", MODEL_VERSION, len(blob)))
        f.write(blob)
        for v in params.values():
            f.write(v.astype("<f8").tobytes(order="C"))
        for v in buffers.values():
            f.write(v.astype("<f8").tobytes(order="C"))


def load_model(path):
    from .geometry import build_grid

    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path} is not a model checkpoint (bad magic)")
        version, blob_len = struct.unpack("<II", f.read(8))
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(f.read(blob_len).decode("ascii"))
        payload = f.read()

    config = NetworkConfig.from_dict(meta["config"])
    if meta["formulation"] == "categorical":
        formulation = Formulation("categorical", build_grid(meta["grid_resolution"]))
    else:
        formulation = Formulation(meta["formulation"])
    net = build_network(config, formulation, seed=0)

    offset = 0
    data = np.frombuffer(payload, dtype="<f8")
    params = net.model.named_params()
    for key, shape in meta["params"]:
        size = int(np.prod(shape)) if shape else 1
        params[key][...] = data[offset : offset + size].reshape(shape)
        offset += size
    buffers = net.model.named_buffers()
    for key, shape in meta["buffers"]:
        size = int(np.prod(shape)) if shape else 1
        buffers[key][...] = data[offset : offset + size].reshape(shape)
        offset += size
    return net
