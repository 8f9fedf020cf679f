"""Implicit neural field over receiver positions, conditioned on ray tracing.

A small fully connected network maps an encoded receiver position plus
per-link ray-traced conditioning features to four channel quantities:
strongest-component received power, its delay, and its arrival azimuth and
elevation. Hidden layers use the SiLU activation; the output head is
linear over normalized targets.

The input vector concatenates two groups:

* position: coordinates scaled by 0.1 and a sinusoidal encoding with
  per-axis frequencies ``2**k * pi / 8`` for ``k`` below the octave count
  (sin and cos per axis per octave);
* traced conditioning: link distance expressed as free-space delay and
  z-scored with the delay statistics, direct-path power and delay z-scored
  with the target statistics, arrival azimuth and elevation divided by
  360, path count scaled by 0.1, and a direct-path validity flag.

Targets are z-scored (power, delay) or divided by 360 (angles) with
statistics taken over the training targets. Training minimizes the batch
mean of the summed squared normalized errors with hand-written
backpropagation and either Adam or plain SGD. Gradients are verifiable
against central finite differences via :func:`grad_check`.

Where the tracer finds no usable direct path the conditioning falls back
to a fitted blocked-path distance law (power), the free-space delay, and
the geometric direction toward the transmitter.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .calib import apply_table
from .chanest import AbgModel
from .constants import C0
from .raytrace import RtFeatures, rt_features, trace
from .scene import Node, _atomic_write_text, aim, direction_to_angles, probe_node, wrap_az

COORD_SCALE = 0.1
N_PATHS_SCALE = 0.1
PE_BASE_FREQ = math.pi / 8.0
DEFAULT_OCTAVES = 6
DEFAULT_HIDDEN_WIDTH = 128
DEFAULT_HIDDEN_LAYERS = 4
N_OUTPUTS = 4
N_RT_FEATURES = 7


class TrainingDivergedError(ArithmeticError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class NormStats:
    """Z-scoring statistics for the power and delay quantities."""

    p_mean: float
    p_std: float
    tau_mean: float
    tau_std: float

    def __post_init__(self):
        if self.p_std <= 0.0 or self.tau_std <= 0.0:
            raise ValueError("normalization stds must be positive")

    def to_dict(self) -> dict:
        return {
            "p_mean": self.p_mean,
            "p_std": self.p_std,
            "tau_mean": self.tau_mean,
            "tau_std": self.tau_std,
        }


@dataclass(frozen=True)
class Sample:
    """One supervised example: position, conditioning, four targets."""

    x: tuple
    rt: RtFeatures
    target_p_db: float
    target_tau_ns: float
    target_az_deg: float
    target_el_deg: float


@dataclass
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    batch_size: int = None
    optimizer: str = "adam"
    freeze_hidden: bool = False
    ablate_rt: bool = False
    hidden_width: int = DEFAULT_HIDDEN_WIDTH
    hidden_layers: int = DEFAULT_HIDDEN_LAYERS
    encoding_octaves: int = DEFAULT_OCTAVES

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.learning_rate <= 0.0:
            raise ValueError("learning rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("network needs at least one hidden unit")
        if self.encoding_octaves < 0:
            raise ValueError("octave count cannot be negative")


@dataclass
class InfModel:
    encoding_octaves: int
    layer_sizes: list
    weights: list
    biases: list
    norm: NormStats
    nlos_fallback: AbgModel = None
    order_offsets: tuple = (0.0, 0.0, 0.0)
    ablate_rt: bool = False
    seed: int = None

    @property
    def n_features(self) -> int:
        return self.layer_sizes[0]


@dataclass(frozen=True)
class ChannelPrediction:
    p_db: float
    tau_ns: float
    az_deg: float
    el_deg: float
    los: bool


def feature_count(octaves: int) -> int:
    return 3 + 6 * octaves + N_RT_FEATURES


# --------------------------------------------------------------------------
# features and normalization
# --------------------------------------------------------------------------


def normalize(samples):
    """Z-score power/delay targets, divide angles by 360.

    Returns (normalized samples, stats). Statistics are population
    moments (ddof 0) over the training targets; constant targets are
    rejected since they cannot be z-scored.
    """
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to normalize")
    p = np.array([s.target_p_db for s in samples])
    tau = np.array([s.target_tau_ns for s in samples])
    p_std = float(p.std())
    tau_std = float(tau.std())
    if p_std <= 0.0:
        raise ValueError("power targets have zero variance")
    if tau_std <= 0.0:
        raise ValueError("delay targets have zero variance")
    stats = NormStats(float(p.mean()), p_std, float(tau.mean()), tau_std)
    out = [
        replace(
            s,
            target_p_db=(s.target_p_db - stats.p_mean) / stats.p_std,
            target_tau_ns=(s.target_tau_ns - stats.tau_mean) / stats.tau_std,
            target_az_deg=s.target_az_deg / 360.0,
            target_el_deg=s.target_el_deg / 360.0,
        )
        for s in samples
    ]
    return out, stats


def normalize_targets(stats: NormStats, s: Sample):
    return np.array(
        [
            (s.target_p_db - stats.p_mean) / stats.p_std,
            (s.target_tau_ns - stats.tau_mean) / stats.tau_std,
            s.target_az_deg / 360.0,
            s.target_el_deg / 360.0,
        ]
    )


def denormalize_outputs(stats: NormStats, y):
    """Network outputs (..., 4) -> (power dB, delay ns, az deg, el deg)."""
    y = np.asarray(y, dtype=np.float64)
    p = y[..., 0] * stats.p_std + stats.p_mean
    tau = y[..., 1] * stats.tau_std + stats.tau_mean
    az = wrap_az(y[..., 2] * 360.0)
    el = np.clip(y[..., 3] * 360.0, -90.0, 90.0)
    return p, tau, az, el


def encode_position(x, octaves: int):
    """Scaled coordinates plus sin/cos octaves, shape (..., 3 + 6*octaves)."""
    x = np.asarray(x, dtype=np.float64)
    parts = [x * COORD_SCALE]
    for k in range(octaves):
        f = PE_BASE_FREQ * 2.0**k
        parts.append(np.sin(f * x))
        parts.append(np.cos(f * x))
    return np.concatenate(parts, axis=-1)


def rt_feature_vector(rt: RtFeatures, stats: NormStats):
    d_tau_ns = rt.d_m / C0 * 1e9
    return np.array(
        [
            (d_tau_ns - stats.tau_mean) / stats.tau_std,
            (rt.p_los_db - stats.p_mean) / stats.p_std,
            (rt.tau_los_ns - stats.tau_mean) / stats.tau_std,
            rt.az_los_deg / 360.0,
            rt.el_los_deg / 360.0,
            rt.n_paths * N_PATHS_SCALE,
            1.0 if rt.los_valid else 0.0,
        ]
    )


def feature_vector(x, rt: RtFeatures, stats: NormStats, octaves: int, ablate_rt: bool = False):
    pos = encode_position(x, octaves)
    cond = np.zeros(N_RT_FEATURES) if ablate_rt else rt_feature_vector(rt, stats)
    return np.concatenate([pos, cond])


def feature_matrix(samples, stats: NormStats, octaves: int, ablate_rt: bool = False):
    return np.stack(
        [feature_vector(s.x, s.rt, stats, octaves, ablate_rt) for s in samples]
    )


def target_matrix(samples, stats: NormStats):
    return np.stack([normalize_targets(stats, s) for s in samples])


# --------------------------------------------------------------------------
# network core
# --------------------------------------------------------------------------


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _silu(z):
    return z * _sigmoid(z)


def _silu_deriv(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def init_params(layer_sizes, seed: int = 0):
    """Uniform symmetric init scaled by fan-in plus fan-out; zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = math.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return weights, biases


def forward_features(weights, biases, X):
    """Network outputs for a feature matrix (B, n_in) -> (B, 4), normalized."""
    A = np.asarray(X, dtype=np.float64)
    if A.ndim == 1:
        A = A[None, :]
    for W, b in zip(weights[:-1], biases[:-1]):
        A = _silu(A @ W + b)
    return A @ weights[-1] + biases[-1]


def loss_and_grads(weights, biases, X, Y):
    """Mean summed squared error and its gradients.

    Returns (loss, weight grads, bias grads), the gradient lists parallel
    to the parameter lists.
    """
    B = X.shape[0]
    acts = [np.asarray(X, dtype=np.float64)]
    zs = []
    A = acts[0]
    for W, b in zip(weights[:-1], biases[:-1]):
        Z = A @ W + b
        zs.append(Z)
        A = _silu(Z)
        acts.append(A)
    Yhat = A @ weights[-1] + biases[-1]
    err = Yhat - Y
    loss = float(np.mean(np.sum(err**2, axis=1)))

    g_w = [None] * len(weights)
    g_b = [None] * len(biases)
    dZ = 2.0 * err / B
    g_w[-1] = acts[-1].T @ dZ
    g_b[-1] = dZ.sum(axis=0)
    dA = dZ @ weights[-1].T
    for layer in range(len(weights) - 2, -1, -1):
        dZ = dA * _silu_deriv(zs[layer])
        g_w[layer] = acts[layer].T @ dZ
        g_b[layer] = dZ.sum(axis=0)
        if layer > 0:
            dA = dZ @ weights[layer].T
    return loss, g_w, g_b


def batch_loss(weights, biases, X, Y) -> float:
    Yhat = forward_features(weights, biases, X)
    return float(np.mean(np.sum((Yhat - Y) ** 2, axis=1)))


def train(
    samples,
    cfg: TrainConfig = None,
    norm: NormStats = None,
    nlos_fallback: AbgModel = None,
    order_offsets=(0.0, 0.0, 0.0),
):
    """Fit the field to samples; returns (model, per-epoch loss history).

    ``norm`` overrides the statistics computed from the targets (useful
    when training on a subset of a larger corpus). The history holds the
    loss before each update plus the final loss, so ``history[0]`` is the
    loss of the untrained network.
    """
    if cfg is None:
        cfg = TrainConfig()
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to train")
    if norm is None:
        _, norm = normalize(samples)
    X = feature_matrix(samples, norm, cfg.encoding_octaves, cfg.ablate_rt)
    Y = target_matrix(samples, norm)
    layer_sizes = (
        [feature_count(cfg.encoding_octaves)]
        + [cfg.hidden_width] * cfg.hidden_layers
        + [N_OUTPUTS]
    )
    weights, biases = init_params(layer_sizes, cfg.seed)

    m_w = [np.zeros_like(W) for W in weights]
    v_w = [np.zeros_like(W) for W in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    t = 0
    rng = np.random.default_rng(cfg.seed + 1)
    history = []

    def step(gw, gb):
        nonlocal t
        t += 1
        last = len(weights) - 1
        for i in range(len(weights)):
            if cfg.freeze_hidden and i != last:
                continue
            if cfg.optimizer == "sgd":
                weights[i] -= cfg.learning_rate * gw[i]
                biases[i] -= cfg.learning_rate * gb[i]
                continue
            m_w[i] = cfg.beta1 * m_w[i] + (1.0 - cfg.beta1) * gw[i]
            v_w[i] = cfg.beta2 * v_w[i] + (1.0 - cfg.beta2) * gw[i] ** 2
            m_b[i] = cfg.beta1 * m_b[i] + (1.0 - cfg.beta1) * gb[i]
            v_b[i] = cfg.beta2 * v_b[i] + (1.0 - cfg.beta2) * gb[i] ** 2
            c1 = 1.0 - cfg.beta1**t
            c2 = 1.0 - cfg.beta2**t
            weights[i] -= cfg.learning_rate * (m_w[i] / c1) / (
                np.sqrt(v_w[i] / c2) + cfg.adam_eps
            )
            biases[i] -= cfg.learning_rate * (m_b[i] / c1) / (
                np.sqrt(v_b[i] / c2) + cfg.adam_eps
            )

    n = X.shape[0]
    for epoch in range(cfg.epochs):
        if cfg.batch_size is None or cfg.batch_size >= n:
            loss, gw, gb = loss_and_grads(weights, biases, X, Y)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            history.append(loss)
            step(gw, gb)
        else:
            perm = rng.permutation(n)
            losses = []
            for lo in range(0, n, cfg.batch_size):
                sel = perm[lo : lo + cfg.batch_size]
                loss, gw, gb = loss_and_grads(weights, biases, X[sel], Y[sel])
                if not math.isfinite(loss):
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
                losses.append(loss)
                step(gw, gb)
            history.append(float(np.mean(losses)))
    history.append(batch_loss(weights, biases, X, Y))

    model = InfModel(
        encoding_octaves=cfg.encoding_octaves,
        layer_sizes=layer_sizes,
        weights=weights,
        biases=biases,
        norm=norm,
        nlos_fallback=nlos_fallback,
        order_offsets=tuple(float(v) for v in order_offsets),
        ablate_rt=cfg.ablate_rt,
        seed=cfg.seed,
    )
    return model, history


def grad_check(model: InfModel, samples, epsilon: float = 1e-6, grads=None) -> float:
    """Worst relative gap between analytic and central-difference gradients.

    ``grads`` replaces the analytic gradients when given (as a
    (weight grads, bias grads) pair), which lets tests verify that a
    corrupted backward pass is flagged. The relative gap denominator is
    floored so that round-off on near-zero gradients cannot dominate.
    """
    X = feature_matrix(samples, model.norm, model.encoding_octaves, model.ablate_rt)
    Y = target_matrix(samples, model.norm)
    weights = [W.copy() for W in model.weights]
    biases = [b.copy() for b in model.biases]
    if grads is None:
        _, g_w, g_b = loss_and_grads(weights, biases, X, Y)
    else:
        g_w, g_b = grads
    worst = 0.0
    for params, analytic in ((weights, g_w), (biases, g_b)):
        for arr, g in zip(params, analytic):
            flat = arr.reshape(-1)
            gf = np.asarray(g).reshape(-1)
            for k in range(flat.shape[0]):
                orig = flat[k]
                h = epsilon * max(1.0, abs(orig))
                flat[k] = orig + h
                up = batch_loss(weights, biases, X, Y)
                flat[k] = orig - h
                dn = batch_loss(weights, biases, X, Y)
                flat[k] = orig
                numeric = (up - dn) / (2.0 * h)
                denom = max(abs(gf[k]), abs(numeric), 1e-5)
                worst = max(worst, abs(gf[k] - numeric) / denom)
    return worst


# --------------------------------------------------------------------------
# prediction
# --------------------------------------------------------------------------


def fallback_features(x, tx: Node, abg_nlos: AbgModel, n_paths: int = 0) -> RtFeatures:
    """Conditioning for a point the tracer could not reach directly.

    Power follows the blocked-path distance law, delay is the free-space
    delay, and the angles point geometrically at the transmitter.
    """
    if abg_nlos is None:
        raise ValueError("no blocked-path distance law available for fallback")
    x = np.asarray(x, dtype=np.float64)
    txp = np.asarray(tx.position, dtype=np.float64)
    d = float(np.linalg.norm(x - txp))
    if d <= 0.0:
        raise ValueError("query point coincides with the transmitter")
    az, el = direction_to_angles(txp - x)
    return RtFeatures(
        d_m=d,
        p_los_db=-float(abg_nlos.path_loss_db(d)),
        tau_los_ns=d / C0 * 1e9,
        az_los_deg=az,
        el_los_deg=el,
        n_paths=n_paths,
        los_valid=False,
    )


def forward(model: InfModel, x, rt: RtFeatures) -> ChannelPrediction:
    """Evaluate the field at one point with given conditioning."""
    f = feature_vector(x, rt, model.norm, model.encoding_octaves, model.ablate_rt)
    y = forward_features(model.weights, model.biases, f)[0]
    p, tau, az, el = denormalize_outputs(model.norm, y)
    return ChannelPrediction(
        p_db=float(p), tau_ns=float(tau), az_deg=float(az), el_deg=float(el),
        los=rt.los_valid,
    )


def predict(
    model: InfModel,
    scene,
    tx: Node,
    x,
    max_order: int = 2,
    freq_hz: float = None,
    power_floor_db: float = None,
) -> ChannelPrediction:
    """Trace the link, condition the field, evaluate at ``x``.

    The transmitter is aimed at the query point, matching how training
    links are measured. Falls back to the blocked-path law when no path
    survives or the direct path is blocked.
    """
    from .constants import DEFAULT_FREQ_HZ, DEFAULT_POWER_FLOOR_DB

    freq_hz = DEFAULT_FREQ_HZ if freq_hz is None else freq_hz
    power_floor_db = DEFAULT_POWER_FLOOR_DB if power_floor_db is None else power_floor_db
    paths = trace(
        scene, aim(tx, x), probe_node(x), max_order, freq_hz, power_floor_db
    )
    paths = apply_table(paths, np.asarray(model.order_offsets))
    feats = rt_features(paths, tx, probe_node(x))
    if feats.n_paths == 0:
        feats = fallback_features(x, tx, model.nlos_fallback)
    elif not feats.los_valid:
        feats = fallback_features(x, tx, model.nlos_fallback, n_paths=feats.n_paths)
    return forward(model, x, feats)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

DATASET_FIELDS = [
    "x", "y", "z", "d", "p_los", "tau_los", "az_los", "el_los",
    "n_paths", "los_valid", "target_p", "target_tau", "target_az", "target_el",
]


def save_dataset_csv(path, samples):
    lines = [",".join(DATASET_FIELDS)]
    for s in samples:
        lines.append(
            ",".join(
                ["%.9g" % v for v in s.x]
                + [
                    "%.9g" % s.rt.d_m,
                    "%.9g" % s.rt.p_los_db,
                    "%.9g" % s.rt.tau_los_ns,
                    "%.9g" % s.rt.az_los_deg,
                    "%.9g" % s.rt.el_los_deg,
                    str(s.rt.n_paths),
                    "1" if s.rt.los_valid else "0",
                    "%.9g" % s.target_p_db,
                    "%.9g" % s.target_tau_ns,
                    "%.9g" % s.target_az_deg,
                    "%.9g" % s.target_el_deg,
                ]
            )
        )
    _atomic_write_text(path, "\n".join(lines) + "\n")


def load_dataset_csv(path):
    samples = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [f for f in DATASET_FIELDS if f not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for row in reader:
            rt = RtFeatures(
                d_m=float(row["d"]),
                p_los_db=float(row["p_los"]),
                tau_los_ns=float(row["tau_los"]),
                az_los_deg=float(row["az_los"]),
                el_los_deg=float(row["el_los"]),
                n_paths=int(row["n_paths"]),
                los_valid=row["los_valid"] == "1",
            )
            samples.append(
                Sample(
                    x=(float(row["x"]), float(row["y"]), float(row["z"])),
                    rt=rt,
                    target_p_db=float(row["target_p"]),
                    target_tau_ns=float(row["target_tau"]),
                    target_az_deg=float(row["target_az"]),
                    target_el_deg=float(row["target_el"]),
                )
            )
    return samples


def save_model(model: InfModel, json_path: str):
    """JSON header next to a CSV of weights (full float precision)."""
    base = os.path.splitext(json_path)[0]
    weights_name = os.path.basename(base) + "_weights.csv"
    fb = model.nlos_fallback
    header = {
        "encoding_octaves": model.encoding_octaves,
        "layer_sizes": list(model.layer_sizes),
        "norm": model.norm.to_dict(),
        "nlos_fallback": None
        if fb is None
        else {
            "alpha": fb.alpha,
            "beta": fb.beta,
            "condition": fb.condition,
            "n_samples": fb.n_samples,
        },
        "order_offsets": list(model.order_offsets),
        "ablate_rt": model.ablate_rt,
        "seed": model.seed,
        "weights_file": weights_name,
    }
    _atomic_write_text(json_path, json.dumps(header, indent=2, sort_keys=True) + "\n")
    lines = ["layer,kind,row,col,value"]
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        for r in range(W.shape[0]):
            for c in range(W.shape[1]):
                lines.append("%d,w,%d,%d,%.17g" % (i, r, c, W[r, c]))
        for c in range(b.shape[0]):
            lines.append("%d,b,0,%d,%.17g" % (i, c, b[c]))
    _atomic_write_text(
        os.path.join(os.path.dirname(json_path) or ".", weights_name),
        "\n".join(lines) + "\n",
    )


def load_model(json_path: str) -> InfModel:
    with open(json_path) as fh:
        header = json.load(fh)
    sizes = [int(v) for v in header["layer_sizes"]]
    if len(sizes) < 2 or sizes[-1] != 4:
        raise ValueError(f"{json_path}: layer sizes must end in 4 outputs")
    octaves = int(header["encoding_octaves"])
    if sizes[0] != feature_count(octaves):
        raise ValueError(
            f"{json_path}: first layer expects {sizes[0]} inputs but "
            f"{octaves} octaves encode to {feature_count(octaves)}"
        )
    weights = [
        np.zeros((n_in, n_out)) for n_in, n_out in zip(sizes[:-1], sizes[1:])
    ]
    biases = [np.zeros(n_out) for n_out in sizes[1:]]
    csv_path = os.path.join(os.path.dirname(json_path), header["weights_file"])
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            i = int(row["layer"])
            if row["kind"] == "w":
                weights[i][int(row["row"]), int(row["col"])] = float(row["value"])
            else:
                biases[i][int(row["col"])] = float(row["value"])
    fb = header.get("nlos_fallback")
    return InfModel(
        encoding_octaves=int(header["encoding_octaves"]),
        layer_sizes=sizes,
        weights=weights,
        biases=biases,
        norm=NormStats(**header["norm"]),
        nlos_fallback=None
        if fb is None
        else AbgModel(fb["alpha"], fb["beta"], fb["condition"], int(fb["n_samples"])),
        order_offsets=tuple(float(v) for v in header["order_offsets"]),
        ablate_rt=bool(header["ablate_rt"]),
        seed=header.get("seed"),
    )
