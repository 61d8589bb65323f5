"""E-Net / M-Net ranging-error mitigation trained under weak labels.

The E-Net maps a CIR to a distribution over environment classes. The M-Net
takes the CIR together with that distribution and regresses the ranging
error. Training minimizes, per sample,

    [err label present] * (err_label - err_hat)^2
    + kl_weight * [env label present] * cross_entropy(onehot(env_label), q)

averaged over the batch. The squared error reaches the E-Net through the
class probabilities fed to the M-Net; the cross-entropy only touches the
E-Net.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nn
from .dataset import CIR_LENGTH, Dataset, EnvQuality, NormStats, Sample, labels_arrays
from ._fileio import write_atomic
from .errors import ShapeError


# Leading edge pinned to bin 20 leaves room for weak paths arriving before the detected edge.
DEFAULT_NORM = NormStats("per_sample_max", align_bin=20)


@dataclass
class GemModel:
    e_net: nn.Mlp
    m_net: nn.Mlp
    k_classes: int = 2
    norm_stats: NormStats = DEFAULT_NORM

    def __post_init__(self):
        if self.e_net.output_dim != self.k_classes:
            raise ShapeError("E-Net must output one logit per class")
        if self.m_net.input_dim != self.e_net.input_dim + self.k_classes or self.m_net.output_dim != 1:
            raise ShapeError("M-Net must map cir (+) class probabilities to a scalar")

    def copy(self) -> "GemModel":
        return GemModel(self.e_net.copy(), self.m_net.copy(), self.k_classes, self.norm_stats)

    def __eq__(self, other):
        return (
            isinstance(other, GemModel)
            and self.k_classes == other.k_classes
            and self.norm_stats == other.norm_stats
            and self.e_net == other.e_net
            and self.m_net == other.m_net
        )


def init_model(k_classes: int = 2, hidden: Sequence[int] = (64, 32), seed: int = 0,
               norm_stats: Optional[NormStats] = None, zero_output: bool = True,
               input_dim: int = CIR_LENGTH) -> GemModel:
    """He-uniform initialized model. ``zero_output`` zeroes both final layers,
    so an untrained model predicts uniform classes and zero error."""
    rng = np.random.default_rng(seed)
    e_net = nn.init_mlp([input_dim, *hidden, k_classes], rng, zero_output=zero_output)
    m_net = nn.init_mlp([input_dim + k_classes, *hidden, 1], rng, zero_output=zero_output)
    return GemModel(e_net, m_net, k_classes, norm_stats or DEFAULT_NORM)


# ---------------------------------------------------------------------------
# forward passes and losses

def e_net_forward(model: GemModel, cir: np.ndarray) -> np.ndarray:
    """Class probabilities q(k | cir) for a normalized CIR (or a batch of them)."""
    logits, _ = nn.forward(model.e_net, cir)
    return nn.softmax(logits)


def m_net_forward(model: GemModel, cir: np.ndarray, class_probs: np.ndarray):
    """Ranging-error estimate from a normalized CIR and its class probabilities."""
    cir = np.asarray(cir, dtype=np.float64)
    probs = np.asarray(class_probs, dtype=np.float64)
    if probs.shape[-1] != model.k_classes or probs.ndim != cir.ndim:
        raise ShapeError(f"class_probs must have {model.k_classes} entries per CIR")
    out, _ = nn.forward(model.m_net, np.concatenate([cir, probs], axis=-1))
    return float(out[0]) if out.ndim == 1 else out[:, 0]


def loss_exp(err_label: float, delta_d_hat: float) -> float:
    """Squared error between the (weak) ranging-error label and the estimate."""
    if err_label is None:
        raise ValueError("loss_exp needs an error label; filter missing labels first")
    return float((err_label - delta_d_hat) ** 2)


def loss_kl(prior_probs: np.ndarray, q_probs: np.ndarray) -> float:
    """Cross-entropy ``-sum p_j log q_j`` of q against the label prior p."""
    p = np.asarray(prior_probs, dtype=np.float64)
    q = np.asarray(q_probs, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError("prior and q must have the same length")
    if abs(p.sum() - 1.0) > 1e-6 or abs(q.sum() - 1.0) > 1e-6 or np.any(p < 0) or np.any(q < 0):
        raise ValueError("inputs must be probability vectors")
    mask = p > 0
    return float(-np.sum(p[mask] * np.log(q[mask])))


def one_hot(label: int, k_classes: int) -> np.ndarray:
    v = np.zeros(k_classes)
    v[label] = 1.0
    return v


@dataclass
class Objective:
    loss: float
    l_exp: float
    l_kl: float
    e_grads: nn.Gradients
    m_grads: nn.Gradients
    probs: np.ndarray


def objective_arrays(model: GemModel, x: np.ndarray, onehot: np.ndarray, env_mask: np.ndarray,
                     target: np.ndarray, err_mask: np.ndarray, kl_weight: float = 1.0,
                     detach_probs: bool = False, need_grads: bool = True) -> Objective:
    """Mean batch objective and its gradients, on pre-normalized arrays."""
    n = len(x)
    if n == 0:
        raise ValueError("empty batch")
    logits, e_cache = nn.forward(model.e_net, x)
    z = logits - logits.max(axis=1, keepdims=True)
    log_q = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(log_q)
    m_out, m_cache = nn.forward(model.m_net, np.concatenate([x, probs], axis=1))
    resid = m_out[:, 0] - target
    exp_terms = err_mask * resid**2
    kl_terms = -env_mask * np.sum(onehot * log_q, axis=1)
    l_exp = float(exp_terms.sum() / n)
    l_kl = float(kl_terms.sum() / n)
    loss = l_exp + kl_weight * l_kl
    if not need_grads:
        return Objective(loss, l_exp, l_kl, None, None, probs)

    d_out = (2.0 / n) * (err_mask * resid)[:, None]
    m_grads, d_in = nn.backward(model.m_net, m_cache, d_out)
    d_logits = (kl_weight / n) * env_mask[:, None] * (probs - onehot)
    if not detach_probs:
        d_logits = d_logits + nn.softmax_backward(probs, d_in[:, x.shape[1]:])
    e_grads, _ = nn.backward(model.e_net, e_cache, d_logits)
    return Objective(loss, l_exp, l_kl, e_grads, m_grads, probs)


def batch_objective(model: GemModel, batch: Sequence[Sample], kl_weight: float = 1.0,
                    detach_probs: bool = False):
    """Return ``(loss, e_net gradients, m_net gradients)`` for normalized samples.

    Samples without labels contribute zero; the mean still divides by the
    full batch size.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    x = np.stack([s.cir for s in batch])
    onehot, env_mask, target, err_mask = labels_arrays(batch, model.k_classes)
    obj = objective_arrays(model, x, onehot, env_mask, target, err_mask, kl_weight, detach_probs)
    return obj.loss, obj.e_grads, obj.m_grads


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    kl_weight: float = 1.0
    update_mode: str = "joint"
    detach_probs: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be nonnegative")
        if self.update_mode not in ("joint", "alternating"):
            raise ValueError("update_mode must be 'joint' or 'alternating'")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class EpochStats:
    epoch: int
    total_loss: float
    l_exp: float
    l_kl: float
    env_acc: float


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def __getitem__(self, i):
        return self.epochs[i]

    def save_csv(self, path) -> None:
        def write(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "total_loss", "l_exp", "l_kl", "env_acc"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.total_loss), repr(e.l_exp), repr(e.l_kl), repr(e.env_acc)])

        write_atomic(path, write)


def train(model: GemModel, train_set: Dataset, config: TrainConfig = TrainConfig()):
    """Fit a copy of ``model`` on ``train_set``; returns ``(trained model, history)``.

    CIRs are passed through ``model.norm_stats`` first (idempotent on data that
    is already normalized with the same recipe).
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    model = model.copy()
    x = model.norm_stats.apply(train_set.cir_matrix())
    onehot, env_mask, target, err_mask = labels_arrays(train_set.samples, model.k_classes)
    clean_env = np.array([s.env_quality is EnvQuality.CLEAN for s in train_set.samples])
    true_class = np.array([s.env_label if s.env_label is not None else -1 for s in train_set.samples])

    opt_e = nn.OptimizerState(config.optimizer, config.learning_rate)
    opt_m = nn.OptimizerState(config.optimizer, config.learning_rate)
    rng = np.random.default_rng(config.seed)
    n = len(x)
    history = TrainHistory()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            args = (x[idx], onehot[idx], env_mask[idx], target[idx], err_mask[idx], config.kl_weight,
                    config.detach_probs)
            obj = objective_arrays(model, *args)
            sums += len(idx) * np.array([obj.loss, obj.l_exp, obj.l_kl])
            pred = obj.probs.argmax(axis=1)
            correct += int(np.sum(clean_env[idx] & (pred == true_class[idx])))
            if config.update_mode == "joint":
                nn.step_mlp(model.e_net, obj.e_grads, opt_e)
                nn.step_mlp(model.m_net, obj.m_grads, opt_m)
            else:
                # E-step analogue: improve phi with theta fixed; M-step analogue: improve theta with phi fixed
                nn.step_mlp(model.e_net, obj.e_grads, opt_e)
                obj = objective_arrays(model, *args)
                nn.step_mlp(model.m_net, obj.m_grads, opt_m)
        sums /= n
        acc = correct / clean_env.sum() if clean_env.any() else float("nan")
        history.epochs.append(EpochStats(epoch, float(sums[0]), float(sums[1]), float(sums[2]), float(acc)))
    return model, history


# ---------------------------------------------------------------------------
# inference

def predict_errors(model: GemModel, cirs: np.ndarray) -> np.ndarray:
    """Ranging-error estimates for raw CIRs (one per row)."""
    x = model.norm_stats.apply(np.atleast_2d(cirs))
    return m_net_forward(model, x, e_net_forward(model, x))


def classify(model: GemModel, cirs: np.ndarray) -> np.ndarray:
    """Most likely environment class for raw CIRs (one per row)."""
    x = model.norm_stats.apply(np.atleast_2d(cirs))
    return e_net_forward(model, x).argmax(axis=1)


def mitigate(model: GemModel, cir: np.ndarray, measured_distance_m: float) -> float:
    """Corrected distance ``d_M - err_hat`` for one raw CIR."""
    cir = np.asarray(cir, dtype=np.float64)
    if cir.shape != (model.e_net.input_dim,):
        raise ShapeError(f"expected a CIR of length {model.e_net.input_dim}")
    x = model.norm_stats.apply(cir)
    return float(measured_distance_m - m_net_forward(model, x, e_net_forward(model, x)))


# ---------------------------------------------------------------------------
# checkpoints

def model_to_dict(model: GemModel) -> dict:
    ns = model.norm_stats
    return {
        "format": "uwbgem.gem/1",
        "k_classes": model.k_classes,
        "norm_stats": {"scheme": ns.scheme, "align_bin": ns.align_bin, "align_threshold": ns.align_threshold},
        "e_net": nn.mlp_to_dict(model.e_net),
        "m_net": nn.mlp_to_dict(model.m_net),
    }


def model_from_dict(d: dict) -> GemModel:
    if d.get("format") != "uwbgem.gem/1":
        raise ValueError("not a GEM model checkpoint")
    return GemModel(nn.mlp_from_dict(d["e_net"]), nn.mlp_from_dict(d["m_net"]), int(d["k_classes"]),
                    NormStats(**d["norm_stats"]))


def save_model(model: GemModel, path) -> None:
    write_atomic(path, lambda fh: json.dump(model_to_dict(model), fh, indent=1))


def load_model(path) -> GemModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
