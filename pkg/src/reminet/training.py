"""Training loop: per-subject Adam steps with freshly sampled centeredness targets."""

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autograd as ag
from ._io import atomic_write_text, fmt
from .dataset import ConfigurationError
from .losses import LossBreakdown, subject_loss
from .model import DEFAULT_HIDDEN_DIMS, VARIANTS, forward_subject, init_params

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Non-finite loss or gradient during training."""


@dataclass
class TrainingConfig:
    variant: str = "full"
    hidden_dims: tuple = DEFAULT_HIDDEN_DIMS
    learning_rate: float = 0.0008
    epochs: int = 100
    alpha: float = 0.3
    k_samples: int = 10
    cycles: int = None  # None -> variant default
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    eval_every: int = 1
    grad_clip: float = None  # e.g. 5.0 clips gradient entries to +-5

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        if self.cycles is None:
            self.cycles = VARIANTS.get(self.variant, (None, 0))[1]
        self.validate()

    def validate(self, n_train=None):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0")
        if self.k_samples < 1:
            raise ConfigurationError("k_samples must be >= 1")
        if n_train is not None and self.k_samples > n_train:
            raise ConfigurationError(f"k_samples={self.k_samples} exceeds training set size {n_train}")
        if self.cycles < 0:
            raise ConfigurationError("cycles must be >= 0")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be >= 1")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigurationError("grad_clip must be positive when set")

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    centeredness: float
    time_reg: float
    total: float
    heldout: float = math.nan


@dataclass
class TrainingHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def totals(self):
        return [r.total for r in self.records]

    def to_csv(self):
        lines = ["epoch,centeredness,time_reg,total,heldout"]
        for r in self.records:
            lines.append(f"{r.epoch},{fmt(r.centeredness)},{fmt(r.time_reg)},{fmt(r.total)},{fmt(r.heldout)}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        atomic_write_text(path, self.to_csv())


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_params(cls, params):
        arrays = params.arrays()
        return cls({k: np.zeros_like(a) for k, a in arrays.items()},
                   {k: np.zeros_like(a) for k, a in arrays.items()})


def adam_step(params, grads, state, config, epoch=None):
    """One bias-corrected Adam update, in place on ``params``; returns ``(params, state)``."""
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_epsilon, config.learning_rate
    named = params.named_parameters()
    for name, _ in named:
        if name not in grads:
            raise TrainingError(f"missing gradient for {name}")
        if not np.all(np.isfinite(grads[name])):
            raise TrainingError(f"non-finite gradient for {name} at epoch {epoch}")
    state.step += 1
    t = state.step
    for name, p in named:
        g = grads[name]
        if config.grad_clip is not None:
            g = np.clip(g, -config.grad_clip, config.grad_clip)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1 ** t)
        v_hat = state.v[name] / (1.0 - b2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def sample_subset(train_ids, k, rng):
    """Uniform sample of ``k`` ids without replacement."""
    train_ids = list(train_ids)
    if k < 1 or k > len(train_ids):
        raise ConfigurationError(f"cannot sample {k} of {len(train_ids)} subjects")
    idx = rng.choice(len(train_ids), size=k, replace=False)
    return [train_ids[i] for i in idx]


def train(dataset, config, eval_set=None, params=None):
    """Train on every subject of ``dataset``.

    Returns ``(last, best, history)``. ``best`` is the snapshot with the lowest
    mean held-out centeredness on ``eval_set`` (checked every ``eval_every``
    epochs); without an evaluation set it is a copy of ``last``.
    """
    # Local import: evaluation depends on training for crossval.
    from .evaluation import heldout_score

    n_r, n_v, n_t = dataset.dims
    config.validate(n_train=len(dataset))
    if config.alpha > 0 and n_t < 2:
        raise ConfigurationError("alpha > 0 requires at least 2 timepoints")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(config.variant, n_v, config.hidden_dims, seed=config.seed)
    state = AdamState.for_params(params)
    by_id = {s.subject_id: s for s in dataset.subjects}
    ids = dataset.ids
    history = TrainingHistory()
    best, best_score = None, math.inf

    for epoch in range(1, config.epochs + 1):
        order = [ids[i] for i in rng.permutation(len(ids))]
        parts = []
        for sid in order:
            subject = by_id[sid]
            samples = [by_id[x] for x in sample_subset(ids, config.k_samples, rng)]
            params.zero_grad()
            cbts = forward_subject(subject.baseline, params, n_t, config.cycles)
            loss, parts_s = subject_loss(cbts, samples, config.alpha)
            if not math.isfinite(loss.item()):
                raise TrainingError(f"non-finite loss at epoch {epoch}, subject {sid}")
            ag.backward(loss)
            grads = {name: p.grad for name, p in params.named_parameters()}
            adam_step(params, grads, state, config, epoch=epoch)
            parts.append(parts_s)

        record = EpochRecord(
            epoch,
            float(np.mean([b.centeredness for b in parts])),
            float(np.mean([b.time_reg for b in parts])),
            float(np.mean([b.total for b in parts])),
        )
        if eval_set is not None and (epoch % config.eval_every == 0 or epoch == config.epochs):
            score = heldout_score(params, dataset, eval_set, config)
            record.heldout = score
            if score < best_score:
                best_score = score
                best = params.copy()
                best.extra = {"epoch": epoch, "heldout": score}
        history.records.append(record)
        log.debug("epoch %d: total %.6g heldout %.6g", epoch, record.total, record.heldout)

    params.zero_grad()
    params.extra = {"epoch": config.epochs}
    if best is None:
        best = params.copy()
    return params, best, history


__all__ = [
    "TrainingConfig",
    "TrainingError",
    "TrainingHistory",
    "EpochRecord",
    "AdamState",
    "LossBreakdown",
    "adam_step",
    "sample_subset",
    "train",
]
