"""Recurrent graph-convolutional forward pass over brain multigraphs.

Pipeline for one subject: normalize the baseline views, run the stacked
recurrent graph-convolutional cells over ``n_timepoints`` (optionally cycling
the final hidden state back as the prior), then turn each timepoint's node
embeddings into a template via pairwise L1 distances.

Edge features are handled as an ``(n_r*n_r, n_v)`` matrix whose row
``i*n_r + j`` is the fiber ``S[i, j, :]``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from ._io import atomic_write_text, format_matrix

VARIANTS = {
    # name: (normalization, default cycles)
    "vanilla": (None, 0),
    "cyclic": (None, 1),
    "cyclic-minmax": ("minmax", 1),
    "full": ("learned", 1),
}

DEFAULT_HIDDEN_DIMS = (12, 36, 24)
STD_GUARD = 1e-8
RANGE_GUARD = 1e-8


@dataclass
class NormalizerParams:
    gain: ag.Value
    bias: ag.Value

    @classmethod
    def init(cls, n_views):
        return cls(ag.parameter(np.ones((1, n_views)), "norm.gain"),
                   ag.parameter(np.zeros((1, n_views)), "norm.bias"))


@dataclass
class CellParams:
    W_e: ag.Value  # (n_out, n_v)
    W_h: ag.Value  # (n_out, n_in)
    b: ag.Value  # (1, n_out)
    Theta: ag.Value  # (n_out, n_in)

    @property
    def n_in(self):
        return self.W_h.shape[1]

    @property
    def n_out(self):
        return self.W_h.shape[0]

    @classmethod
    def init(cls, n_views, n_in, n_out, rng, prefix="cell"):
        def glorot(rows, cols):
            limit = np.sqrt(6.0 / (rows + cols))
            return rng.uniform(-limit, limit, size=(rows, cols))

        return cls(
            ag.parameter(glorot(n_out, n_views), f"{prefix}.W_e"),
            ag.parameter(glorot(n_out, n_in), f"{prefix}.W_h"),
            ag.parameter(np.zeros((1, n_out)), f"{prefix}.b"),
            ag.parameter(glorot(n_out, n_in), f"{prefix}.Theta"),
        )


@dataclass
class ModelParams:
    variant: str
    hidden_dims: tuple
    n_views: int
    layers: list
    normalizer: NormalizerParams = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        for prev, cur in zip(self.layers[-1:] + self.layers[:-1], self.layers):
            if cur.n_in != prev.n_out:
                raise ag.ShapeError(f"layer input width {cur.n_in} != previous output width {prev.n_out}")

    @property
    def normalization(self):
        return VARIANTS[self.variant][0]

    @property
    def state_dim(self):
        return self.layers[-1].n_out

    def named_parameters(self):
        out = []
        if self.normalizer is not None:
            out += [("norm.gain", self.normalizer.gain), ("norm.bias", self.normalizer.bias)]
        for li, layer in enumerate(self.layers):
            for attr in ("W_e", "W_h", "b", "Theta"):
                out.append((f"layer{li}.{attr}", getattr(layer, attr)))
        return out

    def parameters(self):
        return [v for _, v in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def copy(self):
        return ModelParams.from_arrays(self.variant, self.hidden_dims, self.n_views, self.arrays(),
                                       extra=dict(self.extra))

    def arrays(self):
        return {name: v.data.copy() for name, v in self.named_parameters()}

    @classmethod
    def from_arrays(cls, variant, hidden_dims, n_views, arrays, extra=None):
        template = init_params(variant, n_views, hidden_dims, seed=0)
        for name, v in template.named_parameters():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != v.shape:
                raise ag.ShapeError(f"{name}: stored shape {arr.shape} != expected {v.shape}")
            v.data = arr.copy()
            v.zero_grad()
        template.extra = dict(extra or {})
        return template


def init_params(variant, n_views, hidden_dims=DEFAULT_HIDDEN_DIMS, seed=0):
    """Glorot-uniform weights, zero biases; layer 1 takes the last layer's width as its recurrent input."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    hidden_dims = tuple(int(d) for d in hidden_dims)
    if not hidden_dims or min(hidden_dims) < 1:
        raise ValueError(f"hidden_dims must be positive, got {hidden_dims}")
    rng = np.random.default_rng(seed)
    layers = []
    n_in = hidden_dims[-1]
    for li, n_out in enumerate(hidden_dims):
        layers.append(CellParams.init(n_views, n_in, n_out, rng, prefix=f"layer{li}"))
        n_in = n_out
    normalizer = NormalizerParams.init(n_views) if VARIANTS[variant][0] == "learned" else None
    return ModelParams(variant, hidden_dims, n_views, layers, normalizer)


# --- edge features ----------------------------------------------------------


def _views_of(obs):
    return obs.views if hasattr(obs, "views") else np.asarray(obs, dtype=np.float64)


def edge_matrix(views):
    """``(n_r, n_r, n_v)`` tensor -> ``(n_r*n_r, n_v)`` fiber matrix."""
    n, _, nv = views.shape
    return np.ascontiguousarray(views.reshape(n * n, nv))


def _offdiag_mask(n):
    return ~np.eye(n, dtype=bool)


def normalize_views_learned(obs, params):
    """Per-view z-score over off-diagonal entries, learned affine, then sigmoid.

    Returns an ``(n_r*n_r, n_v)`` Value; diagonal rows are zero.
    """
    views = _views_of(obs)
    n, _, nv = views.shape
    mask = _offdiag_mask(n)
    off = views[mask]  # (n*(n-1), n_v)
    if off.size:
        mu = off.mean(axis=0)
        sd = off.std(axis=0)
    else:
        mu = np.zeros(nv)
        sd = np.zeros(nv)
    z = (views - mu) / (sd + STD_GUARD)
    z[~mask] = 0.0
    keep = np.repeat(mask.reshape(n * n, 1), nv, axis=1).astype(np.float64)
    pre = ag.add(ag.mul(edge_matrix(z), params.gain), params.bias)
    return ag.mul(ag.sigmoid(pre), keep)


def normalize_views_minmax(obs):
    """Per-view ``(x - min) / (max - min + 1e-8)`` over off-diagonal entries; returns a new tensor."""
    views = _views_of(obs)
    n = views.shape[0]
    mask = _offdiag_mask(n)
    off = views[mask]
    if off.size == 0:
        return np.zeros_like(views)
    lo = off.min(axis=0)
    hi = off.max(axis=0)
    out = (views - lo) / (hi - lo + RANGE_GUARD)
    out[~mask] = 0.0
    return out


def edge_features(obs, params):
    """Edge-feature matrix for the variant's normalization."""
    kind = params.normalization
    if kind == "learned":
        return normalize_views_learned(obs, params.normalizer)
    if kind == "minmax":
        return ag.constant(edge_matrix(normalize_views_minmax(obs)))
    return ag.constant(edge_matrix(_views_of(obs)))


# --- recurrent cell ---------------------------------------------------------


def rnn_unit(e, h, params):
    """``tanh(W_e e + W_h h + b)`` for a single edge feature / hidden vector pair, as a row."""
    e = e if isinstance(e, ag.Value) else ag.constant(np.asarray(e, dtype=np.float64).reshape(1, -1))
    h = h if isinstance(h, ag.Value) else ag.constant(np.asarray(h, dtype=np.float64).reshape(1, -1))
    if e.shape != (1, params.W_e.shape[1]) or h.shape != (1, params.n_in):
        raise ag.ShapeError(
            f"rnn_unit: edge {e.shape} / hidden {h.shape} do not match W_e {params.W_e.shape} / W_h {params.W_h.shape}"
        )
    pre = e @ params.W_e.T + h @ params.W_h.T + params.b
    return ag.tanh(pre)


def cell_forward(edges, h, params):
    """One graph-convolutional recurrent cell over the complete graph.

    ``h'_i = Theta h_i + mean_{j != i} f(e_ij, h_i) * f(e_ij, h_j)`` with
    ``f(e, h) = tanh(W_e e + W_h h + b)``.
    """
    edges = ag.constant(edges)
    h = ag.constant(h)
    n = h.shape[0]
    if edges.shape != (n * n, params.W_e.shape[1]):
        raise ag.ShapeError(f"cell_forward: edges {edges.shape} vs expected {(n * n, params.W_e.shape[1])}")
    if h.shape[1] != params.n_in:
        raise ag.ShapeError(f"cell_forward: hidden {h.shape} vs W_h {params.W_h.shape}")
    edge_pre = edges @ params.W_e.T
    node_pre = h @ params.W_h.T + params.b
    return h @ params.Theta.T + ag.pair_message(edge_pre, node_pre)


def block_forward(edges, params, n_timepoints, cycles=0):
    """Hidden states for each timepoint from the final pass.

    Layers are depth-stacked within a timepoint; the last layer's output is the
    next timepoint's prior. Each extra cycle reruns the whole pass seeded with
    the previous pass's final state.
    """
    if cycles < 0:
        raise ValueError("cycles must be >= 0")
    edges = ag.constant(edges)
    n = int(round(np.sqrt(edges.shape[0])))
    prior = ag.constant(np.zeros((n, params.state_dim)))
    states = []
    for _ in range(cycles + 1):
        states = []
        h = prior
        for _t in range(n_timepoints):
            for layer in params.layers:
                h = cell_forward(edges, h, layer)
            states.append(h)
        prior = h
    return states


def cbt_from_hidden(h):
    """Template ``C[i, j] = sum_k |h[i, k] - h[j, k]|``; Value in, Value out."""
    return ag.pairwise_l1(h)


def cbt_from_hidden_reference(h):
    """Literal replicate / transpose / abs-diff / sum construction, numpy only."""
    h = np.asarray(h.data if isinstance(h, ag.Value) else h, dtype=np.float64)
    n = h.shape[0]
    rep = np.repeat(h[:, :, None], n, axis=2)  # R[x, y, z] = h[x, y]
    rep_t = rep.transpose(2, 1, 0)  # R^T[x, y, z] = h[z, y]
    return np.abs(rep - rep_t).sum(axis=1)


def forward_subject(obs, params, n_timepoints, cycles=None):
    """Predicted template Values, one per timepoint, from the baseline observation only."""
    if cycles is None:
        cycles = VARIANTS[params.variant][1]
    edges = edge_features(obs, params)
    states = block_forward(edges, params, n_timepoints, cycles)
    return [cbt_from_hidden(h) for h in states]


def predict_cbts(obs, params, n_timepoints, cycles=None):
    """Numpy version of :func:`forward_subject`."""
    return [c.data.copy() for c in forward_subject(obs, params, n_timepoints, cycles)]


# --- checkpoints ------------------------------------------------------------


def checkpoint_dict(params, config=None):
    return {
        "format": "reminet-checkpoint/1",
        "variant": params.variant,
        "hidden_dims": list(params.hidden_dims),
        "n_views": params.n_views,
        "parameters": {
            name: {"shape": list(arr.shape), "rows": format_matrix(arr).splitlines()}
            for name, arr in params.arrays().items()
        },
        "config": config,
        "extra": params.extra,
    }


def save_checkpoint(path, params, config=None):
    atomic_write_text(path, json.dumps(checkpoint_dict(params, config), indent=1) + "\n")


def load_checkpoint(path):
    """Returns ``(params, config)``."""
    with open(path) as fh:
        doc = json.load(fh)
    arrays = {}
    for name, entry in doc["parameters"].items():
        rows = [[float(x) for x in r.split(",")] for r in entry["rows"]]
        arrays[name] = np.array(rows, dtype=np.float64).reshape(entry["shape"])
    params = ModelParams.from_arrays(doc["variant"], doc["hidden_dims"], doc["n_views"], arrays,
                                     extra=doc.get("extra"))
    return params, doc.get("config")
