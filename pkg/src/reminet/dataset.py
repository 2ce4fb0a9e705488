"""Longitudinal multigraph populations: types, I/O, splits and a synthetic generator.

A manifest is a JSON document::

    {
      "n_subjects": 2, "n_rois": 4, "n_views": 2, "n_timepoints": 2,
      "label": "AD",
      "subjects": [
        {"id": "s000", "timepoints": [["s000/t0_v0.csv", "s000/t0_v1.csv"], ...]},
        ...
      ]
    }

View-file paths are relative to the manifest's directory. Each view file holds
``n_rois`` lines of ``n_rois`` comma-separated decimals.
"""

import json
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, format_matrix

SYMMETRY_TOL = 1e-9


class DatasetError(ValueError):
    """Invalid or inconsistent dataset contents."""


class ConfigurationError(ValueError):
    """Invalid request parameters (fold counts, subset sizes, ...)."""


@dataclass(frozen=True)
class MultigraphObservation:
    """One subject's ``(n_rois, n_rois, n_views)`` connectivity tensor at one timepoint."""

    views: np.ndarray

    def __post_init__(self):
        views = np.asarray(self.views, dtype=np.float64)
        if views.ndim != 3 or views.shape[0] != views.shape[1]:
            raise DatasetError(f"views must have shape (n_r, n_r, n_v), got {views.shape}")
        views.setflags(write=False)
        object.__setattr__(self, "views", views)

    @property
    def n_rois(self):
        return self.views.shape[0]

    @property
    def n_views(self):
        return self.views.shape[2]

    def view(self, v):
        return self.views[:, :, v]

    def validate(self):
        check_observation(self.views)


def check_observation(views, context=""):
    """Raise :class:`DatasetError` unless ``views`` is symmetric, zero-diagonal, finite and non-negative."""
    where = f" ({context})" if context else ""
    if not np.all(np.isfinite(views)):
        raise DatasetError(f"non-finite entry{where}")
    if np.any(views < 0):
        raise DatasetError(f"negative entry{where}")
    if np.max(np.abs(views - views.transpose(1, 0, 2)), initial=0.0) > SYMMETRY_TOL:
        raise DatasetError(f"asymmetric view{where}")
    idx = np.arange(views.shape[0])
    if np.any(views[idx, idx, :] != 0):
        raise DatasetError(f"nonzero diagonal{where}")


@dataclass(frozen=True)
class SubjectTrajectory:
    subject_id: str
    observations: tuple

    def __post_init__(self):
        obs = tuple(self.observations)
        if not obs:
            raise DatasetError(f"subject {self.subject_id!r} has no observations")
        shape = obs[0].views.shape
        for t, o in enumerate(obs):
            if o.views.shape != shape:
                raise DatasetError(
                    f"subject {self.subject_id!r} timepoint {t}: shape {o.views.shape} != {shape}"
                )
        object.__setattr__(self, "observations", obs)

    @property
    def baseline(self):
        return self.observations[0]

    @property
    def n_timepoints(self):
        return len(self.observations)


@dataclass(frozen=True)
class LongitudinalDataset:
    subjects: tuple
    label: str = None

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if not subjects:
            raise DatasetError("dataset has no subjects")
        dims = _subject_dims(subjects[0])
        for s in subjects[1:]:
            if _subject_dims(s) != dims:
                raise DatasetError(
                    f"subject {s.subject_id!r} has dims {_subject_dims(s)}, expected {dims}"
                )
        ids = [s.subject_id for s in subjects]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate subject ids")
        object.__setattr__(self, "subjects", subjects)

    @property
    def dims(self):
        """``(n_rois, n_views, n_timepoints)``."""
        return _subject_dims(self.subjects[0])

    @property
    def ids(self):
        return [s.subject_id for s in self.subjects]

    def __len__(self):
        return len(self.subjects)

    def subset(self, ids):
        by_id = {s.subject_id: s for s in self.subjects}
        return LongitudinalDataset(tuple(by_id[i] for i in ids), label=self.label)

    def validate(self):
        for s in self.subjects:
            for t, o in enumerate(s.observations):
                check_observation(o.views, f"subject {s.subject_id}, timepoint {t}")


def _subject_dims(s):
    v = s.baseline.views
    return (v.shape[0], v.shape[2], s.n_timepoints)


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)


def view_means(obs):
    """Mean of all ``n_r**2`` entries of each view, diagonal included."""
    views = obs.views if isinstance(obs, MultigraphObservation) else np.asarray(obs)
    return views.mean(axis=(0, 1))


def node_strengths(matrix):
    """Weighted degree: row sums."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"node_strengths needs a square matrix, got {m.shape}")
    return m.sum(axis=1)


def _random_symmetric(rng, n, draw):
    upper = np.triu(draw(rng, (n, n)), k=1)
    return upper + upper.T


def generate_synthetic(n_subjects, n_rois, n_views, n_timepoints, seed=0, drift_scale=0.05, noise_scale=0.05,
                       label=None):
    """Population mean + linear drift + symmetric Gaussian noise, clamped to >= 0.001 off-diagonal.

    Deterministic given ``seed``. With both scales zero every subject and
    timepoint is identical per view.
    """
    for name, val in (("n_subjects", n_subjects), ("n_rois", n_rois), ("n_views", n_views),
                      ("n_timepoints", n_timepoints)):
        if int(val) < 1:
            raise ConfigurationError(f"{name} must be >= 1, got {val}")
    if drift_scale < 0 or noise_scale < 0:
        raise ConfigurationError("drift_scale and noise_scale must be >= 0")
    rng = np.random.default_rng(seed)
    n = n_rois
    means = [_random_symmetric(rng, n, lambda r, s: r.uniform(0.2, 0.8, s)) for _ in range(n_views)]
    drifts = [_random_symmetric(rng, n, lambda r, s: r.uniform(-1.0, 1.0, s) * drift_scale)
              for _ in range(n_views)]
    off_diag = ~np.eye(n, dtype=bool)
    subjects = []
    for s in range(n_subjects):
        obs = []
        for t in range(n_timepoints):
            views = np.zeros((n, n, n_views))
            for v in range(n_views):
                noise = _random_symmetric(rng, n, lambda r, sh: r.normal(0.0, noise_scale, sh))
                m = means[v] + t * drifts[v] + noise
                views[:, :, v] = np.where(off_diag, np.maximum(m, 0.001), 0.0)
            obs.append(MultigraphObservation(views))
        subjects.append(SubjectTrajectory(f"s{s:03d}", tuple(obs)))
    return LongitudinalDataset(tuple(subjects), label=label)


def kfold_split(dataset, n_folds, seed=0):
    """Shuffle subject ids with ``seed`` and deal them round-robin into folds."""
    ids = dataset.ids if isinstance(dataset, LongitudinalDataset) else list(dataset)
    if n_folds < 2 or n_folds > len(ids):
        raise ConfigurationError(f"n_folds must be in [2, {len(ids)}], got {n_folds}")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    folds = []
    for f in range(n_folds):
        test = shuffled[f::n_folds]
        test_set = set(test)
        train = [i for i in shuffled if i not in test_set]
        folds.append(FoldSplit(f, train, test))
    return folds


# --- file I/O -------------------------------------------------------------


def read_matrix(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    rows = [line for line in text.splitlines() if line.strip()]
    try:
        m = np.array([[float(x) for x in line.split(",")] for line in rows], dtype=np.float64)
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DatasetError(f"{path}: expected a square matrix, got shape {m.shape}")
    return m


def write_matrix(path, matrix):
    atomic_write_text(path, format_matrix(matrix))


def _repair_view(m, subject, t, v):
    where = f"subject {subject}, timepoint {t}, view {v}"
    bad = ~np.isfinite(m)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DatasetError(f"non-finite entry at {where}, cell ({i}, {j})")
    if (m < 0).any():
        i, j = np.argwhere(m < 0)[0]
        raise DatasetError(f"negative entry {m[i, j]} at {where}, cell ({i}, {j})")
    asym = np.max(np.abs(m - m.T))
    if asym > 0:
        if asym > SYMMETRY_TOL:
            warnings.warn(f"asymmetry {asym:.3g} repaired by averaging at {where}", stacklevel=3)
        m = (m + m.T) / 2.0
    diag = np.diag(m)
    if np.any(diag != 0):
        warnings.warn(f"nonzero diagonal zeroed at {where}", stacklevel=3)
        m = m.copy()
        np.fill_diagonal(m, 0.0)
    return m


def load_dataset(manifest_path):
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed manifest {manifest_path}: {exc}") from exc
    root = manifest_path.parent
    try:
        n_r, n_v, n_t = (int(manifest[k]) for k in ("n_rois", "n_views", "n_timepoints"))
        declared_subjects = int(manifest["n_subjects"])
        entries = manifest["subjects"]
    except KeyError as exc:
        raise DatasetError(f"manifest missing key {exc}") from exc
    if len(entries) != declared_subjects:
        raise DatasetError(f"manifest declares {declared_subjects} subjects but lists {len(entries)}")

    subjects = []
    for entry in entries:
        sid = str(entry["id"])
        tps = entry["timepoints"]
        if len(tps) != n_t:
            raise DatasetError(f"subject {sid}: {len(tps)} timepoints, expected {n_t}")
        observations = []
        for t, files in enumerate(tps):
            if len(files) != n_v:
                raise DatasetError(f"subject {sid}, timepoint {t}: {len(files)} views, expected {n_v}")
            views = np.zeros((n_r, n_r, n_v))
            for v, rel in enumerate(files):
                m = read_matrix(root / rel)
                if m.shape != (n_r, n_r):
                    raise DatasetError(
                        f"subject {sid}, timepoint {t}, view {v}: shape {m.shape}, expected {(n_r, n_r)}"
                    )
                views[:, :, v] = _repair_view(m, sid, t, v)
            observations.append(MultigraphObservation(views))
        subjects.append(SubjectTrajectory(sid, tuple(observations)))
    return LongitudinalDataset(tuple(subjects), label=manifest.get("label"))


def save_dataset(dataset, out_dir):
    """Write one CSV per (subject, timepoint, view) plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    n_r, n_v, n_t = dataset.dims
    entries = []
    for s in dataset.subjects:
        tps = []
        for t, obs in enumerate(s.observations):
            files = []
            for v in range(n_v):
                rel = f"{s.subject_id}/t{t}_v{v}.csv"
                write_matrix(out_dir / rel, obs.view(v))
                files.append(rel)
            tps.append(files)
        entries.append({"id": s.subject_id, "timepoints": tps})
    manifest = {
        "n_subjects": len(dataset),
        "n_rois": n_r,
        "n_views": n_v,
        "n_timepoints": n_t,
        "label": dataset.label,
        "subjects": entries,
    }
    path = out_dir / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2) + os.linesep)
    return path
