"""Population templates, test metrics and cross-validation orchestration."""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np
from scipy import stats

from ._io import fmt
from .dataset import ConfigurationError, kfold_split, node_strengths
from .losses import frobenius_distance
from .model import predict_cbts

STRENGTH_REFERENCE_NOTE = (
    "node-strength reference: row sums of the element-wise median over subjects "
    "of each subject's view-averaged matrix at that timepoint"
)


@dataclass
class PopulationCbtTrajectory:
    cbts: list

    def __len__(self):
        return len(self.cbts)

    def __getitem__(self, t):
        return self.cbts[t]


def population_cbt(subject_cbts):
    """Element-wise median over subjects at every timepoint (even counts: mean of the middle two)."""
    subject_cbts = list(subject_cbts)
    if not subject_cbts:
        raise ValueError("population_cbt needs at least one subject")
    n_t = len(subject_cbts[0])
    shape = np.shape(subject_cbts[0][0])
    for traj in subject_cbts:
        if len(traj) != n_t or any(np.shape(c) != shape for c in traj):
            raise ValueError("inconsistent template dimensions across subjects")
    stacked = np.asarray(subject_cbts, dtype=np.float64)  # (n_s, n_t, n, n)
    return PopulationCbtTrajectory([np.median(stacked[:, t], axis=0) for t in range(n_t)])


def _check_dims(pop, dataset):
    n_r, _, n_t = dataset.dims
    if len(pop) > n_t or pop[0].shape != (n_r, n_r):
        raise ValueError(
            f"template trajectory ({len(pop)} x {pop[0].shape}) does not match dataset dims {dataset.dims}"
        )


def centeredness_score(pop, test):
    """Per timepoint: mean over test subjects and views of ``d_F(P^t, view)`` (unweighted)."""
    _check_dims(pop, test)
    _, n_v, _ = test.dims
    scores = []
    for t, P in enumerate(pop.cbts):
        d = [frobenius_distance(P, s.observations[t].view(v)) for s in test.subjects for v in range(n_v)]
        scores.append(float(np.mean(d)))
    return scores


def reference_strengths(dataset, t):
    avg = np.median([s.observations[t].views.mean(axis=2) for s in dataset.subjects], axis=0)
    return node_strengths(avg)


def node_strength_mae(pop, reference):
    """Per timepoint: mean over ROIs of |strength(P^t) - reference strength|."""
    _check_dims(pop, reference)
    return [float(np.mean(np.abs(node_strengths(P) - reference_strengths(reference, t))))
            for t, P in enumerate(pop.cbts)]


@dataclass
class DiscriminabilityRanking:
    scores: np.ndarray
    ranking: np.ndarray

    def top(self, k):
        return self.ranking[:k]


def discriminability_ranking(cbt_a, cbt_b):
    """Row sums of ``|A - B|``, ranked descending with ties broken by lower ROI index."""
    a = np.asarray(cbt_a, dtype=np.float64)
    b = np.asarray(cbt_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"discriminability_ranking: shapes {a.shape} and {b.shape} differ")
    scores = np.abs(a - b).sum(axis=1)
    ranking = np.argsort(-scores, kind="stable")
    return DiscriminabilityRanking(scores, ranking)


def topk_overlap(ranking_a, ranking_b, k):
    ra = getattr(ranking_a, "ranking", ranking_a)
    rb = getattr(ranking_b, "ranking", ranking_b)
    if not 1 <= k <= min(len(ra), len(rb)):
        raise ValueError(f"k must be in [1, {min(len(ra), len(rb))}], got {k}")
    return len(set(np.asarray(ra[:k]).tolist()) & set(np.asarray(rb[:k]).tolist())) / k


def paired_ttest(x, y):
    """Two-tailed paired t-test on fold-level values; returns ``(t, p)``.

    ``t = mean(d) / (sd(d) / sqrt(n))`` with ``n - 1`` degrees of freedom. Zero
    variance gives ``t = 0, p = 1`` for identical samples, ``+-inf, p = 0`` otherwise.
    """
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    n = d.size
    if n < 2:
        return math.nan, math.nan
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), df=n - 1)
    return float(t), float(p)


def population_from_model(params, dataset, n_timepoints=None, cycles=None):
    n_t = n_timepoints or dataset.dims[2]
    return population_cbt([predict_cbts(s.baseline, params, n_t, cycles) for s in dataset.subjects])


def heldout_score(params, train_set, eval_set, config):
    """Mean over timepoints of the test centeredness of the training-population template."""
    pop = population_from_model(params, train_set, cycles=config.cycles)
    return float(np.mean(centeredness_score(pop, eval_set)))


# --- reports -------------------------------------------------------------------


@dataclass
class FoldResult:
    variant: str
    fold: int
    strategy: str
    centeredness: list
    mae: list
    population: list = field(default_factory=list, repr=False)
    epoch: int = None


@dataclass
class MetricsReport:
    rows: list
    n_timepoints: int
    pvalues: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict, repr=False)

    def variants(self):
        return list(dict.fromkeys(r.variant for r in self.rows))

    def select(self, variant=None, strategy=None):
        return [r for r in self.rows
                if (variant is None or r.variant == variant) and (strategy is None or r.strategy == strategy)]

    def mean_centeredness(self, variant, strategy="last"):
        return float(np.mean([np.mean(r.centeredness) for r in self.select(variant, strategy)]))

    def aggregate(self):
        out = []
        for variant in self.variants():
            for strategy in ("last", "best"):
                rows = self.select(variant, strategy)
                if not rows:
                    continue
                c = np.array([r.centeredness for r in rows])
                m = np.array([r.mae for r in rows])
                out.append({
                    "variant": variant,
                    "strategy": strategy,
                    "n_folds": len(rows),
                    "centeredness_mean": c.mean(axis=0).tolist(),
                    "centeredness_std": c.std(axis=0).tolist(),
                    "centeredness_overall": float(c.mean()),
                    "mae_mean": m.mean(axis=0).tolist(),
                    "mae_std": m.std(axis=0).tolist(),
                    "mae_overall": float(m.mean()),
                })
        return out

    def folds_csv(self):
        ts = range(1, self.n_timepoints + 1)
        header = ["variant", "fold", "strategy", "epoch"]
        header += [f"centeredness_t{t}" for t in ts] + ["centeredness_mean"]
        header += [f"mae_t{t}" for t in ts] + ["mae_mean"]
        lines = [",".join(header)]
        for r in self.rows:
            cells = [r.variant, str(r.fold), r.strategy, "" if r.epoch is None else str(r.epoch)]
            cells += [fmt(x) for x in r.centeredness] + [fmt(np.mean(r.centeredness))]
            cells += [fmt(x) for x in r.mae] + [fmt(np.mean(r.mae))]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def summary_csv(self):
        """Side-by-side variant table with plot-ready per-timepoint mean/std columns."""
        ts = range(1, self.n_timepoints + 1)
        header = ["variant", "strategy", "n_folds"]
        for t in ts:
            header += [f"centeredness_t{t}_mean", f"centeredness_t{t}_std"]
        header += ["centeredness_overall"]
        for t in ts:
            header += [f"mae_t{t}_mean", f"mae_t{t}_std"]
        header += ["mae_overall"]
        lines = [",".join(header)]
        for a in self.aggregate():
            cells = [a["variant"], a["strategy"], str(a["n_folds"])]
            for t in range(self.n_timepoints):
                cells += [fmt(a["centeredness_mean"][t]), fmt(a["centeredness_std"][t])]
            cells += [fmt(a["centeredness_overall"])]
            for t in range(self.n_timepoints):
                cells += [fmt(a["mae_mean"][t]), fmt(a["mae_std"][t])]
            cells += [fmt(a["mae_overall"])]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def summary(self):
        return {
            "n_timepoints": self.n_timepoints,
            "note": STRENGTH_REFERENCE_NOTE,
            "aggregate": self.aggregate(),
            "paired_ttests": self.pvalues,
        }

    def summary_json(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def _run_fold(args):
    dataset, config, split = args
    from .training import train

    train_set = dataset.subset(split.train_ids)
    test_set = dataset.subset(split.test_ids)
    last, best, history = train(train_set, config, eval_set=test_set)
    rows = []
    models = {}
    for strategy, params in (("last", last), ("best", best)):
        pop = population_from_model(params, train_set, cycles=config.cycles)
        rows.append(FoldResult(
            config.variant, split.fold_index, strategy,
            centeredness_score(pop, test_set),
            node_strength_mae(pop, test_set),
            population=pop.cbts,
            epoch=params.extra.get("epoch"),
        ))
        models[strategy] = params
    return rows, models, history


def crossval(dataset, config, n_folds=5, split_seed=None, workers=1):
    """K-fold train/evaluate for one variant; the test split doubles as the best-model selection set.

    Folds depend only on ``split_seed`` (default: ``config.seed``) so that
    variants compared under the same seed see identical test subjects.
    """
    splits = kfold_split(dataset, n_folds, seed=config.seed if split_seed is None else split_seed)
    jobs = [(dataset, config, s) for s in splits]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(j) for j in jobs]
    rows = [r for fold_rows, _, _ in results for r in fold_rows]
    artifacts = {
        "splits": splits,
        "models": [m for _, m, _ in results],
        "histories": [h for _, _, h in results],
    }
    return MetricsReport(rows, dataset.dims[2], artifacts=artifacts)


def compare_variants(dataset, base_config, variants, n_folds=5, workers=1):
    """Cross-validate each variant on shared folds; adds paired t-tests on fold-mean centeredness."""
    variants = list(variants)
    if not variants:
        raise ConfigurationError("compare_variants needs at least one variant")
    reports = {}
    for variant in variants:
        cfg = replace(base_config, variant=variant, cycles=None)
        reports[variant] = crossval(dataset, cfg, n_folds, split_seed=base_config.seed, workers=workers)
    first = reports[variants[0]]
    report = MetricsReport(
        [r for v in variants for r in reports[v].rows],
        first.n_timepoints,
        artifacts={"splits": first.artifacts["splits"], "per_variant": {v: reports[v].artifacts for v in variants}},
    )
    for a, b in combinations(variants, 2):
        for strategy in ("last", "best"):
            xa = [np.mean(r.centeredness) for r in report.select(a, strategy)]
            xb = [np.mean(r.centeredness) for r in report.select(b, strategy)]
            t, p = paired_ttest(xa, xb)
            report.pvalues.append({"a": a, "b": b, "strategy": strategy, "t": t, "p": p,
                                   "mean_a": float(np.mean(xa)), "mean_b": float(np.mean(xb))})
    return report
