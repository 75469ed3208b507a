"""End-to-end experiment orchestration with forward-chaining day folds.

Every fold trains strictly on earlier days: link selection, per-link
Z-score statistics, and the classifier are all fitted on the training days
and only then applied to the held-out test day, so no test information can
leak into selection or calibration.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import stats as statsmod
from .learn import (
    Dataset,
    LinkKey,
    MlpConfig,
    auc,
    concat_fusion,
    rank_links,
    select_top_k,
    train_logistic,
    train_mlp,
)
from .pipeline import FEATURE_NAMES, LinkStats, normalize
from .rng import stream

CLASSIFIERS = ("logistic", "mlp", "random")
POLICIES = ("top_k", "random_k", "all")


@dataclass(frozen=True)
class FoldSpec:
    """Train on days {1..d-1}, test on day d."""

    train_days: tuple[int, ...]
    test_day: int

    def __post_init__(self) -> None:
        if not self.train_days:
            raise ValueError("fold needs at least one training day")
        if tuple(sorted(self.train_days)) != tuple(range(min(self.train_days), self.test_day)):
            raise ValueError("train days must be exactly {min..test_day-1}")
        if max(self.train_days) >= self.test_day:
            raise ValueError("training days must precede the test day")


def forward_chain_folds(day_count: int, min_train_days: int = 2) -> list[FoldSpec]:
    """One fold per test day d in [min_train_days+1, day_count], expanding window."""
    if min_train_days < 1:
        raise ValueError("min_train_days must be >= 1")
    if day_count <= min_train_days:
        raise ValueError("day_count must exceed min_train_days")
    return [
        FoldSpec(train_days=tuple(range(1, d)), test_day=d)
        for d in range(min_train_days + 1, day_count + 1)
    ]


@dataclass(frozen=True)
class StudyConfig:
    """One experimental cell: link policy plus classifier."""

    policy: str = "top_k"
    criterion: str = "snr"
    k: int = 1
    classifier: str = "logistic"
    seed: int = 42
    l2_lambda: float = 0.01
    max_iter: int = 500
    tol: float = 1e-6
    mlp: MlpConfig = field(default_factory=MlpConfig)
    label: str | None = None

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.classifier not in CLASSIFIERS:
            raise ValueError(f"unknown classifier {self.classifier!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @property
    def config_id(self) -> str:
        if self.label:
            return self.label
        if self.policy == "all":
            base = "all"
        elif self.policy == "random_k":
            base = f"random{self.k}"
        else:
            base = f"top{self.k}_{self.criterion}"
        return f"{base}_{self.classifier}"


@dataclass
class FoldResult:
    config_id: str
    fold: FoldSpec
    classifier: str
    auc: float | None
    selected: list[LinkKey]
    n_train: int
    n_test: int
    skipped: bool = False
    skip_reason: str = ""
    scores: np.ndarray | None = None
    test_labels: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "config_id": self.config_id,
            "test_day": self.fold.test_day,
            "train_days": list(self.fold.train_days),
            "classifier": self.classifier,
            "auc": self.auc,
            "selected_links": [list(l) for l in self.selected],
            "n_train": self.n_train,
            "n_test": self.n_test,
            "skipped": self.skipped,
            "skip_reason": self.skip_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldResult":
        return cls(
            config_id=d["config_id"],
            fold=FoldSpec(train_days=tuple(d["train_days"]), test_day=d["test_day"]),
            classifier=d["classifier"],
            auc=d["auc"],
            selected=[tuple(l) for l in d["selected_links"]],
            n_train=d["n_train"],
            n_test=d["n_test"],
            skipped=d["skipped"],
            skip_reason=d.get("skip_reason", ""),
        )


def _derived_seed(seed: int, *labels: int | str) -> int:
    return int(stream(seed, *labels).integers(1 << 31))


def _select_links(dataset: Dataset, train_mask: np.ndarray, config: StudyConfig, fold: FoldSpec) -> list[LinkKey]:
    if config.policy == "all":
        return list(dataset.links)
    train_subset = Dataset(
        features=dataset.features[train_mask],
        labels=dataset.labels[train_mask],
        days=dataset.days[train_mask],
        links=dataset.links,
    )
    if config.policy == "random_k":
        ranking = rank_links(
            train_subset, "random", seed=_derived_seed(config.seed, "random-k", fold.test_day)
        )
    else:
        ranking = rank_links(train_subset, config.criterion, seed=config.seed)
    return select_top_k(ranking, config.k)


def _normalized_concat(
    dataset: Dataset,
    links: Sequence[LinkKey],
    train_mask: np.ndarray,
    test_mask: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Concat selected links, Z-scored per link with train-only statistics."""
    cols_train = []
    cols_test = []
    for link in links:
        li = dataset.link_index(link)
        raw_train = dataset.features[train_mask, li, :]
        raw_test = dataset.features[test_mask, li, :]
        link_stats = LinkStats.fit(raw_train)
        cols_train.append(normalize(raw_train, link_stats))
        cols_test.append(normalize(raw_test, link_stats))
    return np.hstack(cols_train), np.hstack(cols_test)


def run_configuration(
    dataset: Dataset,
    folds: Sequence[FoldSpec],
    config: StudyConfig,
    keep_scores: bool = False,
) -> list[FoldResult]:
    """Train and score one configuration on every fold.

    Folds whose test day contains a single class are skipped and flagged
    (AUC is undefined there); everything else is deterministic in the seeds.
    """
    results: list[FoldResult] = []
    for fold in folds:
        train_mask = dataset.day_mask(fold.train_days)
        test_mask = dataset.days == fold.test_day
        y_train = dataset.labels[train_mask]
        y_test = dataset.labels[test_mask]
        base = FoldResult(
            config_id=config.config_id,
            fold=fold,
            classifier=config.classifier,
            auc=None,
            selected=[],
            n_train=int(train_mask.sum()),
            n_test=int(test_mask.sum()),
        )
        if test_mask.sum() == 0 or len(np.unique(y_test)) < 2:
            base.skipped = True
            base.skip_reason = "single-class test day"
            results.append(base)
            continue
        if train_mask.sum() == 0 or len(np.unique(y_train)) < 2:
            base.skipped = True
            base.skip_reason = "single-class training window"
            results.append(base)
            continue

        links = _select_links(dataset, train_mask, config, fold)
        base.selected = links
        x_train, x_test = _normalized_concat(dataset, links, train_mask, test_mask)

        if config.classifier == "logistic":
            model = train_logistic(
                x_train,
                y_train,
                l2_lambda=config.l2_lambda,
                seed=config.seed,
                max_iter=config.max_iter,
                tol=config.tol,
            )
            scores = model.predict_proba(x_test)
        elif config.classifier == "mlp":
            model = train_mlp(
                x_train,
                y_train,
                config=config.mlp,
                seed=_derived_seed(config.seed, "mlp", fold.test_day),
                day_index=dataset.days[train_mask],
            )
            scores = model.scores(x_test)
        else:  # random baseline
            scores = stream(config.seed, "random-scores", fold.test_day).random(len(y_test))

        base.auc = auc(scores, y_test)
        if keep_scores:
            base.scores = scores
            base.test_labels = y_test.copy()
        results.append(base)
    return results


def summarize_aucs(results: Sequence[FoldResult]) -> tuple[float, float, int]:
    """(mean, sample std, n) over non-skipped folds."""
    vals = np.array([r.auc for r in results if not r.skipped and r.auc is not None])
    if vals.size == 0:
        return float("nan"), float("nan"), 0
    std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return float(vals.mean()), std, int(vals.size)


@dataclass
class SweepRow:
    link_count: int
    mean_auc: float
    std_auc: float
    fold_count: int


@dataclass
class SweepResult:
    rows: list[SweepRow]
    fold_results: dict[int, list[FoldResult]]

    def all_results(self) -> list[FoldResult]:
        out: list[FoldResult] = []
        for count in sorted(self.fold_results):
            out.extend(self.fold_results[count])
        return out


def link_count_sweep(
    dataset: Dataset,
    folds: Sequence[FoldSpec],
    counts: Sequence[int],
    config: StudyConfig,
    keep_scores: bool = False,
) -> SweepResult:
    """Top-k selection swept over link counts with a fixed classifier."""
    counts = sorted(set(int(c) for c in counts))
    if counts[0] < 1 or counts[-1] > dataset.n_links:
        raise ValueError(f"counts must lie in [1, {dataset.n_links}]")
    rows: list[SweepRow] = []
    per_count: dict[int, list[FoldResult]] = {}
    for count in counts:
        cell = replace(config, policy="top_k", k=count, label=None)
        res = run_configuration(dataset, folds, cell, keep_scores=keep_scores)
        per_count[count] = res
        mean, std, n = summarize_aucs(res)
        rows.append(SweepRow(link_count=count, mean_auc=mean, std_auc=std, fold_count=n))
    return SweepResult(rows=rows, fold_results=per_count)


@dataclass
class LinkQualityMatrix:
    """Per-directed-link detection AUC; asymmetric by construction."""

    node_ids: list[int]
    matrix: np.ndarray  # (N, N), NaN on the diagonal and for missing links
    records: list[tuple[int, int, int, float]]  # (tx, rx, test_day, auc)


def per_link_quality(
    dataset: Dataset, folds: Sequence[FoldSpec], config: StudyConfig
) -> LinkQualityMatrix:
    """Single-link configuration AUC for every link, plus link-day records."""
    node_ids = sorted({n for link in dataset.links for n in link})
    index = {nid: i for i, nid in enumerate(node_ids)}
    matrix = np.full((len(node_ids), len(node_ids)), np.nan)
    records: list[tuple[int, int, int, float]] = []
    for link in dataset.links:
        single = Dataset(
            features=dataset.features[:, [dataset.link_index(link)], :],
            labels=dataset.labels,
            days=dataset.days,
            links=[link],
        )
        cell = replace(config, policy="all", label=f"link_{link[0]}_{link[1]}")
        res = run_configuration(single, folds, cell)
        vals = []
        for r in res:
            if r.skipped or r.auc is None:
                continue
            records.append((link[0], link[1], r.fold.test_day, r.auc))
            vals.append(r.auc)
        if vals:
            matrix[index[link[0]], index[link[1]]] = float(np.mean(vals))
    return LinkQualityMatrix(node_ids=node_ids, matrix=matrix, records=records)


@dataclass
class StatsSummary:
    """Paired comparison of two configurations across common folds."""

    config_a: str
    config_b: str
    n_folds: int
    mean_a: float
    std_a: float
    mean_b: float
    std_b: float
    mean_diff: float
    t_stat: float
    t_p: float
    wilcoxon_w: float
    wilcoxon_p: float
    cohens_d: float
    ci_lo: float
    ci_hi: float
    wins_a: int
    wins_b: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compare_configurations(
    results_a: Sequence[FoldResult],
    results_b: Sequence[FoldResult],
    bootstrap_iterations: int = 10_000,
    seed: int = 42,
) -> StatsSummary:
    """Fold-paired statistics for two result lists over their common folds."""
    by_day_a = {r.fold.test_day: r for r in results_a if not r.skipped and r.auc is not None}
    by_day_b = {r.fold.test_day: r for r in results_b if not r.skipped and r.auc is not None}
    days = sorted(set(by_day_a) & set(by_day_b))
    if len(days) < 2:
        raise ValueError("need at least 2 common folds to compare")
    a = np.array([by_day_a[d].auc for d in days])
    b = np.array([by_day_b[d].auc for d in days])
    t, t_p = statsmod.paired_t_test(a, b)
    try:
        w, w_p = statsmod.wilcoxon_signed_rank(a, b)
    except ValueError:
        w, w_p = float("nan"), 1.0
    try:
        d = statsmod.cohens_d(a, b)
    except ValueError:
        d = float("nan")
    lo, hi = statsmod.bootstrap_ci(a - b, iterations=bootstrap_iterations, seed=seed)
    return StatsSummary(
        config_a=results_a[0].config_id,
        config_b=results_b[0].config_id,
        n_folds=len(days),
        mean_a=float(a.mean()),
        std_a=float(a.std(ddof=1)),
        mean_b=float(b.mean()),
        std_b=float(b.std(ddof=1)),
        mean_diff=float((a - b).mean()),
        t_stat=t,
        t_p=t_p,
        wilcoxon_w=w,
        wilcoxon_p=w_p,
        cohens_d=d,
        ci_lo=lo,
        ci_hi=hi,
        wins_a=int(np.sum(a > b)),
        wins_b=int(np.sum(b > a)),
    )


def permuted_label_aucs(results: Sequence[FoldResult], seed: int) -> list[float]:
    """AUC of each fold's stored scores against permuted test labels.

    Training never touches test labels, so this is the leakage guard: every
    configuration must collapse to chance once the labels are shuffled.
    """
    out: list[float] = []
    for r in results:
        if r.skipped or r.scores is None or r.test_labels is None:
            continue
        perm = stream(seed, "permute", r.config_id, r.fold.test_day).permutation(
            len(r.test_labels)
        )
        out.append(auc(r.scores, r.test_labels[perm]))
    return out


# --- Feature table I/O ---------------------------------------------------------------


FEATURE_TABLE_COLUMNS = (
    "link_tx",
    "link_rx",
    "day",
    "window_index",
    "window_start_us",
    "window_end_us",
    *FEATURE_NAMES,
    "label",
    "flags",
)


def load_dataset(features_csv: str | Path) -> Dataset:
    """Pivot a joined feature table into the (samples, links, features) tensor.

    Samples are keyed by (day, window_index); a sample is kept only when every
    link contributed a window, and labels must agree across links.
    """
    links: set[LinkKey] = set()
    rows: dict[tuple[int, int], dict[LinkKey, np.ndarray]] = {}
    labels: dict[tuple[int, int], int] = {}
    n_feat = len(FEATURE_NAMES)
    with open(features_csv, newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader)
        if tuple(header[: len(FEATURE_TABLE_COLUMNS) - 2]) != FEATURE_TABLE_COLUMNS[:-2]:
            raise ValueError("unexpected feature table header")
        if "label" not in header:
            raise ValueError("feature table must be label-joined for studies")
        label_col = header.index("label")
        for row in reader:
            tx, rx = int(row[0]), int(row[1])
            day, widx = int(row[2]), int(row[3])
            feats = np.array([float(v) for v in row[6 : 6 + n_feat]])
            label = row[label_col]
            if label == "":
                continue
            key = (day, widx)
            links.add((tx, rx))
            rows.setdefault(key, {})[(tx, rx)] = feats
            lab = int(label)
            if labels.setdefault(key, lab) != lab:
                raise ValueError(f"inconsistent labels for sample {key}")
    link_list = sorted(links)
    keys = sorted(k for k, m in rows.items() if len(m) == len(link_list))
    if not keys:
        raise ValueError("no complete samples in feature table")
    feats = np.empty((len(keys), len(link_list), n_feat))
    for i, key in enumerate(keys):
        m = rows[key]
        for j, link in enumerate(link_list):
            feats[i, j, :] = m[link]
    return Dataset(
        features=feats,
        labels=np.array([labels[k] for k in keys], dtype=np.int64),
        days=np.array([k[0] for k in keys], dtype=np.int64),
        links=link_list,
    )


def save_results(results: Sequence[FoldResult], path: str | Path, meta: dict | None = None) -> None:
    doc = {
        "meta": meta or {},
        "fold_results": [r.to_dict() for r in results],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_results(path: str | Path) -> tuple[list[FoldResult], dict]:
    doc = json.loads(Path(path).read_text())
    return [FoldResult.from_dict(d) for d in doc["fold_results"]], doc.get("meta", {})
