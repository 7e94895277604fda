"""Feature construction and the regularized discriminant classifier.

The discriminant score of class ``c`` is

    delta_c(z) = (z - m_c)' S_c(rho)^-1 (z - m_c) + log|S_c(rho)|,
    S_c(rho)   = (1 - rho) S_c + rho S,

with ``S`` the pooled within-class covariance; ``rho = 1`` gives LDA and
``rho = 0`` QDA. The predicted class minimizes ``delta_c``.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import SCHEMA_VERSION, ChangePointFit, TimeSeries, index_of

log = logging.getLogger(__name__)

ORIGINAL_FEATURES = ("level_at_mark", "max_level", "end_level")
RIDGE_SCALE = 1e-8


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    names: tuple[str, ...]
    group: str | None = None
    label: str | None = None  # class label

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        names = tuple(self.names)
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        if values.size != len(names):
            raise ValueError("one name per feature value")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)

    def select(self, names: Sequence[str]) -> "FeatureVector":
        idx = [self.names.index(n) for n in names]
        return FeatureVector(self.values[idx], tuple(names), self.group, self.label)

    def concat(self, other: "FeatureVector") -> "FeatureVector":
        return FeatureVector(np.concatenate([self.values, other.values]),
                             self.names + other.names, self.group, self.label)


def moving_average(x, window: int = 5) -> np.ndarray:
    """Centered moving average; near the ends the window is cut to the available samples."""
    x = np.asarray(x, dtype=float)
    h = window // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    i = np.arange(x.size)
    lo = np.maximum(i - h, 0)
    hi = np.minimum(i + h + 1, x.size)
    return (c[hi] - c[lo]) / (hi - lo)


def original_features(ts: TimeSeries, time_mark_hours: float, group=None, label=None,
                      window: int = 5) -> FeatureVector:
    """Smoothed level at a time mark, maximum smoothed level, and smoothed final level."""
    if ts.T < window:
        raise ValueError(f"need at least {window} observations")
    if not ts.start_time <= time_mark_hours <= ts.end_time:
        raise ValueError(f"time mark {time_mark_hours} h outside the series span")
    sm = moving_average(ts.values, window)
    k = index_of(ts, time_mark_hours)
    return FeatureVector([sm[k], sm.max(), sm[-1]], ORIGINAL_FEATURES, group, label)


def t2cd_features(fit: ChangePointFit, base: FeatureVector | None = None,
                  group=None, label=None) -> FeatureVector:
    """Change point (hours) and long-memory estimate, appended to ``base`` if given."""
    tau = fit.tau_hat
    if fit.alpha1 is not None and fit.alpha0 is not None:
        tau = -fit.alpha0 / fit.alpha1
    fv = FeatureVector([tau, fit.equilibrium.d], ("tau_hat_hours", "d_hat"),
                       group if base is None else base.group,
                       label if base is None else base.label)
    return fv if base is None else base.concat(fv)


@dataclass(frozen=True, eq=False)
class RdaModel:
    classes: tuple
    means: np.ndarray  # (K, p), standardized scale
    covs: np.ndarray  # (K, p, p) per-class covariances
    pooled: np.ndarray  # (p, p)
    rho: float
    center: np.ndarray
    scale: np.ndarray
    names: tuple[str, ...] = ()
    ridge: float = RIDGE_SCALE

    def blended(self) -> np.ndarray:
        """``S_c(rho)`` for every class, with the ridge added."""
        p = self.pooled.shape[0]
        eps = self.ridge * np.trace(self.pooled) / p
        if not eps > 0:
            eps = self.ridge
        return (1 - self.rho) * self.covs + self.rho * self.pooled + eps * np.eye(p)

    def transform(self, Z) -> np.ndarray:
        return (np.atleast_2d(np.asarray(Z, dtype=float)) - self.center) / self.scale


def _as_matrix(data: Sequence[FeatureVector]):
    Z = np.array([fv.values for fv in data], dtype=float)
    labels = [fv.label for fv in data]
    return Z, labels


def rda_fit_arrays(Z, labels, rho: float, standardize: bool = True,
                   names: tuple[str, ...] = (), ridge: float = RIDGE_SCALE) -> RdaModel:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if not 0 <= rho <= 1:
        raise ValueError("rho must lie in [0, 1]")
    classes = tuple(dict.fromkeys(labels))  # first-seen order
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    labels = np.asarray(labels, dtype=object)
    if standardize:
        center = Z.mean(axis=0)
        scale = Z.std(axis=0, ddof=1)
        scale = np.where(scale > 0, scale, 1.0)
    else:
        center, scale = np.zeros(Z.shape[1]), np.ones(Z.shape[1])
    Zs = (Z - center) / scale
    p = Z.shape[1]
    means, covs = [], []
    scatter = np.zeros((p, p))
    for c in classes:
        Zc = Zs[labels == c]
        if Zc.shape[0] < 2:
            raise ValueError(f"class {c!r} needs at least two samples")
        m = Zc.mean(axis=0)
        R = Zc - m
        means.append(m)
        covs.append(R.T @ R / (Zc.shape[0] - 1))
        scatter += R.T @ R
    pooled = scatter / (Z.shape[0] - len(classes))
    return RdaModel(classes, np.array(means), np.array(covs), pooled, float(rho),
                    center, scale, tuple(names), ridge)


def rda_fit(train: Sequence[FeatureVector], rho: float, standardize: bool = True) -> RdaModel:
    """Class means, per-class and pooled covariances of standardized features."""
    Z, labels = _as_matrix(train)
    return rda_fit_arrays(Z, labels, rho, standardize, train[0].names)


def rda_scores(model: RdaModel, Z) -> np.ndarray:
    """``delta_c(z)`` for each row of ``Z`` (rows) and class (columns)."""
    Zs = model.transform(Z)
    S = model.blended()
    out = np.empty((Zs.shape[0], len(model.classes)))
    for k, (m, Sk) in enumerate(zip(model.means, S)):
        L = np.linalg.cholesky(Sk)
        R = np.linalg.solve(L, (Zs - m).T)
        out[:, k] = np.sum(R ** 2, axis=0) + 2.0 * np.sum(np.log(np.diag(L)))
    return out


def rda_predict(model: RdaModel, Z):
    scores = rda_scores(model, Z)
    # argmin picks the first class on exact ties
    return [model.classes[k] for k in np.argmin(scores, axis=1)], scores


def rda_classify(model: RdaModel, z: FeatureVector | Sequence[float]):
    """Predicted class and the per-class scores for one feature vector."""
    values = z.values if isinstance(z, FeatureVector) else np.asarray(z, dtype=float)
    if values.size != model.means.shape[1]:
        raise ValueError("feature dimension does not match the model")
    labels, scores = rda_predict(model, values[None, :])
    return labels[0], dict(zip(model.classes, scores[0]))


@dataclass(frozen=True)
class GroupReport:
    rho: float
    groups: tuple
    accuracies: tuple[float, ...]
    n_test: tuple[int, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def sd(self) -> float:
        return float(np.std(self.accuracies, ddof=1)) if len(self.accuracies) > 1 else 0.0

    def to_dict(self) -> dict:
        return {"rho": self.rho, "classifier": classifier_name(self.rho),
                "mean": self.mean, "sd": self.sd,
                "folds": [{"group": g, "accuracy": a, "n_test": n}
                          for g, a, n in zip(self.groups, self.accuracies, self.n_test)]}


def classifier_name(rho: float) -> str:
    return {1.0: "LDA", 0.0: "QDA"}.get(float(rho), f"RDA(rho={rho:g})")


def leave_one_group_out(data: Sequence[FeatureVector], rho: float,
                        standardize: bool = True) -> GroupReport:
    """Train on all groups but one, score on the held-out group, for every group."""
    groups = tuple(dict.fromkeys(fv.group for fv in data))
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    accs, ns = [], []
    for g in groups:
        train = [fv for fv in data if fv.group != g]
        test = [fv for fv in data if fv.group == g]
        model = rda_fit(train, rho, standardize)
        known = [fv for fv in test if fv.label in model.classes]
        if len(known) < len(test):
            warnings.warn(f"group {g!r}: skipping {len(test) - len(known)} samples of classes "
                          "absent from training", stacklevel=2)
        if not known:
            accs.append(float("nan"))
            ns.append(0)
            continue
        pred, _ = rda_predict(model, np.array([fv.values for fv in known]))
        accs.append(float(np.mean([p == fv.label for p, fv in zip(pred, known)])))
        ns.append(len(known))
    return GroupReport(float(rho), groups, tuple(accs), tuple(ns))


def training_accuracy(data: Sequence[FeatureVector], rho: float) -> float:
    model = rda_fit(data, rho)
    pred, _ = rda_predict(model, np.array([fv.values for fv in data]))
    return float(np.mean([p == fv.label for p, fv in zip(pred, data)]))


def best_single_feature(data: Sequence[FeatureVector], rho: float,
                        candidates: Sequence[str] = ORIGINAL_FEATURES) -> str:
    """Candidate feature with the highest training accuracy on its own (first wins ties)."""
    best, best_acc = None, -1.0
    for name in candidates:
        acc = training_accuracy([fv.select([name]) for fv in data], rho)
        if acc > best_acc:
            best, best_acc = name, acc
    return best


# -- feature tables --------------------------------------------------------

def read_feature_csv(path: str | Path) -> list[FeatureVector]:
    """Rows with ``group`` and ``class`` columns plus numeric feature columns."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if "group" not in fields or "class" not in fields:
            raise ValueError(f"{path}: feature table needs 'group' and 'class' columns")
        names = tuple(f for f in fields if f not in ("group", "class", "schema_version"))
        out = []
        for row in reader:
            if not row["class"] or not row["group"]:
                raise ValueError(f"{path}: empty group or class label")
            out.append(FeatureVector([float(row[n]) for n in names], names,
                                     row["group"], row["class"]))
    return out


def write_feature_csv(data: Sequence[FeatureVector], path: str | Path) -> None:
    names = data[0].names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "class", *names])
        for fv in data:
            w.writerow([fv.group, fv.label, *(repr(float(v)) for v in fv.values)])


def accuracy_report(data: Sequence[FeatureVector], rhos=(1.0, 0.0),
                    feature_sets: dict | None = None) -> dict:
    """Mean/sd of leave-one-group-out accuracy per feature set and classifier."""
    feature_sets = feature_sets or {"all": list(data[0].names)}
    rows = []
    for set_name, names in feature_sets.items():
        sub = [fv.select(names) for fv in data]
        for rho in rhos:
            rep = leave_one_group_out(sub, rho)
            rows.append({"features": set_name, "feature_names": list(names), **rep.to_dict()})
    return {"schema_version": SCHEMA_VERSION, "rows": rows}
