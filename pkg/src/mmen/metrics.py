"""Evaluation diagnostics: accuracy, target entropy, cluster-centre distance, feature dumps.

Everything here reads models and data without modifying them. Functions
that need true target labels take them from
:meth:`DomainPair.diagnostic_target_labels`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Tensor
from .data import DomainPair
from .nets import ModelBundle, forward, predict_labels
from .objectives import classification_loss, entropy_value, one_hot

__all__ = [
    "accuracy",
    "CcdReport",
    "ccd",
    "bundle_ccd",
    "EvalRecord",
    "entropy_eval",
    "evaluate",
    "dump_features",
    "write_ccd_csv",
]


def accuracy(predictions, truth) -> float:
    pred = np.asarray(predictions)
    true = np.asarray(truth)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.count_nonzero(pred == true)) / pred.size


@dataclass(frozen=True)
class CcdReport:
    per_class_distance: np.ndarray
    absent: np.ndarray
    normalizer: Optional[np.ndarray] = None
    epoch: int = 0

    @property
    def normalized(self) -> np.ndarray:
        """Distances divided by the reference; NaN where undefined."""
        if self.normalizer is None:
            return np.full_like(self.per_class_distance, np.nan)
        out = np.full_like(self.per_class_distance, np.nan)
        ok = ~self.absent & (self.normalizer > 0)
        out[ok] = self.per_class_distance[ok] / self.normalizer[ok]
        return out

    @property
    def mean_distance(self) -> float:
        return float(self.per_class_distance[~self.absent].mean())

    @property
    def mean_normalized(self) -> float:
        vals = self.normalized
        vals = vals[~np.isnan(vals)]
        return float(vals.mean()) if vals.size else float("nan")


def ccd(
    features_s: np.ndarray,
    labels_s,
    features_t: np.ndarray,
    labels_t,
    reference: Optional[CcdReport] = None,
    n_classes: Optional[int] = None,
    epoch: int = 0,
) -> CcdReport:
    """Per-class Euclidean distance between source and target feature means.

    A class with no samples in either domain is marked absent. When a
    reference report is given its distances become the normaliser.
    """
    fs = np.asarray(features_s, dtype=np.float64)
    ft = np.asarray(features_t, dtype=np.float64)
    ys = np.asarray(labels_s, dtype=np.int64)
    yt = np.asarray(labels_t, dtype=np.int64)
    if fs.ndim != 2 or ft.ndim != 2 or fs.shape[1] != ft.shape[1]:
        raise ValueError(f"feature shapes {fs.shape} and {ft.shape} are incompatible")
    if ys.shape != (fs.shape[0],) or yt.shape != (ft.shape[0],):
        raise ValueError("one label per feature row is required")
    if n_classes is None:
        n_classes = int(max(ys.max(initial=-1), yt.max(initial=-1))) + 1
    dist = np.full(n_classes, np.nan)
    absent = np.ones(n_classes, dtype=bool)
    for k in range(n_classes):
        ms, mt = ys == k, yt == k
        if ms.any() and mt.any():
            dist[k] = np.linalg.norm(fs[ms].mean(axis=0) - ft[mt].mean(axis=0))
            absent[k] = False
    if absent.all():
        raise ValueError("no class is present in both domains")
    normalizer = None
    if reference is not None:
        if reference.per_class_distance.shape != dist.shape:
            raise ValueError("reference report has a different class count")
        normalizer = reference.per_class_distance.copy()
    return CcdReport(dist, absent, normalizer, epoch)


def bundle_ccd(
    bundle: ModelBundle,
    pair: DomainPair,
    reference: Optional[CcdReport] = None,
    use_pseudo_labels: bool = False,
    max_samples: Optional[int] = None,
    epoch: int = 0,
) -> CcdReport:
    """CCD on generator features; the first ``max_samples`` rows of each domain are used.

    With ``use_pseudo_labels`` the target side is grouped by the model's own
    predictions instead of the held-out labels.
    """
    xs, ys = pair.source.features, pair.source.labels
    xt = pair.target.features
    if use_pseudo_labels:
        yt = predict_labels(bundle, xt, bundle.default_head())
    else:
        yt = pair.diagnostic_target_labels()
        if yt is None:
            raise ValueError("true target labels are unavailable for this pair")
    if max_samples is not None:
        xs, ys, xt, yt = xs[:max_samples], ys[:max_samples], xt[:max_samples], yt[:max_samples]
    return ccd(bundle.features(xs), ys, bundle.features(xt), yt, reference, pair.class_count, epoch)


@dataclass(frozen=True)
class EvalRecord:
    accuracy_classifier: float
    accuracy_discriminator: float
    h_target: float
    xent_true_target: float
    l_c_source: float = float("nan")


def _pseudo_head(bundle: ModelBundle):
    # DANN bundles carry no category discriminator; fall back to C.
    return bundle.d if bundle.d is not None else bundle.c


def entropy_eval(bundle: ModelBundle, x_target, labels_true=None) -> tuple:
    """Target entropy of the discriminator's predictions and, if labels are
    given, their cross-entropy against the true target labels."""
    feats = forward(bundle.g, x_target)
    logits = forward(_pseudo_head(bundle), feats).values
    h = entropy_value(logits)
    if labels_true is None:
        return h, float("nan")
    y = Tensor(one_hot(labels_true, logits.shape[1]))
    xent = classification_loss(None, Tensor(logits), y).item()
    return h, xent


def evaluate(bundle: ModelBundle, pair: DomainPair) -> EvalRecord:
    truth = pair.diagnostic_target_labels()
    xt = pair.target.features
    acc_c = acc_d = float("nan")
    if truth is not None:
        if bundle.c is not None:
            acc_c = accuracy(predict_labels(bundle, xt, "classifier"), truth)
        if bundle.d is not None:
            acc_d = accuracy(predict_labels(bundle, xt, "discriminator"), truth)
    h, xent = entropy_eval(bundle, xt, truth)
    fs = forward(bundle.g, pair.source.features)
    y = Tensor(one_hot(pair.source.labels, pair.class_count))
    c_logits = forward(bundle.c, fs) if bundle.c is not None else None
    d_logits = forward(bundle.d, fs) if bundle.d is not None else None
    l_c = classification_loss(c_logits, d_logits, y).item()
    return EvalRecord(acc_c, acc_d, h, xent, l_c)


def dump_features(bundle: ModelBundle, pair: DomainPair, path) -> None:
    """Write ``domain,label,f0..`` rows for every sample, source rows first."""
    held = pair.diagnostic_target_labels()
    fs = bundle.features(pair.source.features)
    ft = bundle.features(pair.target.features)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", "label"] + [f"f{i}" for i in range(fs.shape[1])])
        for feats, labels, tag in ((fs, pair.source.labels, "source"), (ft, held, "target")):
            for i in range(feats.shape[0]):
                lab = int(labels[i]) if labels is not None else -1
                w.writerow([tag, lab] + [repr(float(v)) for v in feats[i]])


def write_ccd_csv(report: CcdReport, path) -> None:
    norm = report.normalized
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "distance", "normalized", "absent"])
        for k in range(report.per_class_distance.size):
            w.writerow([k, f"{report.per_class_distance[k]:.6f}", f"{norm[k]:.6f}", int(report.absent[k])])
