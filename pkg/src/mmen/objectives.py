"""Source classification loss, pseudo-label entropy and their minimax combinations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .autodiff import ShapeError, Tape, Tensor
from .nets import Network, forward

__all__ = [
    "LossReport",
    "one_hot",
    "classification_loss",
    "pseudo_label_entropy",
    "entropy_value",
    "d_objective",
    "g_objective",
    "dann_domain_loss",
]

Scalar = Union[float, Tensor]


@dataclass(frozen=True)
class LossReport:
    l_c: float
    h_target: float
    combined: float
    lam: float
    domain: float = float("nan")


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _tape(tape):
    return tape if tape is not None else Tape(record=False)


def classification_loss(
    c_logits: Optional[Tensor],
    d_logits: Optional[Tensor],
    y: Tensor,
    tape: Optional[Tape] = None,
) -> Tensor:
    """Cross-entropy against one-hot source labels, averaged over heads and rows.

    With both heads this is ``-(1/(2 n_s)) sum[y.log C + y.log D]``. Pass
    ``None`` for a missing head; the remaining one is averaged with ``1/n_s``.
    """
    tape = _tape(tape)
    y = y if isinstance(y, Tensor) else Tensor(y)
    heads = [h for h in (c_logits, d_logits) if h is not None]
    if not heads:
        raise ValueError("classification_loss needs at least one head")
    n = y.shape[0]
    if n < 1:
        raise ShapeError("empty source batch")
    total = None
    for logits in heads:
        if logits.shape != y.shape:
            raise ShapeError(f"logits {logits.shape} and labels {y.shape} disagree")
        term = tape.sum(tape.mul(y, tape.log_softmax(logits)))
        total = term if total is None else tape.add(total, term)
    return tape.scale(total, -1.0 / (len(heads) * n))


def pseudo_label_entropy(
    d_target_logits: Tensor,
    tape: Optional[Tape] = None,
    detach_targets: bool = False,
) -> Tensor:
    """Mean Shannon entropy of the softmax rows.

    By default the gradient flows through both the pseudo-label and the log
    term. ``detach_targets`` treats the pseudo-labels as constants, giving
    the cross-entropy-to-fixed-targets gradient instead.
    """
    tape = _tape(tape)
    n = d_target_logits.shape[0]
    if n < 1:
        raise ShapeError("empty target batch")
    logp = tape.log_softmax(d_target_logits)
    if detach_targets:
        p = Tensor(np.exp(logp.values))
    else:
        p = tape.exp(logp)
    return tape.scale(tape.sum(tape.mul(p, logp)), -1.0 / n)


def entropy_value(logits: np.ndarray) -> float:
    """Value-only entropy; shares the code path used in training."""
    return pseudo_label_entropy(Tensor(logits)).item()


def _combine(l_c: Scalar, h: Scalar, coeff: float, tape: Optional[Tape]) -> Scalar:
    if isinstance(l_c, Tensor) or isinstance(h, Tensor):
        tape = _tape(tape)
        l_c = l_c if isinstance(l_c, Tensor) else Tensor(l_c)
        h = h if isinstance(h, Tensor) else Tensor(h)
        return tape.add(l_c, tape.scale(h, coeff))
    return float(l_c) + coeff * float(h)


def d_objective(l_c: Scalar, h: Scalar, lam: float, tape: Optional[Tape] = None) -> Scalar:
    """``l_c - lam * h``; descending it classifies source while raising target entropy."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return _combine(l_c, h, -lam, tape)


def g_objective(l_c: Scalar, h: Scalar, lam: float, tape: Optional[Tape] = None) -> Scalar:
    """``l_c + lam * h``; descended by the generator and the auxiliary classifier."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return _combine(l_c, h, lam, tape)


def dann_domain_loss(
    features_s: Tensor,
    features_t: Tensor,
    domain_net: Network,
    tape: Optional[Tape] = None,
    reverse_coeff: Optional[float] = None,
) -> Tensor:
    """Domain cross-entropy (source = 0, target = 1) averaged over both batches.

    With ``reverse_coeff`` set, the features pass through a gradient-reversal
    node so the generator receives ``-reverse_coeff`` times the gradient.
    """
    if domain_net.output_dim != 2:
        raise ValueError("domain network must have output_dim 2")
    tape = _tape(tape)
    if reverse_coeff is not None:
        features_s = tape.grad_reverse(features_s, reverse_coeff)
        features_t = tape.grad_reverse(features_t, reverse_coeff)
    n_s, n_t = features_s.shape[0], features_t.shape[0]
    ls = tape.log_softmax(forward(domain_net, features_s, tape))
    lt = tape.log_softmax(forward(domain_net, features_t, tape))
    ys = Tensor(one_hot(np.zeros(n_s, dtype=int), 2))
    yt = Tensor(one_hot(np.ones(n_t, dtype=int), 2))
    total = tape.add(tape.sum(tape.mul(ys, ls)), tape.sum(tape.mul(yt, lt)))
    return tape.scale(total, -1.0 / (n_s + n_t))
