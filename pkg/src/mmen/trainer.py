"""Source pretraining followed by the alternating minimax entropy game.

Variants share one code path:

* ``mmen``        G + C descend ``l_c + lambda*H``; D descends ``l_c - lambda*H``.
* ``g_plus_d``    as ``mmen`` without the auxiliary classifier.
* ``source_only`` same schedule as ``mmen`` with the entropy term removed.
* ``dann``        C with a 2-way domain head behind gradient reversal.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tape, Tensor
from .data import BatchPair, DomainDataset, DomainPair, batch_iter, source_batches
from .metrics import CcdReport, bundle_ccd, evaluate
from .nets import ModelBundle, NetworkSpec, Role, build, forward, save_checkpoint
from .objectives import (
    LossReport,
    classification_loss,
    dann_domain_loss,
    d_objective,
    g_objective,
    one_hot,
    pseudo_label_entropy,
)
from .optim import make_optimizer

logger = logging.getLogger(__name__)

VARIANTS = ("source_only", "dann", "g_plus_d", "mmen")

__all__ = [
    "VARIANTS",
    "TrainConfig",
    "ModelConfig",
    "EpochRecord",
    "MetricsLog",
    "TrainedModel",
    "TrainResult",
    "TrainingDiverged",
    "OptimizerState",
    "build_bundle",
    "pretrain",
    "adversarial_step",
    "new_optimizer_state",
    "train",
    "SweepResult",
    "sweep",
]


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.1
    k: int = 4
    epochs: int = 150
    pretrain_epochs: int = 10
    batch_source: int = 128
    batch_target: int = 128
    optimizer: str = "adam"
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    variant: str = "mmen"
    d_first: bool = False
    carry_optimizer_state: bool = False
    detach_pseudo_labels: bool = False

    def __post_init__(self):
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ValueError("lambda must be a finite value >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_source < 1 or self.batch_target < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass(frozen=True)
class ModelConfig:
    """Layer widths for G and for each head (D, C and the DANN domain head share one shape)."""

    generator_hidden: tuple = (32,)
    feature_dim: int = 32
    head_hidden: tuple = (32,)

    def __post_init__(self):
        object.__setattr__(self, "generator_hidden", tuple(int(h) for h in self.generator_hidden))
        object.__setattr__(self, "head_hidden", tuple(int(h) for h in self.head_hidden))
        if self.feature_dim < 1 or any(h < 1 for h in self.generator_hidden + self.head_hidden):
            raise ValueError("layer widths must be >= 1")


def build_bundle(n_features: int, n_classes: int, model: ModelConfig, variant: str, seed: int) -> ModelBundle:
    """Networks for a variant; G, D and C seeds do not depend on the variant."""
    g = build(NetworkSpec(n_features, model.generator_hidden, model.feature_dim, seed=4 * seed), Role.GENERATOR)
    head = lambda out, off: NetworkSpec(model.feature_dim, model.head_hidden, out, seed=4 * seed + off)
    d = build(head(n_classes, 1), Role.DISCRIMINATOR) if variant != "dann" else None
    c = build(head(n_classes, 2), Role.CLASSIFIER) if variant != "g_plus_d" else None
    domain = build(head(2, 3), Role.DOMAIN_CLASSIFIER) if variant == "dann" else None
    return ModelBundle(g=g, d=d, c=c, domain=domain)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss_name: str, variant: str = ""):
        self.epoch, self.loss_name, self.variant = epoch, loss_name, variant
        who = f"variant {variant}: " if variant else ""
        super().__init__(f"{who}non-finite {loss_name} at epoch {epoch}")


# -- metrics log ---------------------------------------------------------------

METRICS_HEADER = ("epoch", "h_target", "l_c_source", "target_xent_true", "acc_c", "acc_d", "mean_ccd")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    h_target: float
    l_c_source: float
    target_xent_true: float
    acc_c: float
    acc_d: float
    mean_ccd: float

    def row(self) -> list:
        return [self.epoch] + [f"{getattr(self, n):.6f}" for n in METRICS_HEADER[1:]]


@dataclass
class MetricsLog:
    records: list = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must increase")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i) -> EpochRecord:
        return self.records[i]

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            for rec in self.records:
                w.writerow(rec.row())


@dataclass
class TrainedModel:
    bundle: ModelBundle
    config: TrainConfig
    final_metrics: EpochRecord
    model_config: ModelConfig = field(default_factory=ModelConfig)

    @property
    def prediction_head(self) -> str:
        return self.bundle.default_head()

    def save(self, path) -> None:
        meta = {
            "train": asdict(self.config),
            "model": asdict(self.model_config),
            "final_metrics": asdict(self.final_metrics),
        }
        save_checkpoint(path, self.bundle, meta)


@dataclass
class TrainResult:
    model: TrainedModel
    log: MetricsLog
    pretrained: ModelBundle
    reference_ccd: Optional[CcdReport]

    @property
    def bundle(self) -> ModelBundle:
        return self.model.bundle


# -- steps -----------------------------------------------------------------------


@dataclass
class OptimizerState:
    gen: object
    disc: object


def _opt(config: TrainConfig, params):
    return make_optimizer(config.optimizer, params, config.lr, config.beta1, config.beta2, config.eps)


def _gen_params(bundle: ModelBundle, variant: str) -> list:
    params = bundle.g.parameters()
    if bundle.c is not None:
        params += bundle.c.parameters()
    return params


def _disc_params(bundle: ModelBundle, variant: str) -> list:
    if variant == "dann":
        return bundle.domain.parameters()
    return bundle.d.parameters()


def new_optimizer_state(bundle: ModelBundle, config: TrainConfig) -> OptimizerState:
    return OptimizerState(
        _opt(config, _gen_params(bundle, config.variant)),
        _opt(config, _disc_params(bundle, config.variant)),
    )


def _source_heads(bundle: ModelBundle, variant: str) -> tuple:
    # (classifier, discriminator) networks that enter the source loss.
    if variant == "dann":
        return bundle.c, None
    return bundle.c, bundle.d


def _source_loss(bundle, variant, feats_s, y, tape):
    c_net, d_net = _source_heads(bundle, variant)
    c_logits = forward(c_net, feats_s, tape) if c_net is not None else None
    d_logits = forward(d_net, feats_s, tape) if d_net is not None else None
    return classification_loss(c_logits, d_logits, y, tape)


def _uses_entropy(variant: str) -> bool:
    return variant in ("mmen", "g_plus_d")


def _objective(bundle, batch: BatchPair, y: Tensor, config: TrainConfig, tape: Tape, role: str,
               generator_grads: bool = True):
    """Build the signed objective for ``role`` ('g' or 'd') on ``tape``.

    With ``generator_grads`` False the generator runs off-tape, so no
    gradient can reach its parameters.
    """
    g_tape = tape if generator_grads else Tape(record=False)
    fs = forward(bundle.g, batch.xs, g_tape)
    l_c = _source_loss(bundle, config.variant, fs, y, tape)
    if not _uses_entropy(config.variant):
        return l_c, l_c, None
    ft = forward(bundle.g, batch.xt, g_tape)
    h = pseudo_label_entropy(forward(bundle.d, ft, tape), tape, config.detach_pseudo_labels)
    combine = g_objective if role == "g" else d_objective
    return combine(l_c, h, config.lam, tape), l_c, h


def _descend(tape: Tape, loss: Tensor, bundle: ModelBundle, opt) -> None:
    bundle.zero_grad()
    tape.backward(loss)
    opt.step()


def _g_substep(bundle, batch, y, config, opt) -> None:
    tape = Tape()
    obj, _, _ = _objective(bundle, batch, y, config, tape, "g")
    _descend(tape, obj, bundle, opt)


def _d_substep(bundle, batch, y, config, opt) -> None:
    tape = Tape()
    obj, _, _ = _objective(bundle, batch, y, config, tape, "d", generator_grads=False)
    _descend(tape, obj, bundle, opt)


def _dann_substep(bundle, batch, y, config, opt_state: OptimizerState) -> None:
    tape = Tape()
    fs = forward(bundle.g, batch.xs, tape)
    ft = forward(bundle.g, batch.xt, tape)
    l_c = _source_loss(bundle, "dann", fs, y, tape)
    dom = dann_domain_loss(fs, ft, bundle.domain, tape, reverse_coeff=config.lam)
    bundle.zero_grad()
    tape.backward(tape.add(l_c, dom))
    opt_state.gen.step()
    opt_state.disc.step()


def measure(bundle: ModelBundle, batch: BatchPair, config: TrainConfig) -> LossReport:
    """Loss values on a batch without recording gradients."""
    tape = Tape(record=False)
    y = Tensor(one_hot(batch.ys, bundle.n_classes))
    fs = forward(bundle.g, batch.xs, tape)
    ft = forward(bundle.g, batch.xt, tape)
    l_c = _source_loss(bundle, config.variant, fs, y, tape).item()
    head = bundle.d if bundle.d is not None else bundle.c
    h = pseudo_label_entropy(forward(head, ft, tape)).item()
    dom = float("nan")
    if config.variant == "dann":
        dom = dann_domain_loss(fs, ft, bundle.domain, tape).item()
        combined = l_c + dom
    elif _uses_entropy(config.variant):
        combined = g_objective(l_c, h, config.lam)
    else:
        combined = l_c
    return LossReport(l_c, h, combined, config.lam, dom)


def adversarial_step(
    bundle: ModelBundle,
    batch: BatchPair,
    config: TrainConfig,
    opt_state: OptimizerState,
) -> LossReport:
    """One batch of the minimax game: ``k`` generator-side updates and one
    discriminator update (order set by ``config.d_first``).

    The generator-side updates touch G and C only; the discriminator update
    touches D only. DANN instead takes a single joint step with gradient
    reversal.
    """
    y = Tensor(one_hot(batch.ys, bundle.n_classes))
    if config.variant == "dann":
        _dann_substep(bundle, batch, y, config, opt_state)
    else:
        if config.d_first:
            _d_substep(bundle, batch, y, config, opt_state.disc)
        for _ in range(config.k):
            _g_substep(bundle, batch, y, config, opt_state.gen)
        if not config.d_first:
            _d_substep(bundle, batch, y, config, opt_state.disc)
    return measure(bundle, batch, config)


def _pretrain_params(bundle: ModelBundle, variant: str) -> list:
    params = bundle.g.parameters()
    c_net, d_net = _source_heads(bundle, variant)
    for net in (c_net, d_net):
        if net is not None:
            params += net.parameters()
    return params


def pretrain(bundle: ModelBundle, source: DomainDataset, config: TrainConfig):
    """Minimise the source classification loss over G and the class heads.

    Returns the optimizer so its state can be carried into the adversarial
    phase when ``config.carry_optimizer_state`` is set.
    """
    if source.labels is None or len(source) == 0:
        raise ValueError("pretraining needs a non-empty labeled source dataset")
    params = _pretrain_params(bundle, config.variant)
    opt = _opt(config, params)
    batch = min(config.batch_source, len(source))
    for epoch in range(config.pretrain_epochs):
        for idx in source_batches(len(source), batch, config.seed, epoch, stream=2):
            tape = Tape()
            fs = forward(bundle.g, source.features[idx], tape)
            y = Tensor(one_hot(source.labels[idx], source.class_count))
            loss = _source_loss(bundle, config.variant, fs, y, tape)
            if not math.isfinite(loss.item()):
                raise TrainingDiverged(-epoch, "pretrain l_c", config.variant)
            _descend(tape, loss, bundle, opt)
    return opt


def _epoch_record(bundle, pair, epoch, reference) -> EpochRecord:
    ev = evaluate(bundle, pair)
    mean_ccd = float("nan")
    if reference is not None:
        mean_ccd = bundle_ccd(bundle, pair, reference, epoch=epoch).mean_normalized
    return EpochRecord(epoch, ev.h_target, ev.l_c_source, ev.xent_true_target,
                       ev.accuracy_classifier, ev.accuracy_discriminator, mean_ccd)


def train(
    pair: DomainPair,
    config: TrainConfig,
    model: Optional[ModelConfig] = None,
) -> TrainResult:
    """Pretrain, then run ``config.epochs`` adversarial epochs.

    Epoch 0 of the log describes the pretrained model; CCD values are
    normalised by that model's per-class distances.
    """
    model = model or ModelConfig()
    bundle = build_bundle(pair.n_features, pair.class_count, model, config.variant, config.seed)
    cfg = replace(
        config,
        batch_source=min(config.batch_source, len(pair.source)),
        batch_target=min(config.batch_target, len(pair.target)),
    )
    pre_opt = pretrain(bundle, pair.source, cfg)
    pretrained = bundle.copy()
    reference = None
    if pair.diagnostic_target_labels() is not None:
        reference = bundle_ccd(bundle, pair, epoch=0)
    log = MetricsLog()
    log.append(_epoch_record(bundle, pair, 0, reference))

    opt_state = new_optimizer_state(bundle, cfg)
    if cfg.carry_optimizer_state and cfg.variant != "dann":
        opt_state.gen = _carry(pre_opt, opt_state.gen)
    for epoch in range(1, cfg.epochs + 1):
        for batch in batch_iter(pair, cfg.batch_source, cfg.batch_target, cfg.seed, epoch):
            rep = adversarial_step(bundle, batch, cfg, opt_state)
            for name in ("l_c", "h_target", "combined"):
                if not math.isfinite(getattr(rep, name)):
                    raise TrainingDiverged(epoch, name, cfg.variant)
        log.append(_epoch_record(bundle, pair, epoch, reference))
        logger.debug("epoch %d %s", epoch, log.final)

    trained = TrainedModel(bundle, config, log.final, model)
    return TrainResult(trained, log, pretrained, reference)


def _carry(src_opt, dst_opt):
    # Moments are copied for parameters present in both optimizers.
    if type(src_opt) is not type(dst_opt) or not hasattr(src_opt, "m"):
        return dst_opt
    index = {id(p): i for i, p in enumerate(src_opt.params)}
    for j, p in enumerate(dst_opt.params):
        i = index.get(id(p))
        if i is not None:
            dst_opt.m[j][...] = src_opt.m[i]
            dst_opt.v[j][...] = src_opt.v[i]
    dst_opt.t = src_opt.t
    return dst_opt


# -- sweep ------------------------------------------------------------------------


@dataclass
class SweepResult:
    k_values: list
    lambda_values: list
    accuracy: np.ndarray
    failures: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k"] + [f"lambda={lam:g}" for lam in self.lambda_values])
            for i, k in enumerate(self.k_values):
                w.writerow([k] + ["NaN" if np.isnan(a) else f"{a:.6f}" for a in self.accuracy[i]])


def final_accuracy(result: TrainResult) -> float:
    rec = result.log.final
    return rec.acc_c if result.bundle.c is not None else rec.acc_d


def _sweep_cell(args):
    pair, config, model = args
    try:
        return final_accuracy(train(pair, config, model)), None
    except TrainingDiverged as exc:
        return float("nan"), str(exc)


def sweep(
    pair: DomainPair,
    base_config: TrainConfig,
    k_values: Sequence[int],
    lambda_values: Sequence[float],
    model: Optional[ModelConfig] = None,
    jobs: int = 1,
) -> SweepResult:
    """Train once per (k, lambda) cell with the base seed; diverged cells hold NaN."""
    if not k_values or not lambda_values:
        raise ValueError("sweep grids must be non-empty")
    cells = [(i, j) for i in range(len(k_values)) for j in range(len(lambda_values))]
    tasks = [(pair, replace(base_config, k=int(k_values[i]), lam=float(lambda_values[j])), model) for i, j in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outcomes = list(ex.map(_sweep_cell, tasks))
    else:
        outcomes = [_sweep_cell(t) for t in tasks]
    acc = np.full((len(k_values), len(lambda_values)), np.nan)
    failures = {}
    for (i, j), (value, err) in zip(cells, outcomes):
        acc[i, j] = value
        if err is not None:
            failures[(k_values[i], lambda_values[j])] = err
    return SweepResult(list(k_values), list(lambda_values), acc, failures)
