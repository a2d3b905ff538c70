"""Negative sampling, pairwise ranking objectives, optimizers, and the
training strategies (two-stage, joint, and the single-task baselines).

Positive draws are accumulated into mini-batches; one optimizer step runs
per batch, updating only parameters the batch actually touched.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .data import InteractionDataset
from .errors import ConfigError, ContractViolation, NumericError, SamplingError
from .graph import Hypergraph, SocialGraph
from .model import ForwardPass, ModelConfig, ModelParams, mlp_forward, uses_hrl, uses_ipm
from .numeric import Tape, Tensor

log = logging.getLogger(__name__)

STRATEGIES = ("TWO_STAGE", "JOINT", "GROUP_ONLY", "USER_ONLY")
OPTIMIZERS = ("ADAM", "SGD")

STRATEGY_FLAGS = {
    "two-stage": "TWO_STAGE",
    "joint": "JOINT",
    "group-only": "GROUP_ONLY",
    "user-only": "USER_ONLY",
}


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run given a seed."""

    learning_rate: float = 1e-4
    batch_size: int = 256
    negatives: int = 1
    epochs: int = 30
    l2_reg: float = 1e-5
    strategy: str = "TWO_STAGE"
    optimizer: str = "ADAM"
    seed: int = 0
    user_budget: int | None = None
    group_budget: int | None = None
    early_stop_patience: int | None = None
    threads: int = 1

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.negatives < 1:
            raise ConfigError("negatives must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.l2_reg < 0:
            raise ConfigError("l2_reg must be >= 0")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    loss_g: float | None
    loss_u: float | None
    seconds: float


@dataclass
class TrainReport:
    """Per-epoch losses plus run metadata."""

    strategy: str
    epochs: list[EpochStats] = field(default_factory=list)
    checkpoint_path: str | None = None
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "stopped_early": self.stopped_early,
            "checkpoint_path": self.checkpoint_path,
            "epochs": [
                {"epoch": e.epoch, "loss_g": e.loss_g, "loss_u": e.loss_u, "seconds": e.seconds}
                for e in self.epochs
            ],
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    def write_loss_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss_g", "loss_u", "seconds"])
            for e in self.epochs:
                writer.writerow(
                    [
                        e.epoch,
                        "" if e.loss_g is None else f"{e.loss_g:.10g}",
                        "" if e.loss_u is None else f"{e.loss_u:.10g}",
                        f"{e.seconds:.6f}",
                    ]
                )

    def final_loss(self, task: str) -> float | None:
        for e in reversed(self.epochs):
            value = e.loss_g if task == "group" else e.loss_u
            if value is not None:
                return value
        return None


# ---------------------------------------------------------------------------
# sampling


def sample_negative(
    positive_set: set[int], n_items: int, n_x: int, rng: np.random.Generator
) -> list[int]:
    """Draw ``n_x`` items uniformly from the complement of ``positive_set``."""
    if len(positive_set) >= n_items:
        raise SamplingError("positive set covers all items; no negatives exist")
    out = []
    for _ in range(n_x):
        while True:
            v = int(rng.integers(n_items))
            if v not in positive_set:
                out.append(v)
                break
    return out


def positives_by_entity(pairs) -> dict[int, set[int]]:
    table: dict[int, set[int]] = {}
    for e, v in pairs:
        table.setdefault(e, set()).add(v)
    return table


def build_triples(batch_pairs, positives, n_items, n_x, rng):
    """Expand positive pairs into (entity, positive, negative) triples."""
    triples = []
    for e, v in batch_pairs:
        for neg in sample_negative(positives[e], n_items, n_x, rng):
            triples.append((e, v, neg))
    return triples


# ---------------------------------------------------------------------------
# batch objectives


def regularized_parameters(params: ModelParams, cfg: ModelConfig, task: str):
    """Trainable tensors a batch of the given task touches, in fixed order."""
    out = [("user_latent", params.user_latent), ("item_embeddings", params.item_embeddings)]
    if uses_ipm(cfg.variant):
        out += [(f"ipm_w{i}", w) for i, w in enumerate(params.ipm_layers, start=1)]
    if task == "group" and uses_hrl(cfg.variant):
        out += [(f"hrl_w{i}", w) for i, w in enumerate(params.hrl_layers, start=1)]
    tower = params.group_mlp if task == "group" else params.user_mlp
    prefix = "group_mlp" if task == "group" else "user_mlp"
    for i, (w, b) in enumerate(tower.hidden, start=1):
        out += [(f"{prefix}_w{i}", w), (f"{prefix}_b{i}", b)]
    out.append((f"{prefix}_out", tower.out))
    return out


def _batch_loss(
    task: str,
    triples,
    params: ModelParams,
    cfg: ModelConfig,
    social: SocialGraph | None,
    hyper: Hypergraph | None,
    l2_reg: float,
    rng: np.random.Generator,
    tape: Tape | None = None,
    training: bool = True,
) -> Tensor:
    if not triples:
        raise ContractViolation("batch must hold at least one triple")
    fp = ForwardPass(params, cfg, social, hyper, rng, tape, training)
    if task == "group":
        entity_rows = fp.group_vectors([g for g, _, _ in triples])
        tower = params.group_mlp
    else:
        entity_rows = fp.member_vectors([u for u, _, _ in triples])
        tower = params.user_mlp
    pos_rows = nm.gather_rows(params.item_embeddings, [p for _, p, _ in triples], tape)
    neg_rows = nm.gather_rows(params.item_embeddings, [n for _, _, n in triples], tape)
    s_pos = mlp_forward(tower, nm.concat(entity_rows, pos_rows, tape), cfg, rng, tape, training)
    s_neg = mlp_forward(tower, nm.concat(entity_rows, neg_rows, tape), cfg, rng, tape, training)
    loss = nm.mean_all(nm.bpr_pair_loss(s_pos, s_neg, tape), tape)
    if l2_reg > 0.0:
        reg = None
        for _, p in regularized_parameters(params, cfg, task):
            sq = nm.sum_squares(p, tape)
            reg = sq if reg is None else nm.add(reg, sq, tape)
        loss = nm.add(loss, nm.scale(reg, l2_reg, tape), tape)
    return loss


def group_batch_loss(triples, params, cfg, social, hyper, l2_reg, rng,
                     tape=None, training=True) -> Tensor:
    """Mean pairwise ranking loss over (group, pos, neg) triples plus
    L2 regularization of the parameters the batch touches."""
    return _batch_loss("group", triples, params, cfg, social, hyper, l2_reg, rng, tape, training)


def user_batch_loss(triples, params, cfg, social, l2_reg, rng,
                    tape=None, training=True) -> Tensor:
    """Same objective through the user tower over (user, pos, neg) triples."""
    return _batch_loss("user", triples, params, cfg, social, None, l2_reg, rng, tape, training)


# ---------------------------------------------------------------------------
# optimizers


class SgdOptimizer:
    """Plain gradient descent."""

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, tensors) -> None:
        for p in tensors:
            g = _checked_grad(p)
            if g is None:
                continue
            p.values -= self.lr * g


class AdamOptimizer:
    """Bias-corrected adaptive moments; per-tensor step counts."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._state: dict[int, tuple[np.ndarray, np.ndarray, int]] = {}

    def step(self, tensors) -> None:
        for p in tensors:
            g = _checked_grad(p)
            if g is None:
                continue
            m, v, t = self._state.get(id(p), (np.zeros_like(p.values), np.zeros_like(p.values), 0))
            t += 1
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            self._state[id(p)] = (m, v, t)


def _checked_grad(p: Tensor) -> np.ndarray | None:
    if not p.trainable:
        return None
    if p.grad is None:
        return None
    if not np.all(np.isfinite(p.grad)):
        raise NumericError(f"non-finite gradient for parameter {p.name or 'unnamed'}")
    return p.grad


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "ADAM":
        return AdamOptimizer(cfg.learning_rate)
    return SgdOptimizer(cfg.learning_rate)


# ---------------------------------------------------------------------------
# training loops


def _shuffled_batches(pairs, batch_size, rng):
    order = rng.permutation(len(pairs))
    for start in range(0, len(pairs), batch_size):
        yield [pairs[int(i)] for i in order[start:start + batch_size]]


def _budget_batches(pairs, budget, batch_size, rng):
    draws = rng.integers(0, len(pairs), size=budget)
    for start in range(0, budget, batch_size):
        yield [pairs[int(i)] for i in draws[start:start + batch_size]]


class _TaskRunner:
    """Shared machinery for one task stream (user-item or group-item)."""

    def __init__(self, task, pairs, n_items, params, model_cfg, cfg, social, hyper, optimizer, rng):
        self.task = task
        self.pairs = list(pairs)
        self.positives = positives_by_entity(pairs)
        self.n_items = n_items
        self.params = params
        self.model_cfg = model_cfg
        self.cfg = cfg
        self.social = social
        self.hyper = hyper
        self.optimizer = optimizer
        self.rng = rng

    def run_batch(self, batch_pairs) -> float:
        triples = build_triples(batch_pairs, self.positives, self.n_items,
                                self.cfg.negatives, self.rng)
        tape = Tape()
        if self.task == "group":
            loss = group_batch_loss(triples, self.params, self.model_cfg, self.social,
                                    self.hyper, self.cfg.l2_reg, self.rng, tape)
        else:
            loss = user_batch_loss(triples, self.params, self.model_cfg, self.social,
                                   self.cfg.l2_reg, self.rng, tape)
        tape.backward(loss)
        touched = tape.touched_parameters()
        self.optimizer.step(touched)
        for p in touched:
            p.zero_grad()
        return float(loss.values)

    def epoch_batches(self, budget):
        if budget is None:
            yield from _shuffled_batches(self.pairs, self.cfg.batch_size, self.rng)
        else:
            yield from _budget_batches(self.pairs, budget, self.cfg.batch_size, self.rng)


class _BatchCycle:
    """Endless batch stream: reshuffles a fresh pass whenever one runs out."""

    def __init__(self, runner: "_TaskRunner", budget: int | None):
        self.runner = runner
        self.budget = budget
        self._queue: list = []
        self.pass_length = max(
            1,
            -(-(budget if budget is not None else len(runner.pairs)) // runner.cfg.batch_size),
        )

    def next_batch(self):
        if not self._queue:
            self._queue = list(self.runner.epoch_batches(self.budget))
        return self._queue.pop(0)


def effective_strategy(model_cfg: ModelConfig, cfg: TrainConfig) -> str:
    """The NO_USER_TASK variant trains on group-item interactions only."""
    if model_cfg.variant == "NO_USER_TASK" and cfg.strategy != "GROUP_ONLY":
        log.info("variant NO_USER_TASK forces the GROUP_ONLY strategy")
        return "GROUP_ONLY"
    return cfg.strategy


def train(
    train_ds: InteractionDataset,
    social: SocialGraph | None,
    hyper: Hypergraph | None,
    params: ModelParams,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    val_ds: InteractionDataset | None = None,
) -> TrainReport:
    """Run the configured optimization strategy and return per-epoch stats.

    All randomness (shuffles, negatives, neighbor samples, dropout) flows
    from one generator seeded with ``cfg.seed``, so a fixed config plus
    seed reproduces the run bit-exactly.
    """
    cfg.validate()
    strategy = effective_strategy(model_cfg, cfg)
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(cfg)

    user_runner = _TaskRunner("user", train_ds.user_item, train_ds.num_items, params,
                              model_cfg, cfg, social, hyper, optimizer, rng)
    group_runner = _TaskRunner("group", train_ds.group_item, train_ds.num_items, params,
                               model_cfg, cfg, social, hyper, optimizer, rng)
    report = TrainReport(strategy=strategy)

    early_stop = _EarlyStop(cfg, model_cfg, params, social, hyper, val_ds)

    def run_stream_epoch(epoch_index, runner, budget):
        start = time.perf_counter()
        losses = [runner.run_batch(b) for b in runner.epoch_batches(budget)]
        seconds = time.perf_counter() - start
        mean = float(np.mean(losses)) if losses else None
        stats = EpochStats(
            epoch=epoch_index,
            loss_g=mean if runner.task == "group" else None,
            loss_u=mean if runner.task == "user" else None,
            seconds=seconds,
        )
        report.epochs.append(stats)
        return stats

    if strategy == "TWO_STAGE":
        epoch = 0
        if train_ds.user_item:
            for _ in range(cfg.epochs):
                run_stream_epoch(epoch, user_runner, cfg.user_budget)
                epoch += 1
                if cfg.user_budget is not None:
                    break
        else:
            log.warning("no user-item training data; skipping the first stage")
        if train_ds.group_item:
            for _ in range(cfg.epochs):
                run_stream_epoch(epoch, group_runner, cfg.group_budget)
                epoch += 1
                if early_stop.should_stop():
                    report.stopped_early = True
                    break
                if cfg.group_budget is not None:
                    break
        else:
            log.warning("no group-item training data; skipping the second stage")
    elif strategy == "JOINT":
        # every iteration steps one user-item batch and one group-item
        # batch, for as many iterations as both full passes hold batches;
        # the shorter stream cycles through fresh reshuffled passes
        use_user = bool(train_ds.user_item)
        use_group = bool(train_ds.group_item)
        if not use_group:
            log.warning("no group-item training data")
        if not use_user:
            log.warning("no user-item training data")
        user_cycle = _BatchCycle(user_runner, cfg.user_budget) if use_user else None
        group_cycle = _BatchCycle(group_runner, cfg.group_budget) if use_group else None
        for epoch in range(cfg.epochs):
            start = time.perf_counter()
            iters = (user_cycle.pass_length if user_cycle else 0) + \
                    (group_cycle.pass_length if group_cycle else 0)
            losses_u, losses_g = [], []
            for _ in range(max(1, iters)):
                if user_cycle:
                    losses_u.append(user_runner.run_batch(user_cycle.next_batch()))
                if group_cycle:
                    losses_g.append(group_runner.run_batch(group_cycle.next_batch()))
            report.epochs.append(
                EpochStats(
                    epoch=epoch,
                    loss_g=float(np.mean(losses_g)) if losses_g else None,
                    loss_u=float(np.mean(losses_u)) if losses_u else None,
                    seconds=time.perf_counter() - start,
                )
            )
            if use_group and early_stop.should_stop():
                report.stopped_early = True
                break
    elif strategy in ("GROUP_ONLY", "USER_ONLY"):
        runner = group_runner if strategy == "GROUP_ONLY" else user_runner
        budget = cfg.group_budget if strategy == "GROUP_ONLY" else cfg.user_budget
        if not runner.pairs:
            log.warning("no %s-item training data", runner.task)
        for epoch in range(cfg.epochs):
            if not runner.pairs:
                break
            run_stream_epoch(epoch, runner, budget)
            if strategy == "GROUP_ONLY" and early_stop.should_stop():
                report.stopped_early = True
                break
    else:  # pragma: no cover - guarded by validate()
        raise ConfigError(f"unknown strategy {strategy!r}")
    return report


class _EarlyStop:
    """Optional early stopping on validation ranking quality."""

    def __init__(self, cfg, model_cfg, params, social, hyper, val_ds):
        self.enabled = (
            cfg.early_stop_patience is not None
            and val_ds is not None
            and bool(val_ds.group_item)
        )
        self.patience = cfg.early_stop_patience or 0
        self.cfg = cfg
        self.model_cfg = model_cfg
        self.params = params
        self.social = social
        self.hyper = hyper
        self.val_ds = val_ds
        self.best = -np.inf
        self.stale = 0

    def should_stop(self) -> bool:
        if not self.enabled:
            return False
        from .evaluation import evaluate  # local import to avoid a cycle

        report = evaluate(
            self.params, self.model_cfg, self.social, self.hyper, self.val_ds,
            cutoffs=(10,), eval_seed=self.cfg.seed, target="groups",
        )
        score = report.metrics[10].ndcg
        if score > self.best + 1e-12:
            self.best = score
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience
