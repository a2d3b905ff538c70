"""Full-ranking evaluation: hit ratio and NDCG at cutoffs, a popularity
baseline, and optional stratified reporting.

Every test case scores all items (optionally minus the entity's training
positives), ranks them by score with ties broken by ascending item index,
and checks where the ground-truth item landed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import InteractionDataset
from .errors import ConfigError, ContractViolation
from .graph import Hypergraph, SocialGraph
from .model import ForwardPass, ModelConfig, ModelParams, mlp_forward
from .numeric import Tensor

GROUP_SIZE_BINS = (("l<3", lambda l: l < 3), ("3<=l<=7", lambda l: 3 <= l <= 7), ("l>7", lambda l: l > 7))
ITEM_ACTIVITY_BINS = (("tau<=3", lambda t: t <= 3), ("tau>3", lambda t: t > 3))


def rank_items(scores: np.ndarray) -> np.ndarray:
    """Item indices sorted by descending score, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ContractViolation("scores must be finite")
    return np.argsort(-scores, kind="stable")


def _ranks_from_order(order: np.ndarray) -> np.ndarray:
    ranks = np.empty(len(order), dtype=np.int64)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks


def hit_ratio(test_cases, cutoff: int) -> float:
    """Fraction of cases whose ground truth appears in the top ``cutoff``."""
    if cutoff < 1:
        raise ContractViolation("cutoff must be >= 1")
    if not test_cases:
        raise ContractViolation("empty test set")
    hits = 0
    for _entity, truth, ranked in test_cases:
        if truth in list(ranked[:cutoff]):
            hits += 1
    return hits / len(test_cases)


def ndcg(test_cases, cutoff: int) -> float:
    """Mean discounted gain of the single relevant item, 1 at rank one."""
    if cutoff < 1:
        raise ContractViolation("cutoff must be >= 1")
    if not test_cases:
        raise ContractViolation("empty test set")
    total = 0.0
    for _entity, truth, ranked in test_cases:
        top = list(ranked[:cutoff])
        if truth in top:
            rank = top.index(truth) + 1
            total += 1.0 / np.log2(rank + 1.0)
    return total / len(test_cases)


@dataclass(frozen=True)
class MetricPair:
    hr: float
    ndcg: float


@dataclass
class EvalReport:
    """Hit ratio and NDCG per cutoff, with optional stratified breakdowns."""

    target: str
    metrics: dict[int, MetricPair]
    num_test_cases: int
    strata: dict | None = None

    def to_dict(self) -> dict:
        blob = {
            "target": self.target,
            "num_test_cases": self.num_test_cases,
            "metrics": {
                str(n): {"hr": pair.hr, "ndcg": pair.ndcg} for n, pair in self.metrics.items()
            },
        }
        if self.strata is not None:
            blob["strata"] = self.strata
        return blob

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_table(self) -> str:
        cutoffs = sorted(self.metrics)
        lines = [f"{'cutoff':<8}{'HR':>10}{'NDCG':>10}"]
        for n in cutoffs:
            pair = self.metrics[n]
            lines.append(f"@{n:<7}{pair.hr:>10.4f}{pair.ndcg:>10.4f}")
        lines.append(f"test cases: {self.num_test_cases}")
        return "\n".join(lines)


def _metrics_from_ranks(ranks: np.ndarray, cutoffs) -> dict[int, MetricPair]:
    out = {}
    for n in cutoffs:
        hit = ranks <= n
        gains = np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)
        out[int(n)] = MetricPair(hr=float(np.mean(hit)), ndcg=float(np.mean(gains)))
    return out


def evaluate(
    params: ModelParams,
    model_cfg: ModelConfig,
    social: SocialGraph | None,
    hyper: Hypergraph | None,
    test_ds: InteractionDataset,
    cutoffs=(5, 10),
    eval_seed: int = 0,
    target: str = "groups",
    train_ds: InteractionDataset | None = None,
    exclude_train_positives: bool = False,
    strata: bool = False,
    detail: bool = False,
):
    """Rank all items for every test interaction and aggregate the metrics.

    Embeddings are computed once per entity under ``eval_seed``; the
    report is a pure function of (params, test split, cutoffs, seed).
    """
    if target not in ("groups", "users"):
        raise ConfigError(f"target must be 'groups' or 'users', got {target!r}")
    cases = test_ds.group_item if target == "groups" else test_ds.user_item
    if not cases:
        raise ContractViolation(f"test split holds no {target[:-1]}-item interactions")
    cutoffs = sorted({int(n) for n in cutoffs})
    if not cutoffs or cutoffs[0] < 1:
        raise ConfigError("cutoffs must be positive")
    if exclude_train_positives and train_ds is None:
        raise ConfigError("excluding training positives requires the training split")

    rng = np.random.default_rng(eval_seed)
    entities = sorted({e for e, _ in cases})
    fp = ForwardPass(params, model_cfg, social, hyper, rng, tape=None, training=False)
    if target == "groups":
        rows = fp.group_vectors(entities).values
        tower = params.group_mlp
    else:
        rows = fp.member_vectors(entities).values
        tower = params.user_mlp

    items = params.item_embeddings.values
    n_items = items.shape[0]
    excluded: dict[int, set[int]] = {}
    if exclude_train_positives:
        train_pairs = train_ds.group_item if target == "groups" else train_ds.user_item
        for e, v in train_pairs:
            excluded.setdefault(e, set()).add(v)

    rank_of: dict[int, np.ndarray] = {}
    for row, entity in zip(rows, entities):
        x = np.concatenate([np.tile(row, (n_items, 1)), items], axis=1)
        scores = mlp_forward(tower, Tensor(x), model_cfg, rng, tape=None, training=False).values
        drop = excluded.get(entity)
        if drop:
            scores = scores.copy()
            scores[sorted(drop)] = -np.inf
            order = np.argsort(-scores, kind="stable")
        else:
            order = rank_items(scores)
        rank_of[entity] = _ranks_from_order(order)

    ranks = np.array([rank_of[e][v] for e, v in cases], dtype=np.int64)
    report = EvalReport(
        target=target,
        metrics=_metrics_from_ranks(ranks, cutoffs),
        num_test_cases=len(cases),
    )

    if strata:
        report.strata = {}
        if target == "groups":
            sizes = np.array([len(test_ds.memberships[g]) for g, _ in cases])
            report.strata["group_size"] = _stratify(ranks, sizes, GROUP_SIZE_BINS, cutoffs)
        activity_source = train_ds if train_ds is not None else test_ds
        counts = np.zeros(n_items, dtype=np.int64)
        for _, v in activity_source.group_item:
            counts[v] += 1
        activity = np.array([counts[v] for _, v in cases])
        report.strata["item_activity"] = _stratify(ranks, activity, ITEM_ACTIVITY_BINS, cutoffs)

    if detail:
        details = [(e, v, int(rank_of[e][v])) for e, v in cases]
        return report, details
    return report


def _stratify(ranks, keys, bins, cutoffs) -> dict:
    out = {}
    for label, pred in bins:
        mask = np.array([pred(k) for k in keys], dtype=bool)
        if not mask.any():
            out[label] = {"num_test_cases": 0, "metrics": None}
            continue
        metrics = _metrics_from_ranks(ranks[mask], cutoffs)
        out[label] = {
            "num_test_cases": int(mask.sum()),
            "metrics": {str(n): {"hr": p.hr, "ndcg": p.ndcg} for n, p in metrics.items()},
        }
    return out


def pop_baseline(train_ds: InteractionDataset) -> np.ndarray:
    """Items ranked by descending training interaction count (group plus
    user interactions), ties by ascending index."""
    if not train_ds.group_item and not train_ds.user_item:
        raise ContractViolation("training split holds no interactions")
    counts = np.zeros(train_ds.num_items, dtype=np.int64)
    for _, v in train_ds.group_item:
        counts[v] += 1
    for _, v in train_ds.user_item:
        counts[v] += 1
    return np.argsort(-counts, kind="stable")
