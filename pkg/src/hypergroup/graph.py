"""Social graph and group hypergraph construction, plus neighbor sampling.

Groups act as hyperedges over the user set.  Two hyperedges are adjacent
when they share at least one member; each adjacency entry carries the
exact common-member set and its cardinality as the aggregation weight.
Construction goes through a user -> groups inverted index, so cost is
near-linear in total membership size for sparse overlap.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import InteractionDataset
from .errors import ContractViolation


@dataclass(frozen=True)
class HyperedgeNeighbor:
    """One incident hyperedge: its id, overlap weight, and shared members."""

    group: int
    weight: int
    common_members: frozenset[int]


@dataclass
class SocialGraph:
    """Symmetric user adjacency with sorted neighbor lists."""

    adjacency: list[list[int]]

    @property
    def num_users(self) -> int:
        return len(self.adjacency)

    def neighbors(self, u: int) -> list[int]:
        return self.adjacency[u]


@dataclass
class Hypergraph:
    """Group incidence plus weighted hyperedge adjacency.

    ``vertex_degree[u]`` counts the hyperedges containing ``u``;
    ``adjacency[g]`` lists incident hyperedges sorted by group id.
    """

    incidence: list[frozenset[int]]
    vertex_degree: np.ndarray
    adjacency: list[list[HyperedgeNeighbor]]

    @property
    def num_groups(self) -> int:
        return len(self.incidence)

    def neighbors(self, g: int) -> list[HyperedgeNeighbor]:
        return self.adjacency[g]

    def dump_adjacency_tsv(self, path) -> None:
        """Debug dump: one ``g<TAB>g'<TAB>weight`` line per adjacency entry."""
        with open(Path(path), "w", encoding="utf-8") as fh:
            for g, entries in enumerate(self.adjacency):
                for e in entries:
                    fh.write(f"{g}\t{e.group}\t{e.weight}\n")


def build_social_graph(ds: InteractionDataset) -> SocialGraph:
    """Canonical symmetric adjacency from the dataset's social edges."""
    adjacency: list[list[int]] = [[] for _ in range(ds.num_users)]
    for a, b in ds.social_edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    for lst in adjacency:
        lst.sort()
    return SocialGraph(adjacency=adjacency)


def build_hypergraph(ds: InteractionDataset) -> Hypergraph:
    """Incidence, vertex degrees and weighted hyperedge adjacency.

    Every group pair sharing at least one member gets a symmetric pair of
    adjacency entries whose weight is the exact intersection size.
    """
    incidence = [frozenset(members) for members in ds.memberships]
    degree = np.zeros(ds.num_users, dtype=np.int64)
    by_user: dict[int, list[int]] = {}
    for g, members in enumerate(ds.memberships):
        for u in members:
            degree[u] += 1
            by_user.setdefault(u, []).append(g)

    common: dict[tuple[int, int], set[int]] = {}
    for u, groups in by_user.items():
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                a, b = groups[i], groups[j]
                key = (a, b) if a < b else (b, a)
                common.setdefault(key, set()).add(u)

    adjacency: list[list[HyperedgeNeighbor]] = [[] for _ in range(ds.num_groups)]
    for (a, b), members in common.items():
        shared = frozenset(members)
        w = len(shared)
        adjacency[a].append(HyperedgeNeighbor(group=b, weight=w, common_members=shared))
        adjacency[b].append(HyperedgeNeighbor(group=a, weight=w, common_members=shared))
    for lst in adjacency:
        lst.sort(key=lambda e: e.group)
    return Hypergraph(incidence=incidence, vertex_degree=degree, adjacency=adjacency)


def sample_neighbors(pool, node_self: int, size: int, rng: np.random.Generator) -> list[int]:
    """Draw exactly ``size`` entries from ``pool``.

    Without replacement when the pool is large enough, with replacement
    when it is smaller but nonempty, and ``[node_self] * size`` when empty.
    """
    if size < 1:
        raise ContractViolation(f"sample size must be >= 1, got {size}")
    n = len(pool)
    if n == 0:
        return [node_self] * size
    if n >= size:
        picked = rng.choice(n, size=size, replace=False)
    else:
        picked = rng.integers(0, n, size=size)
    return [pool[int(i)] for i in picked]
