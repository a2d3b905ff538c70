"""Interaction datasets: loading, validation, splitting and synthesis.

On-disk layout is a directory of four UTF-8 tab-separated files
(``social.tsv``, ``user_item.tsv``, ``group_members.tsv``,
``group_item.tsv``) plus an ``id_map.json`` sidecar mapping raw string IDs
to the dense indices used in memory.  The sidecar is written on first load
and honored on subsequent loads so indices stay stable across round trips.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, IntegrityError, ParseError

log = logging.getLogger(__name__)

SOCIAL_FILE = "social.tsv"
USER_ITEM_FILE = "user_item.tsv"
GROUP_MEMBERS_FILE = "group_members.tsv"
GROUP_ITEM_FILE = "group_item.tsv"
ID_MAP_FILE = "id_map.json"
DATA_FILES = (SOCIAL_FILE, USER_ITEM_FILE, GROUP_MEMBERS_FILE, GROUP_ITEM_FILE)


@dataclass
class IdMaps:
    """Raw string ID -> dense index, one map per entity class."""

    users: dict[str, int]
    items: dict[str, int]
    groups: dict[str, int]

    def reverse(self, kind: str) -> list[str]:
        mapping = getattr(self, kind)
        out = [""] * len(mapping)
        for raw, idx in mapping.items():
            out[idx] = raw
        return out


@dataclass
class InteractionDataset:
    """Users, items and groups with their four interaction relations.

    All indices are dense and 0-based.  ``social_edges`` stores each
    unordered pair once as ``(lo, hi)``; ``memberships[g]`` lists the
    member users of group ``g``.
    """

    num_users: int
    num_items: int
    num_groups: int
    social_edges: set[tuple[int, int]]
    user_item: list[tuple[int, int]]
    group_item: list[tuple[int, int]]
    memberships: list[list[int]]
    id_maps: IdMaps | None = field(default=None, compare=False)

    def validate(self) -> None:
        """Raise :class:`IntegrityError` if any structural invariant fails."""
        if len(self.memberships) != self.num_groups:
            raise IntegrityError("memberships must list every group")
        for a, b in self.social_edges:
            if a == b:
                raise IntegrityError(f"social self-loop on user {a}")
            if not (0 <= a < b < self.num_users):
                raise IntegrityError(f"social edge ({a},{b}) out of range or unordered")
        for u, v in self.user_item:
            if not (0 <= u < self.num_users and 0 <= v < self.num_items):
                raise IntegrityError(f"user-item pair ({u},{v}) out of range")
        for g, v in self.group_item:
            if not (0 <= g < self.num_groups and 0 <= v < self.num_items):
                raise IntegrityError(f"group-item pair ({g},{v}) out of range")
        for g, members in enumerate(self.memberships):
            if len(members) == 0:
                raise IntegrityError(f"group {g} has no members")
            for u in members:
                if not 0 <= u < self.num_users:
                    raise IntegrityError(f"group {g} member {u} out of range")
            if len(set(members)) != len(members):
                raise IntegrityError(f"group {g} lists a member twice")
        if len(set(self.user_item)) != len(self.user_item):
            raise IntegrityError("duplicate user-item pairs")
        if len(set(self.group_item)) != len(self.group_item):
            raise IntegrityError("duplicate group-item pairs")

    def group_size(self, g: int) -> int:
        return len(self.memberships[g])


@dataclass(frozen=True)
class SplitSpec:
    """Ratios for the train/validation/test partition plus the shuffle seed."""

    train_ratio: float = 0.8
    val_ratio: float = 0.1
    test_ratio: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        for name, r in (("train", self.train_ratio), ("val", self.val_ratio), ("test", self.test_ratio)):
            if not 0.0 < r < 1.0:
                raise ConfigError(f"{name}_ratio must lie in (0, 1), got {r}")
        total = self.train_ratio + self.val_ratio + self.test_ratio
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {total}")


@dataclass(frozen=True)
class SynthConfig:
    """Controls for the synthetic generator with planted topic structure.

    ``organizer_influence`` concentrates a group's interactions on a small
    signature subset of its organizer's topic items (the organizer being
    the group's lowest-indexed hub member), so group behavior carries
    member-identity signal beyond the plain topic.
    """

    num_users: int
    num_items: int
    num_groups: int
    avg_group_size: float = 4.5
    num_latent_topics: int = 3
    overlap_strength: float = 0.5
    interactions_per_user: float = 6.0
    interactions_per_group: float = 2.0
    social_degree: float = 4.0
    cross_topic_noise: float = 0.05
    organizer_influence: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("num_users", "num_items", "num_groups", "num_latent_topics"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.avg_group_size < 1:
            raise ConfigError("avg_group_size must be >= 1")
        if self.avg_group_size > self.num_users:
            raise ConfigError("avg_group_size cannot exceed num_users")
        if not 0.0 <= self.overlap_strength <= 1.0:
            raise ConfigError("overlap_strength must lie in [0, 1]")
        if not 0.0 <= self.organizer_influence <= 1.0:
            raise ConfigError("organizer_influence must lie in [0, 1]")
        if self.num_latent_topics > min(self.num_users, self.num_items):
            raise ConfigError("more topics than users or items")


# ---------------------------------------------------------------------------
# loading and saving


def _read_pairs(path: Path) -> list[tuple[str, str]]:
    pairs = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                parts = stripped.split("\t")
                if len(parts) != 2 or not parts[0] or not parts[1]:
                    raise ParseError(f"{path.name}:{lineno}: expected two tab-separated fields")
                pairs.append((parts[0], parts[1]))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return pairs


def load_dataset(dir_path) -> InteractionDataset:
    """Load the four TSV files, remapping raw string IDs to dense indices.

    A missing ``id_map.json`` is derived in first-seen order and written
    back next to the data files; an existing one is reused verbatim.
    Social edges are symmetrized, duplicates are dropped with a logged
    count, and memberships referring to unknown users raise.
    """
    root = Path(dir_path)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    for name in DATA_FILES:
        if not (root / name).is_file():
            raise DataError(f"missing data file: {root / name}")

    social_raw = _read_pairs(root / SOCIAL_FILE)
    user_item_raw = _read_pairs(root / USER_ITEM_FILE)
    members_raw = _read_pairs(root / GROUP_MEMBERS_FILE)
    group_item_raw = _read_pairs(root / GROUP_ITEM_FILE)

    map_path = root / ID_MAP_FILE
    if map_path.is_file():
        try:
            blob = json.loads(map_path.read_text(encoding="utf-8"))
            maps = IdMaps(
                users={str(k): int(v) for k, v in blob["users"].items()},
                items={str(k): int(v) for k, v in blob["items"].items()},
                groups={str(k): int(v) for k, v in blob["groups"].items()},
            )
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed {map_path}: {exc}") from exc
        for kind in ("users", "items", "groups"):
            m = getattr(maps, kind)
            if sorted(m.values()) != list(range(len(m))):
                raise IntegrityError(f"{ID_MAP_FILE} {kind} indices are not dense")
    else:
        users: dict[str, int] = {}
        items: dict[str, int] = {}
        groups: dict[str, int] = {}
        for a, b in social_raw:
            users.setdefault(a, len(users))
            users.setdefault(b, len(users))
        for u, v in user_item_raw:
            users.setdefault(u, len(users))
            items.setdefault(v, len(items))
        for g, _u in members_raw:
            groups.setdefault(g, len(groups))
        for g, v in group_item_raw:
            groups.setdefault(g, len(groups))
            items.setdefault(v, len(items))
        maps = IdMaps(users=users, items=items, groups=groups)
        map_path.write_text(
            json.dumps({"users": maps.users, "items": maps.items, "groups": maps.groups},
                       sort_keys=True, indent=1),
            encoding="utf-8",
        )

    def u_idx(raw: str, where: str) -> int:
        try:
            return maps.users[raw]
        except KeyError:
            raise IntegrityError(f"{where}: unknown user id {raw!r}") from None

    def v_idx(raw: str, where: str) -> int:
        try:
            return maps.items[raw]
        except KeyError:
            raise IntegrityError(f"{where}: unknown item id {raw!r}") from None

    social = set()
    dropped_loops = 0
    for a, b in social_raw:
        ia, ib = u_idx(a, SOCIAL_FILE), u_idx(b, SOCIAL_FILE)
        if ia == ib:
            dropped_loops += 1
            continue
        social.add((min(ia, ib), max(ia, ib)))
    if dropped_loops:
        log.warning("dropped %d social self-loop(s)", dropped_loops)

    def dedupe(pairs: list[tuple[int, int]], label: str) -> list[tuple[int, int]]:
        seen = set()
        out = []
        for p in pairs:
            if p in seen:
                continue
            seen.add(p)
            out.append(p)
        if len(out) != len(pairs):
            log.warning("dropped %d duplicate %s pair(s)", len(pairs) - len(out), label)
        return out

    user_item = dedupe(
        [(u_idx(u, USER_ITEM_FILE), v_idx(v, USER_ITEM_FILE)) for u, v in user_item_raw],
        "user-item",
    )
    group_item_idx = []
    for g, v in group_item_raw:
        if g not in maps.groups:
            raise IntegrityError(f"{GROUP_ITEM_FILE}: unknown group id {g!r}")
        group_item_idx.append((maps.groups[g], v_idx(v, GROUP_ITEM_FILE)))
    group_item = dedupe(group_item_idx, "group-item")

    memberships: list[list[int]] = [[] for _ in range(len(maps.groups))]
    for g, u in members_raw:
        if g not in maps.groups:
            raise IntegrityError(f"{GROUP_MEMBERS_FILE}: unknown group id {g!r}")
        if u not in maps.users:
            raise IntegrityError(
                f"{GROUP_MEMBERS_FILE}: member {u!r} of group {g!r} appears in no user file"
            )
        gi, ui = maps.groups[g], maps.users[u]
        if ui in memberships[gi]:
            log.warning("group %r lists member %r more than once; ignoring repeat", g, u)
            continue
        memberships[gi].append(ui)
    for gi, members in enumerate(memberships):
        if not members:
            raise IntegrityError(f"group index {gi} has no members")
        if len(members) == 1:
            log.warning("group index %d has a single member", gi)

    ds = InteractionDataset(
        num_users=len(maps.users),
        num_items=len(maps.items),
        num_groups=len(maps.groups),
        social_edges=social,
        user_item=user_item,
        group_item=group_item,
        memberships=memberships,
        id_maps=maps,
    )
    ds.validate()
    return ds


def save_dataset(ds: InteractionDataset, dir_path) -> None:
    """Write the four TSV files plus the ID-map sidecar.

    Raw string IDs from ``ds.id_maps`` are used when available so a saved
    dataset reloads to an identical in-memory structure.
    """
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    maps = ds.id_maps or IdMaps(
        users={str(i): i for i in range(ds.num_users)},
        items={str(i): i for i in range(ds.num_items)},
        groups={str(i): i for i in range(ds.num_groups)},
    )
    u_raw = maps.reverse("users")
    v_raw = maps.reverse("items")
    g_raw = maps.reverse("groups")

    def write(name: str, rows) -> None:
        with open(root / name, "w", encoding="utf-8") as fh:
            for a, b in rows:
                fh.write(f"{a}\t{b}\n")

    write(SOCIAL_FILE, ((u_raw[a], u_raw[b]) for a, b in sorted(ds.social_edges)))
    write(USER_ITEM_FILE, ((u_raw[u], v_raw[v]) for u, v in ds.user_item))
    write(GROUP_MEMBERS_FILE, ((g_raw[g], u_raw[u]) for g, members in enumerate(ds.memberships) for u in members))
    write(GROUP_ITEM_FILE, ((g_raw[g], v_raw[v]) for g, v in ds.group_item))
    (root / ID_MAP_FILE).write_text(
        json.dumps({"users": maps.users, "items": maps.items, "groups": maps.groups},
                   sort_keys=True, indent=1),
        encoding="utf-8",
    )


# ---------------------------------------------------------------------------
# splitting


def _partition(pairs: list[tuple[int, int]], spec: SplitSpec, rng: np.random.Generator):
    n = len(pairs)
    n_val = int(n * spec.val_ratio + 1e-9)
    n_test = int(n * spec.test_ratio + 1e-9)
    order = rng.permutation(n)
    val_idx = set(order[:n_val].tolist())
    test_idx = set(order[n_val:n_val + n_test].tolist())
    train, val, test = [], [], []
    for i, p in enumerate(pairs):
        if i in val_idx:
            val.append(p)
        elif i in test_idx:
            test.append(p)
        else:
            train.append(p)
    return train, val, test


def split_interactions(ds: InteractionDataset, spec: SplitSpec):
    """Partition user-item and group-item interactions by the split ratios.

    Remainders after flooring go to train.  Social edges and memberships
    are replicated into every split; the partition is deterministic for a
    fixed seed.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    ui_train, ui_val, ui_test = _partition(ds.user_item, spec, rng)
    gi_train, gi_val, gi_test = _partition(ds.group_item, spec, rng)

    if len(ds.group_item) >= 10:
        for name, part in (("train", gi_train), ("val", gi_val), ("test", gi_test)):
            if not part:
                log.warning("%s split received no group-item interactions", name)

    def mk(ui, gi):
        return replace(
            ds,
            user_item=list(ui),
            group_item=list(gi),
            social_edges=set(ds.social_edges),
            memberships=[list(m) for m in ds.memberships],
        )

    return mk(ui_train, gi_train), mk(ui_val, gi_val), mk(ui_test, gi_test)


# ---------------------------------------------------------------------------
# synthetic data


def generate_synthetic(cfg: SynthConfig) -> InteractionDataset:
    """Generate a dataset with planted topic structure.

    Users and items are assigned to latent topics; social edges connect
    mostly same-topic users; groups draw members from their topic's pool,
    preferring a small per-topic hub with probability ``overlap_strength``
    (more hub draws mean more shared members across groups); interactions
    go to same-topic items except for occasional noise.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    m, n, k, t = cfg.num_users, cfg.num_items, cfg.num_groups, cfg.num_latent_topics

    user_topic = np.arange(m) % t
    item_topic = np.arange(n) % t
    topic_users = [np.flatnonzero(user_topic == i) for i in range(t)]
    topic_items = [np.flatnonzero(item_topic == i) for i in range(t)]

    def pick_item(topic: int) -> int:
        if rng.random() < cfg.cross_topic_noise:
            return int(rng.integers(n))
        return int(rng.choice(topic_items[topic]))

    social: set[tuple[int, int]] = set()
    for u in range(m):
        pool = topic_users[user_topic[u]]
        pool = pool[pool != u]
        if pool.size == 0:
            continue
        deg = min(pool.size, max(1, int(rng.poisson(cfg.social_degree))))
        for w in rng.choice(pool, size=deg, replace=False):
            social.add((min(u, int(w)), max(u, int(w))))

    hub_size = max(2, int(round(cfg.avg_group_size)))
    hubs = [pool[: min(hub_size, pool.size)] for pool in topic_users]

    signatures: dict[int, np.ndarray] = {}
    if cfg.organizer_influence > 0.0:
        for u in range(m):
            pool = topic_items[user_topic[u]]
            size = min(4, pool.size)
            signatures[u] = rng.choice(pool, size=size, replace=False)

    memberships: list[list[int]] = []
    for g in range(k):
        topic = g % t
        pool = topic_users[topic]
        size = 1 + int(rng.poisson(max(0.0, cfg.avg_group_size - 1.0)))
        size = min(size, pool.size)
        chosen: list[int] = []
        available_hub = list(hubs[topic])
        available_pool = list(pool)
        while len(chosen) < size:
            use_hub = available_hub and rng.random() < cfg.overlap_strength
            source = available_hub if use_hub else available_pool
            pick = int(source[rng.integers(len(source))])
            if pick in chosen:
                if use_hub:
                    available_hub.remove(pick)
                else:
                    available_pool.remove(pick)
                continue
            chosen.append(pick)
        memberships.append(sorted(chosen))

    user_item: set[tuple[int, int]] = set()
    for u in range(m):
        count = max(1, int(rng.poisson(cfg.interactions_per_user)))
        for _ in range(count):
            user_item.add((u, pick_item(int(user_topic[u]))))

    group_item: set[tuple[int, int]] = set()
    for g in range(k):
        members = memberships[g]
        # organizer = member with minimal multiplicative hash, a stable
        # pseudo-uniform pick that any holder of the member set can recompute
        organizer = min(members, key=lambda u: (u * 2654435761) % (1 << 32))
        count = max(1, int(rng.poisson(cfg.interactions_per_group)))
        for _ in range(count):
            if cfg.organizer_influence > 0.0 and rng.random() < cfg.organizer_influence:
                group_item.add((g, int(rng.choice(signatures[organizer]))))
            else:
                group_item.add((g, pick_item(g % t)))

    ds = InteractionDataset(
        num_users=m,
        num_items=n,
        num_groups=k,
        social_edges=social,
        user_item=sorted(user_item),
        group_item=sorted(group_item),
        memberships=memberships,
    )
    ds.validate()
    return ds
