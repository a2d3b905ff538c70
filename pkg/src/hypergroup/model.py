"""Forward model: user embeddings from the social graph, group embeddings
as hyperedge embeddings over the membership hypergraph, and the two MLP
scoring towers.

A :class:`ForwardPass` owns the neighbor samples of one forward
evaluation: every (entity, layer) pair is sampled exactly once per pass,
shared across all places the entity appears in that pass.  Training runs
a fresh pass per mini-batch; evaluation runs one pass under a fixed seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import numeric as nm
from .errors import CheckpointError, ConfigError, ContractViolation
from .graph import Hypergraph, HyperedgeNeighbor, SocialGraph, sample_neighbors
from .numeric import Tape, Tensor

VARIANTS = ("FULL", "NO_IPM", "NO_HRL", "NO_BOTH", "NO_USER_TASK")

VARIANT_FLAGS = {
    "full": "FULL",
    "s": "NO_IPM",
    "h": "NO_HRL",
    "sh": "NO_BOTH",
    "u": "NO_USER_TASK",
}


def uses_ipm(variant: str) -> bool:
    return variant in ("FULL", "NO_HRL", "NO_USER_TASK")


def uses_hrl(variant: str) -> bool:
    return variant in ("FULL", "NO_IPM", "NO_USER_TASK")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters; fully determines tensor shapes."""

    d: int = 128
    k_ipm: int = 1
    k_hrl: int = 2
    s_ipm: int = 4
    s_hrl: int = 4
    mlp_hidden: tuple[int, ...] | None = None
    dropout: float = 0.1
    residual_w: float = 0.5
    variant: str = "FULL"
    normalize_overlap_weights: bool = False

    def validate(self) -> None:
        if self.d < 1:
            raise ConfigError("embedding dimension must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if uses_ipm(self.variant) and (self.k_ipm < 1 or self.s_ipm < 1):
            raise ConfigError("k_ipm and s_ipm must be >= 1 for the social encoder")
        if uses_hrl(self.variant) and (self.k_hrl < 1 or self.s_hrl < 1):
            raise ConfigError("k_hrl and s_hrl must be >= 1 for the hyperedge encoder")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0.0 <= self.residual_w <= 1.0:
            raise ConfigError("residual_w must lie in [0, 1]")
        for width in self.hidden_widths():
            if width < 1:
                raise ConfigError("mlp hidden widths must be >= 1")

    def hidden_widths(self) -> tuple[int, ...]:
        if self.mlp_hidden is not None:
            return tuple(self.mlp_hidden)
        return (self.d, max(1, self.d // 2))

    def to_dict(self) -> dict:
        blob = asdict(self)
        blob["mlp_hidden"] = list(self.mlp_hidden) if self.mlp_hidden is not None else None
        return blob

    @classmethod
    def from_dict(cls, blob: dict) -> "ModelConfig":
        data = dict(blob)
        if data.get("mlp_hidden") is not None:
            data["mlp_hidden"] = tuple(int(x) for x in data["mlp_hidden"])
        cfg = cls(**data)
        cfg.validate()
        return cfg


def config_hash(cfg: ModelConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class MlpTower:
    """Hidden (weight, bias) layers plus a final projection vector."""

    hidden: list[tuple[Tensor, Tensor]]
    out: Tensor


@dataclass
class ModelParams:
    """All model tensors.  ``node_features`` is frozen; everything else trains."""

    num_users: int
    num_items: int
    node_features: Tensor | None
    user_latent: Tensor
    item_embeddings: Tensor
    ipm_layers: list[Tensor]
    hrl_layers: list[Tensor]
    group_mlp: MlpTower
    user_mlp: MlpTower
    residual_w: float

    def named_tensors(self):
        """All tensors in canonical checkpoint order."""
        if self.node_features is not None:
            yield "node_features", self.node_features
        yield "user_latent", self.user_latent
        yield "item_embeddings", self.item_embeddings
        for i, w in enumerate(self.ipm_layers, start=1):
            yield f"ipm_w{i}", w
        for i, w in enumerate(self.hrl_layers, start=1):
            yield f"hrl_w{i}", w
        for prefix, tower in (("group_mlp", self.group_mlp), ("user_mlp", self.user_mlp)):
            for i, (w, b) in enumerate(tower.hidden, start=1):
                yield f"{prefix}_w{i}", w
                yield f"{prefix}_b{i}", b
            yield f"{prefix}_out", tower.out

    def trainable_tensors(self):
        for name, t in self.named_tensors():
            if t.trainable:
                yield name, t


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _build_tower(cfg: ModelConfig, rng: np.random.Generator) -> MlpTower:
    widths = (2 * cfg.d,) + cfg.hidden_widths()
    hidden = []
    for w_in, w_out in zip(widths, widths[1:]):
        hidden.append(
            (
                Tensor(_glorot(rng, (w_out, w_in)), trainable=True),
                Tensor(np.zeros(w_out), trainable=True),
            )
        )
    out = Tensor(_glorot(rng, (widths[-1],)), trainable=True)
    return MlpTower(hidden=hidden, out=out)


def initialize_params(
    cfg: ModelConfig,
    num_users: int,
    num_items: int,
    rng: np.random.Generator,
    node_features: np.ndarray | None = None,
) -> ModelParams:
    """Glorot-initialized parameters for the configured variant.

    ``node_features`` may supply precomputed frozen input features;
    otherwise they are drawn once here and frozen.
    """
    cfg.validate()
    d = cfg.d
    feats = None
    if uses_ipm(cfg.variant):
        if node_features is not None:
            if node_features.shape != (num_users, d):
                raise ConfigError(
                    f"node features shape {node_features.shape} != ({num_users}, {d})"
                )
            feats = Tensor(np.array(node_features, dtype=np.float64))
        else:
            feats = Tensor(_glorot(rng, (num_users, d)))
    params = ModelParams(
        num_users=num_users,
        num_items=num_items,
        node_features=feats,
        user_latent=Tensor(_glorot(rng, (num_users, d)), trainable=True),
        item_embeddings=Tensor(_glorot(rng, (num_items, d)), trainable=True),
        ipm_layers=[
            Tensor(_glorot(rng, (d, 2 * d)), trainable=True) for _ in range(cfg.k_ipm)
        ]
        if uses_ipm(cfg.variant)
        else [],
        hrl_layers=[
            Tensor(_glorot(rng, (d, 2 * d)), trainable=True) for _ in range(cfg.k_hrl)
        ]
        if uses_hrl(cfg.variant)
        else [],
        group_mlp=_build_tower(cfg, rng),
        user_mlp=_build_tower(cfg, rng),
        residual_w=cfg.residual_w,
    )
    for name, t in params.named_tensors():
        t.name = name
    return params


def save_params(path, params: ModelParams, cfg: ModelConfig, seed: int, extra_meta: dict | None = None) -> None:
    meta = {
        "config": cfg.to_dict(),
        "config_sha256": config_hash(cfg),
        "seed": int(seed),
        "num_users": params.num_users,
        "num_items": params.num_items,
    }
    if extra_meta:
        meta.update(extra_meta)
    nm.save_checkpoint(path, list(params.named_tensors()), meta)


def load_params(path) -> tuple[ModelParams, ModelConfig, dict]:
    """Rebuild params and config from a checkpoint blob."""
    meta, tensors = nm.load_checkpoint(path)
    try:
        cfg = ModelConfig.from_dict(meta["config"])
        num_users = int(meta["num_users"])
        num_items = int(meta["num_items"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"checkpoint {path} has no usable config block: {exc}") from exc

    def take(name: str, shape: tuple[int, ...], trainable: bool = True) -> Tensor:
        if name not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {name!r}")
        arr = tensors.pop(name)
        if arr.shape != shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {arr.shape}, config implies {shape}"
            )
        return Tensor(arr, name=name, trainable=trainable)

    d = cfg.d
    widths = (2 * d,) + cfg.hidden_widths()

    def take_tower(prefix: str) -> MlpTower:
        hidden = []
        for i, (w_in, w_out) in enumerate(zip(widths, widths[1:]), start=1):
            hidden.append((take(f"{prefix}_w{i}", (w_out, w_in)), take(f"{prefix}_b{i}", (w_out,))))
        return MlpTower(hidden=hidden, out=take(f"{prefix}_out", (widths[-1],)))

    params = ModelParams(
        num_users=num_users,
        num_items=num_items,
        node_features=take("node_features", (num_users, d), trainable=False)
        if uses_ipm(cfg.variant)
        else None,
        user_latent=take("user_latent", (num_users, d)),
        item_embeddings=take("item_embeddings", (num_items, d)),
        ipm_layers=[take(f"ipm_w{i}", (d, 2 * d)) for i in range(1, cfg.k_ipm + 1)]
        if uses_ipm(cfg.variant)
        else [],
        hrl_layers=[take(f"hrl_w{i}", (d, 2 * d)) for i in range(1, cfg.k_hrl + 1)]
        if uses_hrl(cfg.variant)
        else [],
        group_mlp=take_tower("group_mlp"),
        user_mlp=take_tower("user_mlp"),
        residual_w=cfg.residual_w,
    )
    if tensors:
        raise CheckpointError(f"checkpoint holds unexpected tensors: {sorted(tensors)}")
    return params, cfg, meta


# ---------------------------------------------------------------------------
# forward pass


class ForwardPass:
    """One forward evaluation over shared neighbor samples.

    Each public method may be called once per instance; build a new pass
    per mini-batch or per evaluation sweep.
    """

    def __init__(
        self,
        params: ModelParams,
        cfg: ModelConfig,
        social: SocialGraph | None,
        hyper: Hypergraph | None,
        rng: np.random.Generator,
        tape: Tape | None = None,
        training: bool = False,
    ):
        self.params = params
        self.cfg = cfg
        self.social = social
        self.hyper = hyper
        self.rng = rng
        self.tape = tape
        self.training = training
        self._used = False

    def _claim(self) -> None:
        if self._used:
            raise ContractViolation("a ForwardPass instance serves a single request")
        self._used = True

    # -- users ------------------------------------------------------------

    def _ipm_forward(self, users: list[int]) -> Tensor:
        """Social-graph embeddings for sorted unique ``users`` (one row each)."""
        cfg, params, tape = self.cfg, self.params, self.tape
        if self.social is None:
            raise ConfigError("social graph required for the social encoder")
        K, S = cfg.k_ipm, cfg.s_ipm
        needed: list[list[int]] = [[] for _ in range(K + 1)]
        samples: list[list[int]] = [[] for _ in range(K + 1)]
        needed[K] = list(users)
        for i in range(K, 0, -1):
            flat: list[int] = []
            for u in needed[i]:
                flat.extend(sample_neighbors(self.social.neighbors(u), u, S, self.rng))
            samples[i] = flat
            needed[i - 1] = sorted(set(needed[i]) | set(flat))

        h = nm.gather_rows(params.node_features, needed[0], tape)
        pos = {u: j for j, u in enumerate(needed[0])}
        for i in range(1, K + 1):
            own = nm.gather_rows(h, [pos[u] for u in needed[i]], tape)
            nbrs = nm.gather_rows(h, [pos[v] for v in samples[i]], tape)
            nbr_mean = nm.mean_rows_stride(nbrs, S, tape)
            pre = nm.linear(params.ipm_layers[i - 1], None, nm.concat(own, nbr_mean, tape), tape)
            h = nm.l2_normalize(nm.relu(pre, tape), tape)
            pos = {u: j for j, u in enumerate(needed[i])}
        return h

    def _member_rows(self, users: list[int]) -> Tensor:
        """Member embeddings for sorted unique ``users``."""
        latent = nm.gather_rows(self.params.user_latent, users, self.tape)
        if not uses_ipm(self.cfg.variant):
            return latent
        z = self._ipm_forward(users)
        return nm.add(z, latent, self.tape)

    def _align(self, rows: Tensor, uniq: list[int], requested) -> Tensor:
        requested = list(requested)
        if requested == uniq:
            return rows
        index = {x: i for i, x in enumerate(uniq)}
        return nm.gather_rows(rows, [index[x] for x in requested], self.tape)

    def ipm_vectors(self, users) -> Tensor:
        """Social-graph user embeddings, one row per requested user."""
        self._claim()
        if not uses_ipm(self.cfg.variant):
            raise ConfigError(f"variant {self.cfg.variant} has no social encoder")
        uniq = sorted(set(users))
        return self._align(self._ipm_forward(uniq), uniq, users)

    def member_vectors(self, users) -> Tensor:
        """Shared user embeddings (social output plus latent rows)."""
        self._claim()
        uniq = sorted(set(users))
        return self._align(self._member_rows(uniq), uniq, users)

    # -- groups -----------------------------------------------------------

    def _group_init_rows(self, groups: list[int], member_rows: Tensor, upos: dict[int, int]) -> Tensor:
        flat: list[int] = []
        seg: list[int] = []
        for j, g in enumerate(groups):
            for u in sorted(self.hyper.incidence[g]):
                flat.append(upos[u])
                seg.append(j)
        rows = nm.gather_rows(member_rows, flat, self.tape)
        return nm.segment_mean(rows, seg, len(groups), self.tape)

    def group_init_vectors(self, groups) -> Tensor:
        """Mean member embedding per requested group."""
        self._claim()
        uniq = sorted(set(groups))
        users = sorted({u for g in uniq for u in self.hyper.incidence[g]})
        member_rows = self._member_rows(users)
        upos = {u: i for i, u in enumerate(users)}
        x = self._group_init_rows(uniq, member_rows, upos)
        return self._align(x, uniq, groups)

    def _hrl_forward(self, groups: list[int]) -> tuple[Tensor, Tensor]:
        """Hyperedge embeddings for sorted unique ``groups``.

        Returns ``(x, z)``: the aggregation-initialized representation and
        the final hyperedge-encoder output, row-aligned with ``groups``.
        """
        cfg, params, tape = self.cfg, self.params, self.tape
        K, S = cfg.k_hrl, cfg.s_hrl
        needed: list[list[int]] = [[] for _ in range(K + 1)]
        sampled: list[list] = [[] for _ in range(K + 1)]
        needed[K] = list(groups)
        for i in range(K, 0, -1):
            layer = []
            nxt = set(needed[i])
            for g in needed[i]:
                pool = self.hyper.neighbors(g)
                if not pool:
                    layer.append(None)
                    continue
                entries = sample_neighbors(pool, g, S, self.rng)
                layer.append(entries)
                nxt.update(e.group for e in entries)
            sampled[i] = layer
            needed[i - 1] = sorted(nxt)

        pairs: dict[tuple[int, int], frozenset[int]] = {}
        for i in range(1, K + 1):
            for g, entries in zip(needed[i], sampled[i]):
                if entries is None:
                    continue
                for e in entries:
                    key = (g, e.group) if g < e.group else (e.group, g)
                    pairs.setdefault(key, e.common_members)
        pair_keys = sorted(pairs)

        base_groups = needed[0]
        users = sorted(
            {u for g in base_groups for u in self.hyper.incidence[g]}
            | {u for key in pair_keys for u in pairs[key]}
        )
        member_rows = self._member_rows(users)
        upos = {u: i for i, u in enumerate(users)}

        x0 = self._group_init_rows(base_groups, member_rows, upos)

        if pair_keys:
            flat: list[int] = []
            seg: list[int] = []
            for j, key in enumerate(pair_keys):
                for u in sorted(pairs[key]):
                    flat.append(upos[u])
                    seg.append(j)
            l_rows = nm.segment_mean(nm.gather_rows(member_rows, flat, tape), seg, len(pair_keys), tape)
        else:
            l_rows = Tensor(np.zeros((1, cfg.d)))
        lpos = {key: i for i, key in enumerate(pair_keys)}

        m = x0
        gpos = {g: j for j, g in enumerate(base_groups)}
        for i in range(1, K + 1):
            cur = needed[i]
            m_idx: list[int] = []
            l_idx: list[int] = []
            weights: list[float] = []
            for g, entries in zip(cur, sampled[i]):
                if entries is None:
                    m_idx.extend([0] * S)
                    l_idx.extend([0] * S)
                    weights.extend([0.0] * S)
                    continue
                block = []
                for e in entries:
                    m_idx.append(gpos[e.group])
                    key = (g, e.group) if g < e.group else (e.group, g)
                    l_idx.append(lpos[key])
                    block.append(float(e.weight))
                if cfg.normalize_overlap_weights:
                    total = sum(block)
                    block = [w / total for w in block]
                weights.extend(block)
            msg = nm.add(nm.gather_rows(m, m_idx, tape), nm.gather_rows(l_rows, l_idx, tape), tape)
            msg = nm.mul_rows(msg, weights, tape)
            agg = nm.sum_rows_stride(msg, S, tape)
            own = nm.gather_rows(m, [gpos[g] for g in cur], tape)
            pre = nm.linear(params.hrl_layers[i - 1], None, nm.concat(own, agg, tape), tape)
            m = nm.l2_normalize(nm.relu(pre, tape), tape)
            gpos = {g: j for j, g in enumerate(cur)}

        if base_groups == list(groups):
            x = x0
        else:
            base_pos = {g: j for j, g in enumerate(base_groups)}
            x = nm.gather_rows(x0, [base_pos[g] for g in groups], tape)
        return x, m

    def hrl_vectors(self, groups) -> tuple[Tensor, Tensor]:
        """Pair of (aggregation-initialized, hyperedge-encoder) group rows."""
        self._claim()
        if not uses_hrl(self.cfg.variant):
            raise ConfigError(f"variant {self.cfg.variant} has no hyperedge encoder")
        uniq = sorted(set(groups))
        x, z = self._hrl_forward(uniq)
        return self._align(x, uniq, groups), self._align(z, uniq, groups)

    def group_vectors(self, groups) -> Tensor:
        """Final group embeddings under the configured variant."""
        self._claim()
        uniq = sorted(set(groups))
        if not uses_hrl(self.cfg.variant):
            users = sorted({u for g in uniq for u in self.hyper.incidence[g]})
            member_rows = self._member_rows(users)
            upos = {u: i for i, u in enumerate(users)}
            emb = self._group_init_rows(uniq, member_rows, upos)
        else:
            x, z = self._hrl_forward(uniq)
            w = self.params.residual_w
            emb = nm.add(nm.scale(z, w, self.tape), nm.scale(x, 1.0 - w, self.tape), self.tape)
        return self._align(emb, uniq, groups)


def mlp_forward(
    tower: MlpTower,
    x: Tensor,
    cfg: ModelConfig,
    rng: np.random.Generator,
    tape: Tape | None = None,
    training: bool = False,
) -> Tensor:
    """Run one scoring tower: hidden relu layers with dropout, then project."""
    h = x
    for w, b in tower.hidden:
        h = nm.relu(nm.linear(w, b, h, tape), tape)
        h = nm.dropout(h, cfg.dropout, rng, training, tape)
    return nm.matvec(h, tower.out, tape)


# ---------------------------------------------------------------------------
# single-entity convenience API (inference mode, no tape)


def ipm_embed(u: int, params: ModelParams, cfg: ModelConfig, social: SocialGraph,
              rng: np.random.Generator) -> np.ndarray:
    """Social-graph embedding of one user."""
    fp = ForwardPass(params, cfg, social, None, rng)
    return fp.ipm_vectors([u]).values[0].copy()


def member_embedding(u: int, params: ModelParams, cfg: ModelConfig, social: SocialGraph | None,
                     rng: np.random.Generator) -> np.ndarray:
    """Shared user embedding: social output plus latent row (variant-gated)."""
    fp = ForwardPass(params, cfg, social, None, rng)
    return fp.member_vectors([u]).values[0].copy()


def group_init(g: int, params: ModelParams, cfg: ModelConfig, social: SocialGraph | None,
               hyper: Hypergraph, rng: np.random.Generator) -> np.ndarray:
    """Mean member embedding of one group."""
    if len(hyper.incidence[g]) == 0:
        raise ContractViolation(f"group {g} has no members")
    fp = ForwardPass(params, cfg, social, hyper, rng)
    return fp.group_init_vectors([g]).values[0].copy()


def common_member_repr(g: int, g2: int, params: ModelParams, cfg: ModelConfig,
                       social: SocialGraph | None, hyper: Hypergraph,
                       rng: np.random.Generator) -> np.ndarray:
    """Mean member embedding over the two groups' shared members."""
    common = hyper.incidence[g] & hyper.incidence[g2]
    if not common:
        raise ContractViolation(f"groups {g} and {g2} share no members")
    fp = ForwardPass(params, cfg, social, hyper, rng)
    rows = fp.member_vectors(sorted(common)).values
    return rows.mean(axis=0)


def hrl_embed(g: int, params: ModelParams, cfg: ModelConfig, social: SocialGraph | None,
              hyper: Hypergraph, rng: np.random.Generator) -> np.ndarray:
    """Hyperedge-encoder embedding of one group."""
    fp = ForwardPass(params, cfg, social, hyper, rng)
    _, z = fp.hrl_vectors([g])
    return z.values[0].copy()


def group_embedding(g: int, params: ModelParams, cfg: ModelConfig, social: SocialGraph | None,
                    hyper: Hypergraph, rng: np.random.Generator) -> np.ndarray:
    """Final group embedding under the configured variant."""
    fp = ForwardPass(params, cfg, social, hyper, rng)
    return fp.group_vectors([g]).values[0].copy()


def score_group(g: int, v: int, params: ModelParams, cfg: ModelConfig,
                social: SocialGraph | None, hyper: Hypergraph,
                rng: np.random.Generator) -> float:
    """Preference score of group ``g`` for item ``v`` (inference mode)."""
    fp = ForwardPass(params, cfg, social, hyper, rng)
    emb = fp.group_vectors([g])
    item = nm.gather_rows(params.item_embeddings, [v])
    x = nm.concat(emb, item)
    return float(mlp_forward(params.group_mlp, x, cfg, rng).values[0])


def score_user(u: int, v: int, params: ModelParams, cfg: ModelConfig,
               social: SocialGraph | None, rng: np.random.Generator) -> float:
    """Preference score of user ``u`` for item ``v`` (inference mode)."""
    fp = ForwardPass(params, cfg, social, None, rng)
    emb = fp.member_vectors([u])
    item = nm.gather_rows(params.item_embeddings, [v])
    x = nm.concat(emb, item)
    return float(mlp_forward(params.user_mlp, x, cfg, rng).values[0])


# ---------------------------------------------------------------------------
# ad-hoc groups


class TransientHypergraphView:
    """A hypergraph with one extra hyperedge spliced in asymmetrically.

    The transient edge sees existing groups that share members with it;
    existing groups keep their original neighborhoods, so their
    representations match the pristine model.
    """

    def __init__(self, base: Hypergraph, members):
        member_set = frozenset(members)
        self.transient_index = base.num_groups
        self.incidence = list(base.incidence) + [member_set]
        self._base = base
        pool = []
        for g, inc in enumerate(base.incidence):
            common = inc & member_set
            if common:
                pool.append(HyperedgeNeighbor(group=g, weight=len(common),
                                              common_members=frozenset(common)))
        self._pool = pool

    @property
    def has_known_neighbors(self) -> bool:
        return bool(self._pool)

    def neighbors(self, g: int):
        if g == self.transient_index:
            return self._pool
        return self._base.neighbors(g)


def find_exact_group(hyper: Hypergraph, members) -> int | None:
    """Index of an existing group with exactly this member set, if any."""
    member_set = frozenset(members)
    for g, inc in enumerate(hyper.incidence):
        if inc == member_set:
            return g
    return None


def transient_group_embedding(members, params: ModelParams, cfg: ModelConfig,
                              social: SocialGraph | None, hyper: Hypergraph,
                              rng: np.random.Generator) -> np.ndarray:
    """Embedding for an ad-hoc member set.

    A member set matching an existing group exactly reuses that group's
    standard pathway.  Otherwise the hyperedge encoder runs only when the
    set shares members with known groups; an unconnected set falls back to
    the plain member average.
    """
    if not members:
        raise ContractViolation("a transient group needs at least one member")
    exact = find_exact_group(hyper, members)
    if exact is not None:
        return group_embedding(exact, params, cfg, social, hyper, rng)
    view = TransientHypergraphView(hyper, members)
    if not uses_hrl(cfg.variant) or not view.has_known_neighbors:
        fp = ForwardPass(params, cfg, social, view, rng)
        return fp.member_vectors(sorted(set(members))).values.mean(axis=0)
    fp = ForwardPass(params, cfg, social, view, rng)
    return fp.group_vectors([view.transient_index]).values[0].copy()


def score_items_for_embedding(entity_emb: np.ndarray, params: ModelParams,
                              tower: MlpTower, cfg: ModelConfig) -> np.ndarray:
    """Inference scores of one entity embedding against every item."""
    items = params.item_embeddings.values
    x = np.concatenate([np.tile(entity_emb, (items.shape[0], 1)), items], axis=1)
    unused_rng = np.random.default_rng(0)
    return mlp_forward(tower, Tensor(x), cfg, unused_rng, tape=None, training=False).values
