"""Bipartite user/claim interaction graph and its normalized adjacency."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

NEGATIVE_RELATIONS = frozenset({"nay", "no", "against", "disagree"})


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Relation:
    name: str
    valence: str = "positive"


@dataclass
class Bhin:
    """Users occupy node indices [0, n_users), claims [n_users, N)."""

    user_ids: list
    claim_ids: list
    relations: list
    edges: list  # (user_idx, claim_idx, relation_idx, weight)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_claims(self) -> int:
        return len(self.claim_ids)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_claims

    @property
    def node_ids(self) -> list:
        return list(self.user_ids) + list(self.claim_ids)

    def node_type(self, index: int) -> str:
        return "user" if index < self.n_users else "claim"

    def node_index(self, node_id: str, kind: str | None = None) -> int:
        if kind in (None, "user") and node_id in self._user_pos:
            return self._user_pos[node_id]
        if kind in (None, "claim") and node_id in self._claim_pos:
            return self.n_users + self._claim_pos[node_id]
        raise KeyError(node_id)

    def __post_init__(self):
        self._user_pos = {u: i for i, u in enumerate(self.user_ids)}
        self._claim_pos = {c: i for i, c in enumerate(self.claim_ids)}


@dataclass
class NormalizedGraph:
    bhin: Bhin
    adjacency: list  # per-relation normalized CSR, N x N
    target: sp.csr_matrix  # binary reconstruction target incl. self-loops
    n_positive: int = field(init=False)  # distinct undirected edges, self-loops excluded

    def __post_init__(self):
        self.n_positive = int((self.target.nnz - self.target.diagonal().astype(bool).sum()) // 2)

    @property
    def n_nodes(self) -> int:
        return self.target.shape[0]

    @property
    def n_relations(self) -> int:
        return len(self.adjacency)


def _valence(name: str) -> str:
    return "negative" if name.lower() in NEGATIVE_RELATIONS else "positive"


def build_bhin(records, min_degree: int = 1, relations=None) -> Bhin:
    """Index users/claims in first-seen order, merge duplicates, prune low-degree nodes.

    ``records`` are objects with ``user_id``, ``claim_id``, ``relation`` and
    ``weight`` attributes. Pruning repeats until every surviving node has
    total degree (distinct incident edges) >= ``min_degree``.
    """
    merged = defaultdict(float)
    rel_order = list(relations) if relations is not None else []
    for rec in records:
        if not rec.user_id or not rec.claim_id:
            raise DataError("record with empty user or claim id")
        if rec.weight < 0 or not np.isfinite(rec.weight):
            raise DataError(f"invalid weight {rec.weight} for ({rec.user_id}, {rec.claim_id})")
        if rec.relation not in rel_order:
            if relations is not None:
                raise DataError(f"unknown relation {rec.relation!r}")
            rel_order.append(rec.relation)
        merged[(rec.user_id, rec.claim_id, rec.relation)] += rec.weight

    keys = list(merged)
    alive = set(keys)
    while True:
        deg = defaultdict(int)
        for u, c, _ in alive:
            deg[("u", u)] += 1
            deg[("c", c)] += 1
        dropped = {k for k in alive
                   if deg[("u", k[0])] < min_degree or deg[("c", k[1])] < min_degree}
        if not dropped:
            break
        alive -= dropped
    if not alive:
        raise DataError("graph is empty after filtering")

    users, claims = {}, {}
    edges = []
    for key in keys:
        if key not in alive:
            continue
        u, c, r = key
        ui = users.setdefault(u, len(users))
        ci = claims.setdefault(c, len(claims))
        edges.append((ui, ci, rel_order.index(r), merged[key]))
    used = sorted({e[2] for e in edges})
    if relations is None and len(used) != len(rel_order):
        remap = {old: new for new, old in enumerate(used)}
        rel_order = [rel_order[i] for i in used]
        edges = [(u, c, remap[r], w) for u, c, r, w in edges]
    return Bhin(
        user_ids=list(users),
        claim_ids=list(claims),
        relations=[Relation(name, _valence(name)) for name in rel_order],
        edges=edges,
    )


def normalize_adjacency(adj: sp.spmatrix) -> sp.csr_matrix:
    """D^-1/2 A D^-1/2 with D the row sums of A."""
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    coo = sp.coo_matrix(adj)
    # a_ij * (s_i * s_j): the scalar product commutes, so the result is exactly symmetric
    data = coo.data * (inv_sqrt[coo.row] * inv_sqrt[coo.col])
    out = sp.csr_matrix((data, (coo.row, coo.col)), shape=adj.shape)
    out.sort_indices()
    return out


def normalize(bhin: Bhin, exclude_from_target=()) -> NormalizedGraph:
    """Per-relation self-looped normalized adjacency plus the binary union target."""
    n = bhin.n_nodes
    if n == 0:
        raise DataError("empty graph")
    offset = bhin.n_users
    eye = sp.identity(n, format="csr", dtype=np.float64)
    excluded = set(exclude_from_target)
    names = [r.name for r in bhin.relations]
    unknown = excluded - set(names)
    if unknown:
        raise DataError(f"cannot exclude unknown relations {sorted(unknown)}")

    adjacency = []
    target = eye.copy()
    for r, name in enumerate(names):
        sel = [(u, c + offset, w) for u, c, rr, w in bhin.edges if rr == r]
        if sel:
            rows, cols, vals = map(np.asarray, zip(*sel))
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        half = sp.csr_matrix((vals.astype(np.float64), (rows, cols)), shape=(n, n))
        a = (half + half.T + eye).tocsr()
        adjacency.append(normalize_adjacency(a))
        if name not in excluded:
            pos = (half + half.T).tocsr()
            pos.data = (pos.data > 0).astype(np.float64)
            target = target + pos
    target = target.tocsr()
    target.data = (target.data > 0).astype(np.float64)
    target.eliminate_zeros()
    target.sort_indices()
    return NormalizedGraph(bhin=bhin, adjacency=adjacency, target=target)


def projection_graphs(bhin: Bhin) -> tuple[Bhin, Bhin]:
    """User-user and claim-claim co-action graphs for the separate-learning ablation.

    Two users are linked with weight equal to the number of distinct claims
    both acted on (any relation); claims symmetrically. Each projection is
    returned as a Bhin whose "users" are the projected nodes and whose
    "claims" are empty, edges living in ``edges`` as (i, j, 0, w) with i < j.
    """
    user_claims = defaultdict(set)
    claim_users = defaultdict(set)
    for u, c, _, w in bhin.edges:
        if w > 0:
            user_claims[u].add(c)
            claim_users[c].add(u)

    def project(n, neighbours):
        edges = []
        for i in range(n):
            for j in range(i + 1, n):
                k = len(neighbours[i] & neighbours[j])
                if k:
                    edges.append((i, j, 0, float(k)))
        return edges

    users = Bhin(list(bhin.user_ids), [], [Relation("co-action")],
                 project(bhin.n_users, user_claims))
    claims = Bhin(list(bhin.claim_ids), [], [Relation("co-action")],
                  project(bhin.n_claims, claim_users))
    return users, claims


def normalize_unipartite(g: Bhin) -> NormalizedGraph:
    """Normalize a projection graph whose edges index the ``user_ids`` list directly."""
    n = g.n_nodes
    eye = sp.identity(n, format="csr", dtype=np.float64)
    if g.edges:
        rows, cols, _, vals = map(np.asarray, zip(*g.edges))
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    half = sp.csr_matrix((vals.astype(np.float64), (rows, cols)), shape=(n, n))
    a = (half + half.T + eye).tocsr()
    target = a.copy()
    target.data = (target.data > 0).astype(np.float64)
    target.sort_indices()
    return NormalizedGraph(bhin=g, adjacency=[normalize_adjacency(a)], target=target)
