"""Typed weighted graph over users, questions and crops, with alias-table neighbor sampling."""
from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .corpus import EntityRef, EventLog, EventType, Kind
from .rng import SplitMix64

KINDS = (Kind.USER, Kind.QUESTION, Kind.CROP)


class Relation(enum.IntEnum):
    ASKED = 0
    ANSWERED = 1
    TAGGED = 2
    INTERESTED = 3

    @property
    def endpoints(self) -> tuple[Kind, Kind]:
        return _ENDPOINTS[self]

    def other(self, kind: Kind) -> Kind:
        a, b = _ENDPOINTS[self]
        if kind is a:
            return b
        if kind is b:
            return a
        raise ValueError(f"{self.name} has no {kind.name} endpoint")


_ENDPOINTS = {
    Relation.ASKED: (Kind.USER, Kind.QUESTION),
    Relation.ANSWERED: (Kind.USER, Kind.QUESTION),
    Relation.TAGGED: (Kind.QUESTION, Kind.CROP),
    Relation.INTERESTED: (Kind.USER, Kind.CROP),
}

_FROM_EVENT = {
    EventType.ASKED: Relation.ASKED,
    EventType.ANSWERED: Relation.ANSWERED,
    EventType.TAGGED: Relation.TAGGED,
    EventType.INTERESTED: Relation.INTERESTED,
}


class NodeRef(NamedTuple):
    kind: Kind
    index: int

    def token(self) -> str:
        return f"{self.kind.value}:{self.index}"

    @classmethod
    def parse(cls, token: str) -> "NodeRef":
        k, _, i = token.partition(":")
        return cls(Kind(k), int(i))


class EmptyWeights(ValueError):
    pass


class NonPositiveWeight(ValueError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"weight at index {index} is not a positive finite number")


@dataclass(frozen=True)
class AliasTable:
    prob: np.ndarray
    alias: np.ndarray

    @property
    def n(self) -> int:
        return len(self.prob)

    def sample(self, rng: SplitMix64) -> int:
        i = rng.below(self.n)
        return i if rng.random() < self.prob[i] else int(self.alias[i])

    def distribution(self) -> np.ndarray:
        """The categorical distribution the table encodes."""
        p = self.prob.astype(float).copy()
        np.add.at(p, self.alias, 1.0 - self.prob)
        return p / self.n


def alias_build(weights: Sequence[float]) -> AliasTable:
    """Vose's alias construction, O(n)."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise EmptyWeights("alias table needs at least one weight")
    bad = np.flatnonzero(~np.isfinite(w) | (w <= 0))
    if bad.size:
        raise NonPositiveWeight(int(bad[0]))
    n = w.size
    scaled = (w * n / math.fsum(w)).tolist()
    prob = [1.0] * n
    alias = list(range(n))
    small = [i for i, p in enumerate(scaled) if p < 1.0]
    large = [i for i, p in enumerate(scaled) if p >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    # leftovers are 1 up to rounding
    return AliasTable(np.array(prob), np.array(alias, dtype=np.int64))


class Hin:
    """Immutable heterogeneous graph.

    Nodes are numbered densely per kind (sorted by external id). Internally
    every node also has a global id (users, then questions, then crops) and
    each relation is stored as CSR over global ids with alias columns laid
    out alongside the neighbor columns.
    """

    def __init__(self, ids: dict[Kind, list[str]], edges: dict[Relation, Counter]):
        self.ids = {k: list(ids.get(k, [])) for k in KINDS}
        self.index = {k: {s: i for i, s in enumerate(v)} for k, v in self.ids.items()}
        self.offset = {}
        off = 0
        for k in KINDS:
            self.offset[k] = off
            off += len(self.ids[k])
        self.n_nodes = off

        n_rel = len(Relation)
        indptr = np.zeros((n_rel, self.n_nodes + 1), dtype=np.int64)
        cols, weights, probs, aliases = [], [], [], []
        base = 0
        for rel in Relation:
            adj: list[list[tuple[int, float]]] = [[] for _ in range(self.n_nodes)]
            for (a, b), w in edges.get(rel, Counter()).items():
                adj[a].append((b, float(w)))
                adj[b].append((a, float(w)))
            for g in range(self.n_nodes):
                row = sorted(adj[g])
                indptr[rel, g] = base
                if row:
                    nbr, wt = zip(*row)
                    table = alias_build(wt)
                    cols.extend(nbr)
                    weights.extend(wt)
                    probs.extend(table.prob.tolist())
                    aliases.extend(table.alias.tolist())
                    base += len(row)
            indptr[rel, self.n_nodes] = base
        self.indptr = indptr
        self.cols = np.array(cols, dtype=np.int64)
        self.weights = np.array(weights, dtype=float)
        self.alias_prob = np.array(probs, dtype=float)
        self.alias_idx = np.array(aliases, dtype=np.int64)
        self.kind_of = np.concatenate(
            [np.full(len(self.ids[k]), i, dtype=np.int64) for i, k in enumerate(KINDS)]
        ) if self.n_nodes else np.zeros(0, dtype=np.int64)

    # -- addressing

    def count(self, kind: Kind) -> int:
        return len(self.ids[kind])

    def gid(self, node: NodeRef) -> int:
        return self.offset[node.kind] + node.index

    def ref(self, gid: int) -> NodeRef:
        kind = KINDS[int(self.kind_of[gid])]
        return NodeRef(kind, int(gid) - self.offset[kind])

    def entity(self, node: NodeRef) -> EntityRef:
        return EntityRef(node.kind, self.ids[node.kind][node.index])

    def lookup(self, kind: Kind, entity_id: str) -> NodeRef | None:
        i = self.index[kind].get(entity_id)
        return None if i is None else NodeRef(kind, i)

    # -- adjacency

    def _span(self, node: NodeRef, rel: Relation) -> tuple[int, int]:
        g = self.gid(node)
        return int(self.indptr[rel, g]), int(self.indptr[rel, g + 1])

    def neighbors(self, node: NodeRef, rel: Relation) -> list[tuple[NodeRef, float]]:
        lo, hi = self._span(node, rel)
        return [(self.ref(int(c)), float(w)) for c, w in zip(self.cols[lo:hi], self.weights[lo:hi])]

    def degree(self, node: NodeRef, rel: Relation) -> int:
        lo, hi = self._span(node, rel)
        return hi - lo

    def alias_table(self, node: NodeRef, rel: Relation) -> AliasTable | None:
        lo, hi = self._span(node, rel)
        if lo == hi:
            return None
        return AliasTable(self.alias_prob[lo:hi], self.alias_idx[lo:hi])

    def edges(self, rel: Relation) -> list[tuple[NodeRef, NodeRef, float]]:
        """Each undirected edge once, listed from its first endpoint kind."""
        src_kind = rel.endpoints[0]
        out = []
        for i in range(self.count(src_kind)):
            a = NodeRef(src_kind, i)
            out.extend((a, b, w) for b, w in self.neighbors(a, rel))
        return out


def build_hin(train: EventLog) -> Hin:
    ids: dict[Kind, set[str]] = {k: set() for k in KINDS}
    for e in train.events:
        if e.user is not None:
            ids[Kind.USER].add(e.user)
        if e.question is not None:
            ids[Kind.QUESTION].add(e.question)
        if e.crop is not None:
            ids[Kind.CROP].add(e.crop)
    sorted_ids = {k: sorted(v) for k, v in ids.items()}
    pos = {k: {s: i for i, s in enumerate(v)} for k, v in sorted_ids.items()}
    off_q = len(sorted_ids[Kind.USER])
    off_c = off_q + len(sorted_ids[Kind.QUESTION])

    def g(kind: Kind, s: str) -> int:
        return {Kind.USER: 0, Kind.QUESTION: off_q, Kind.CROP: off_c}[kind] + pos[kind][s]

    edges: dict[Relation, Counter] = {r: Counter() for r in Relation}
    for e in train.events:
        rel = _FROM_EVENT[e.etype]
        if rel in (Relation.ASKED, Relation.ANSWERED):
            key = (g(Kind.USER, e.user), g(Kind.QUESTION, e.question))
        elif rel is Relation.TAGGED:
            key = (g(Kind.QUESTION, e.question), g(Kind.CROP, e.crop))
        else:
            key = (g(Kind.USER, e.user), g(Kind.CROP, e.crop))
        edges[rel][key] += 1
    return Hin(sorted_ids, edges)


def sample_neighbor(hin: Hin, node: NodeRef, relation: Relation, rng: SplitMix64) -> NodeRef | None:
    lo, hi = hin._span(node, relation)
    if lo == hi:
        return None
    n = hi - lo
    i = rng.below(n)
    if rng.random() >= hin.alias_prob[lo + i]:
        i = int(hin.alias_idx[lo + i])
    return hin.ref(int(hin.cols[lo + i]))
