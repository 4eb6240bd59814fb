"""Metapath-constrained random walks over a :class:`~qroute.hin.Hin`."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Iterator

import numpy as np
from numba import njit

from .corpus import Kind
from .hin import Hin, NodeRef, Relation, sample_neighbor
from .rng import SplitMix64, mix_seed, nb_below, nb_mix_seed, nb_random

U, Q, C = Kind.USER, Kind.QUESTION, Kind.CROP


class InvalidMetapath(ValueError):
    pass


class NoValidStartNodes(ValueError):
    pass


@dataclass(frozen=True)
class MetapathStep:
    relation: Relation
    target_kind: Kind

    def __post_init__(self):
        if self.target_kind not in self.relation.endpoints:
            raise InvalidMetapath(f"{self.target_kind.name} is not an endpoint of {self.relation.name}")


@dataclass(frozen=True)
class Metapath:
    start_kind: Kind
    steps: tuple[MetapathStep, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise InvalidMetapath("metapath needs at least one step")
        kind = self.start_kind
        for step in self.steps:
            if kind not in step.relation.endpoints or step.relation.other(kind) is not step.target_kind:
                raise InvalidMetapath(
                    f"{step.relation.name} does not lead from {kind.name} to {step.target_kind.name}"
                )
            kind = step.target_kind
        if kind is not self.start_kind:
            raise InvalidMetapath("metapath must end on its start kind")

    def kinds(self, length: int) -> list[Kind]:
        """Node kinds visited by a full walk of ``length`` nodes."""
        out = [self.start_kind]
        while len(out) < length:
            out.append(self.steps[(len(out) - 1) % len(self.steps)].target_kind)
        return out

    def __str__(self) -> str:
        parts = [self.start_kind.value.upper()]
        for s in self.steps:
            parts.append(f"-{s.relation.name.lower()}-{s.target_kind.value.upper()}")
        return "".join(parts)

    @classmethod
    def parse(cls, text: str) -> "Metapath":
        """Inverse of ``str``: ``U-answered-Q-answered-U``."""
        parts = text.strip().split("-")
        if len(parts) < 3 or len(parts) % 2 == 0:
            raise InvalidMetapath(f"cannot parse metapath {text!r}")
        try:
            start = Kind(parts[0].lower())
            steps = [MetapathStep(Relation[r.upper()], Kind(k.lower()))
                     for r, k in zip(parts[1::2], parts[2::2])]
        except (KeyError, ValueError):
            raise InvalidMetapath(f"cannot parse metapath {text!r}") from None
        return cls(start, tuple(steps))


def _path(start: Kind, *steps: tuple[Relation, Kind]) -> Metapath:
    return Metapath(start, tuple(MetapathStep(r, k) for r, k in steps))


def default_metapaths() -> list[Metapath]:
    A, R, T, I = Relation.ANSWERED, Relation.ASKED, Relation.TAGGED, Relation.INTERESTED
    return [
        _path(U, (A, Q), (A, U)),
        _path(U, (A, Q), (T, C), (T, Q), (A, U)),
        _path(U, (I, C), (I, U)),
        _path(Q, (R, U), (A, Q)),
    ]


@dataclass(frozen=True)
class WalkConfig:
    metapaths: tuple[Metapath, ...] = field(default_factory=lambda: tuple(default_metapaths()))
    walks_per_node: int = 10
    walk_length: int = 40
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "metapaths", tuple(self.metapaths))
        if not self.metapaths:
            raise ValueError("need at least one metapath")
        if self.walks_per_node < 1:
            raise ValueError("walks_per_node must be positive")
        if self.walk_length < 2:
            raise ValueError("walk_length must be at least 2")


@dataclass
class WalkCorpus:
    """Walks stored flat as global node ids with per-walk offsets."""

    hin: Hin
    tokens: np.ndarray
    offsets: np.ndarray
    path_ids: np.ndarray
    metapaths: tuple[Metapath, ...] = ()

    def __len__(self) -> int:
        return len(self.offsets) - 1

    def walk_gids(self, i: int) -> np.ndarray:
        return self.tokens[self.offsets[i]:self.offsets[i + 1]]

    def walk(self, i: int) -> list[NodeRef]:
        return [self.hin.ref(int(g)) for g in self.walk_gids(i)]

    def __iter__(self) -> Iterator[list[NodeRef]]:
        return (self.walk(i) for i in range(len(self)))

    def dump(self, out: IO[str]) -> None:
        for i in range(len(self)):
            out.write(" ".join(self.hin.ref(int(g)).token() for g in self.walk_gids(i)) + "\n")


@njit(cache=True, nogil=True)
def _walk_kernel(indptr, cols, alias_prob, alias_idx, start_gids, rels,
                 seed, path_index, walks_per_node, walk_length):
    n_start = start_gids.shape[0]
    n_walks = n_start * walks_per_node
    out = np.empty(n_walks * walk_length, dtype=np.int64)
    lengths = np.empty(n_walks, dtype=np.int64)
    st = np.empty(1, dtype=np.uint64)
    n_steps = rels.shape[0]
    w = 0
    for s in range(n_start):
        for rep in range(walks_per_node):
            st[0] = nb_mix_seed(seed, np.uint64(path_index), np.uint64(s), np.uint64(rep))
            base = w * walk_length
            cur = start_gids[s]
            out[base] = cur
            length = 1
            while length < walk_length:
                rel = rels[(length - 1) % n_steps]
                lo = indptr[rel, cur]
                hi = indptr[rel, cur + 1]
                if lo == hi:
                    break
                i = nb_below(st, hi - lo)
                if nb_random(st) >= alias_prob[lo + i]:
                    i = alias_idx[lo + i]
                cur = cols[lo + i]
                out[base + length] = cur
                length += 1
            lengths[w] = length
            w += 1
    return out, lengths


def generate_walks(hin: Hin, cfg: WalkConfig) -> WalkCorpus:
    _check_starts(hin, cfg)
    chunks, lens, pids = [], [], []
    for m, path in enumerate(cfg.metapaths):
        k = path.start_kind
        starts = np.arange(hin.count(k), dtype=np.int64) + hin.offset[k]
        rels = np.array([int(s.relation) for s in path.steps], dtype=np.int64)
        flat, lengths = _walk_kernel(hin.indptr, hin.cols, hin.alias_prob, hin.alias_idx,
                                     starts, rels, np.uint64(cfg.seed), m,
                                     cfg.walks_per_node, cfg.walk_length)
        flat = flat.reshape(-1, cfg.walk_length)
        keep = lengths >= 2
        for row, n in zip(flat[keep], lengths[keep]):
            chunks.append(row[:n])
        lens.append(lengths[keep])
        pids.append(np.full(int(keep.sum()), m, dtype=np.int64))
    return _assemble(hin, cfg, chunks, lens, pids)


def generate_walks_reference(hin: Hin, cfg: WalkConfig) -> WalkCorpus:
    """Straight-line walker built on :func:`sample_neighbor`; slow, for cross-checks."""
    _check_starts(hin, cfg)
    chunks, lens, pids = [], [], []
    for m, path in enumerate(cfg.metapaths):
        for s in range(hin.count(path.start_kind)):
            for rep in range(cfg.walks_per_node):
                rng = SplitMix64(mix_seed(cfg.seed, m, s, rep))
                node = NodeRef(path.start_kind, s)
                walk = [node]
                while len(walk) < cfg.walk_length:
                    step = path.steps[(len(walk) - 1) % len(path.steps)]
                    node = sample_neighbor(hin, node, step.relation, rng)
                    if node is None:
                        break
                    walk.append(node)
                if len(walk) >= 2:
                    chunks.append(np.array([hin.gid(n) for n in walk], dtype=np.int64))
                    lens.append(np.array([len(walk)]))
                    pids.append(np.array([m]))
    return _assemble(hin, cfg, chunks, lens, pids)


def _check_starts(hin: Hin, cfg: WalkConfig) -> None:
    for path in cfg.metapaths:
        if hin.count(path.start_kind) == 0:
            raise NoValidStartNodes(f"no {path.start_kind.name} nodes to start {path}")


def _assemble(hin, cfg, chunks, lens, pids) -> WalkCorpus:
    lengths = np.concatenate(lens) if lens else np.zeros(0, dtype=np.int64)
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    tokens = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    path_ids = np.concatenate(pids) if pids else np.zeros(0, dtype=np.int64)
    return WalkCorpus(hin, tokens.astype(np.int64), offsets, path_ids.astype(np.int64), cfg.metapaths)
