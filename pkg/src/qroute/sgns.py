"""Skip-gram with negative sampling over metapath walk corpora."""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import IO, Callable, Sequence

import numpy as np
from numba import njit

from .hin import KINDS, Hin, NodeRef, alias_build
from .rng import SplitMix64, mix_seed, nb_below, nb_random, state_array
from .walker import WalkCorpus

CLAMP = 30.0
LR_FLOOR = 1e-4
MAX_REDRAWS = 10


class EmptyCorpus(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 128
    window: int = 5
    negatives: int = 5
    lr0: float = 0.025
    epochs: int = 5
    noise_power: float = 0.75
    kind_aware_negatives: bool = True
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("dim", "window", "negatives", "epochs", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")


# ------------------------------------------------------------ loss / gradient


def _sigmoid(x: float) -> float:
    x = min(max(x, -CLAMP), CLAMP)
    return 1.0 / (1.0 + math.exp(-x))


def _check_dims(u, v, negs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    negs = np.asarray(negs, dtype=float).reshape(-1, u.shape[0]) if len(negs) else np.zeros((0, u.shape[0]))
    if u.shape != v.shape or negs.shape[1] != u.shape[0]:
        raise DimensionMismatch("center, context and negative vectors must share one dimension")
    return u, v, negs


def sgns_pair_loss(u_center, v_context, negs=()) -> float:
    """-log s(u.v) - sum_j log s(-u.n_j), arguments clamped to [-30, 30]."""
    if len(negs) and any(len(n) != len(u_center) for n in negs):
        raise DimensionMismatch("negative vector dimension differs")
    u, v, negs = _check_dims(u_center, v_context, negs)
    loss = -math.log(_sigmoid(float(u @ v)))
    for n in negs:
        loss -= math.log(_sigmoid(-float(u @ n)))
    return loss


def sgns_pair_grad(u_center, v_context, negs=()):
    """Analytic gradients of :func:`sgns_pair_loss` w.r.t. u, v and each negative."""
    if len(negs) and any(len(n) != len(u_center) for n in negs):
        raise DimensionMismatch("negative vector dimension differs")
    u, v, negs = _check_dims(u_center, v_context, negs)
    g = _sigmoid(float(u @ v)) - 1.0
    grad_u = g * v
    grad_negs = np.empty_like(negs)
    for j, n in enumerate(negs):
        s = _sigmoid(float(u @ n))
        grad_u = grad_u + s * n
        grad_negs[j] = s * u
    return grad_u, g * u, grad_negs


# ------------------------------------------------------------ vocabulary


@dataclass
class NoiseTable:
    """Alias tables over vocabulary rows, one per node kind and one global.

    Table t spans ``lo[t]:hi[t]`` of the flat arrays; table 3 is global.
    """

    lo: np.ndarray
    hi: np.ndarray
    members: np.ndarray
    prob: np.ndarray
    alias: np.ndarray
    probabilities: list[np.ndarray] = field(default_factory=list)

    GLOBAL = 3


@dataclass
class Vocab:
    gids: np.ndarray          # row -> global node id
    freq: np.ndarray          # row -> occurrence count
    kinds: np.ndarray         # row -> kind ordinal
    row_of: dict[int, int]
    noise: NoiseTable


def build_vocab(corpus: WalkCorpus, noise_power: float = 0.75) -> Vocab:
    if len(corpus) == 0:
        raise EmptyCorpus("walk corpus is empty")
    gids, freq = np.unique(corpus.tokens, return_counts=True)
    kinds = corpus.hin.kind_of[gids]
    weights = freq.astype(float) ** noise_power
    lo, hi, members, prob, alias, dists = [], [], [], [], [], []
    pos = 0
    for t in range(len(KINDS) + 1):
        rows = np.flatnonzero(kinds == t) if t < len(KINDS) else np.arange(len(gids))
        lo.append(pos)
        if rows.size:
            table = alias_build(weights[rows])
            members.append(rows)
            prob.append(table.prob)
            alias.append(table.alias)
            dists.append(weights[rows] / weights[rows].sum())
            pos += rows.size
        else:
            dists.append(np.zeros(0))
        hi.append(pos)
    cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt)
    noise = NoiseTable(np.array(lo, dtype=np.int64), np.array(hi, dtype=np.int64),
                       cat(members, np.int64), cat(prob, float), cat(alias, np.int64), dists)
    row_of = {int(g): i for i, g in enumerate(gids)}
    return Vocab(gids.astype(np.int64), freq.astype(np.int64), kinds.astype(np.int64), row_of, noise)


def frequencies(corpus: WalkCorpus) -> dict[NodeRef, int]:
    vocab = build_vocab(corpus)
    return {corpus.hin.ref(int(g)): int(f) for g, f in zip(vocab.gids, vocab.freq)}


# ------------------------------------------------------------ embedding table


@dataclass
class EmbeddingTable:
    dim: int
    nodes: list[NodeRef]
    center: np.ndarray
    context: np.ndarray | None = None
    hin: Hin | None = None
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.row = {n: i for i, n in enumerate(self.nodes)}

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node: NodeRef) -> bool:
        return node in self.row

    def vector(self, node: NodeRef) -> np.ndarray | None:
        i = self.row.get(node)
        return None if i is None else self.center[i]

    def entity_vector(self, kind, entity_id: str) -> np.ndarray | None:
        if self.hin is None:
            raise ValueError("embedding table is not attached to a graph")
        node = self.hin.lookup(kind, entity_id)
        return None if node is None else self.vector(node)


def write_embeddings(emb: EmbeddingTable, out: IO[str], dump_context: bool = False) -> None:
    out.write(f"{len(emb)} {emb.dim}\n")
    _write_rows(out, emb.nodes, emb.center)
    if dump_context and emb.context is not None:
        out.write("#context\n")
        _write_rows(out, emb.nodes, emb.context)


def _write_rows(out, nodes, table) -> None:
    for node, vec in zip(nodes, table):
        out.write(node.token() + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def read_embeddings(source: IO[str], hin: Hin | None = None) -> EmbeddingTable:
    header = source.readline().split()
    if len(header) != 2:
        raise ValueError("embedding file must start with 'N d'")
    n, dim = int(header[0]), int(header[1])
    sections: list[list[str]] = [[]]
    for line in source:
        line = line.rstrip("\n")
        if line == "#context":
            sections.append([])
        elif line:
            sections[-1].append(line)

    def parse(lines):
        nodes, rows = [], []
        for line in lines:
            tok, *vals = line.split(" ")
            if len(vals) != dim:
                raise DimensionMismatch(f"row {tok} has {len(vals)} values, expected {dim}")
            nodes.append(NodeRef.parse(tok))
            rows.append([float(v) for v in vals])
        return nodes, np.array(rows, dtype=float).reshape(len(rows), dim)

    nodes, center = parse(sections[0])
    if len(nodes) != n:
        raise ValueError(f"header promises {n} rows, found {len(nodes)}")
    context = parse(sections[1])[1] if len(sections) > 1 else None
    return EmbeddingTable(dim, nodes, center, context, hin)


# ------------------------------------------------------------ training


@njit(cache=True, nogil=True)
def _draw_noise(st, t, lo, hi, members, prob, alias):
    base = lo[t]
    n = hi[t] - base
    i = nb_below(st, n)
    if nb_random(st) >= prob[base + i]:
        i = alias[base + i]
    return members[base + i]


@njit(cache=True, nogil=True)
def _sigmoid_nb(x):
    if x > 30.0:
        x = 30.0
    elif x < -30.0:
        x = -30.0
    return 1.0 / (1.0 + np.exp(-x))


@njit(cache=True, nogil=True, fastmath=True)
def _sgns_epoch(tokens, offsets, walk_lo, walk_hi, row_kind, center, context,
                noise_lo, noise_hi, noise_members, noise_prob, noise_alias,
                kind_aware, window, negatives, lr0, total, processed, st, counters):
    dim = center.shape[1]
    negs = np.empty(negatives, dtype=np.int64)
    sn = np.empty(negatives)
    grad_u = np.empty(dim)
    for w in range(walk_lo, walk_hi):
        a = offsets[w]
        b = offsets[w + 1]
        for i in range(a, b):
            frac = 1.0 - processed / total
            if frac < LR_FLOOR:
                frac = LR_FLOOR
            lr = lr0 * frac
            span = 1 + nb_below(st, window)
            cen = tokens[i]
            for j in range(max(a, i - span), min(b, i + span + 1)):
                if j == i:
                    continue
                ctx = tokens[j]
                t = row_kind[ctx] if kind_aware else 3
                n_neg = 0
                for _ in range(negatives):
                    for _attempt in range(MAX_REDRAWS + 1):
                        cand = _draw_noise(st, t, noise_lo, noise_hi, noise_members, noise_prob, noise_alias)
                        if cand != ctx:
                            negs[n_neg] = cand
                            n_neg += 1
                            counters[0] += 1
                            if row_kind[cand] != row_kind[ctx]:
                                counters[1] += 1
                            break
                    else:
                        counters[2] += 1
                # all gradients from pre-step values
                u = center[cen]
                v = context[ctx]
                dot = 0.0
                for d in range(dim):
                    dot += u[d] * v[d]
                g = _sigmoid_nb(dot) - 1.0
                for d in range(dim):
                    grad_u[d] = g * v[d]
                for k in range(n_neg):
                    nv = context[negs[k]]
                    dn = 0.0
                    for d in range(dim):
                        dn += u[d] * nv[d]
                    s = _sigmoid_nb(dn)
                    sn[k] = s
                    for d in range(dim):
                        grad_u[d] += s * nv[d]
                step = lr * g
                for d in range(dim):
                    v[d] -= step * u[d]
                for k in range(n_neg):
                    nv = context[negs[k]]
                    step = lr * sn[k]
                    for d in range(dim):
                        nv[d] -= step * u[d]
                for d in range(dim):
                    u[d] -= lr * grad_u[d]
            processed += 1
    return processed


def _sgns_epoch_reference(tokens, offsets, row_kind, center, context, noise: NoiseTable,
                          cfg: TrainConfig, total, processed, rng: SplitMix64, negative_log=None):
    """Pure-Python epoch mirroring the compiled kernel draw for draw."""

    def draw(t):
        base = int(noise.lo[t])
        i = rng.below(int(noise.hi[t]) - base)
        if rng.random() >= noise.prob[base + i]:
            i = int(noise.alias[base + i])
        return int(noise.members[base + i])

    for w in range(len(offsets) - 1):
        a, b = int(offsets[w]), int(offsets[w + 1])
        for i in range(a, b):
            lr = cfg.lr0 * max(1.0 - processed / total, LR_FLOOR)
            span = 1 + rng.below(cfg.window)
            cen = int(tokens[i])
            for j in range(max(a, i - span), min(b, i + span + 1)):
                if j == i:
                    continue
                ctx = int(tokens[j])
                t = int(row_kind[ctx]) if cfg.kind_aware_negatives else NoiseTable.GLOBAL
                negs = []
                for _ in range(cfg.negatives):
                    for _attempt in range(MAX_REDRAWS + 1):
                        cand = draw(t)
                        if cand != ctx:
                            negs.append(cand)
                            break
                if negative_log is not None:
                    negative_log.append((ctx, tuple(negs)))
                gu, gv, gn = sgns_pair_grad(center[cen], context[ctx], context[negs])
                context[ctx] -= lr * gv
                for k, nk in enumerate(negs):
                    context[nk] -= lr * gn[k]
                center[cen] -= lr * gu
            processed += 1
    return processed


def _rows(corpus: WalkCorpus, vocab: Vocab) -> np.ndarray:
    lut = np.full(corpus.hin.n_nodes, -1, dtype=np.int64)
    lut[vocab.gids] = np.arange(len(vocab.gids))
    return lut[corpus.tokens]


def init_tables(n: int, dim: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = SplitMix64(mix_seed(seed, 0))
    center = np.array([rng.random() for _ in range(n * dim)]).reshape(n, dim)
    center = (center - 0.5) / dim
    return center, np.zeros((n, dim))


def train(corpus: WalkCorpus, cfg: TrainConfig,
          on_epoch: Callable[[int, EmbeddingTable], None] | None = None,
          reference: bool = False) -> EmbeddingTable:
    """Train center/context tables; ``reference`` swaps in the pure-Python epoch."""
    vocab = build_vocab(corpus, cfg.noise_power)
    tokens = _rows(corpus, vocab)
    offsets = corpus.offsets
    center, context = init_tables(len(vocab.gids), cfg.dim, cfg.seed)
    nodes = [corpus.hin.ref(int(g)) for g in vocab.gids]
    emb = EmbeddingTable(cfg.dim, nodes, center, context, corpus.hin)
    nz = vocab.noise
    counters = np.zeros(3, dtype=np.int64)

    n_walks = len(offsets) - 1
    workers = 1 if reference else min(cfg.workers, max(1, n_walks))
    bounds = np.linspace(0, n_walks, workers + 1).astype(np.int64)
    shares = [(int(bounds[w]), int(bounds[w + 1])) for w in range(workers)]
    totals = [max(1, cfg.epochs * int(offsets[hi] - offsets[lo])) for lo, hi in shares]
    processed = [0] * workers
    neg_log = [] if reference else None

    for epoch in range(cfg.epochs):
        if reference:
            rng = SplitMix64(mix_seed(cfg.seed, 1, epoch, 0))
            processed[0] = _sgns_epoch_reference(tokens, offsets, vocab.kinds, center, context, nz,
                                                 cfg, totals[0], processed[0], rng, neg_log)
        else:
            def run(w):
                st = state_array(mix_seed(cfg.seed, 1, epoch, w))
                local = np.zeros(3, dtype=np.int64)
                processed[w] = _sgns_epoch(
                    tokens, offsets, shares[w][0], shares[w][1], vocab.kinds, center, context,
                    nz.lo, nz.hi, nz.members, nz.prob, nz.alias,
                    cfg.kind_aware_negatives, cfg.window, cfg.negatives, cfg.lr0,
                    float(totals[w]), processed[w], st, local)
                counters[:] += local

            if workers == 1:
                run(0)
            else:
                threads = [threading.Thread(target=run, args=(w,)) for w in range(workers)]
                for t in threads:
                    t.start()
                for t in threads:
                    t.join()
        if on_epoch is not None:
            on_epoch(epoch, emb)

    if neg_log is not None:
        emb.stats["negative_log"] = neg_log
    else:
        emb.stats.update(negatives=int(counters[0]), kind_mismatches=int(counters[1]),
                         skipped=int(counters[2]))
    return emb


# ------------------------------------------------------------ loss probes


@dataclass(frozen=True)
class ProbeSet:
    centers: list[NodeRef]
    contexts: list[NodeRef]
    negatives: list[tuple[NodeRef, ...]]


def make_probe_set(corpus: WalkCorpus, cfg: TrainConfig, n: int = 1000, seed: int = 0) -> ProbeSet:
    """Fixed (center, context, negatives) triples sampled from the corpus."""
    vocab = build_vocab(corpus, cfg.noise_power)
    nz = vocab.noise
    rng = SplitMix64(mix_seed(seed, 7))
    hin = corpus.hin
    centers, contexts, negatives = [], [], []
    while len(centers) < n:
        w = rng.below(len(corpus))
        walk = corpus.walk_gids(w)
        i = rng.below(len(walk))
        span = 1 + rng.below(cfg.window)
        lo, hi = max(0, i - span), min(len(walk), i + span + 1)
        js = [j for j in range(lo, hi) if j != i]
        if not js:
            continue
        ctx = int(walk[js[rng.below(len(js))]])
        t = int(hin.kind_of[ctx]) if cfg.kind_aware_negatives else NoiseTable.GLOBAL
        negs = []
        for _ in range(cfg.negatives):
            base = int(nz.lo[t])
            k = rng.below(int(nz.hi[t]) - base)
            if rng.random() >= nz.prob[base + k]:
                k = int(nz.alias[base + k])
            g = int(vocab.gids[nz.members[base + k]])
            if g != ctx:
                negs.append(hin.ref(g))
        centers.append(hin.ref(int(walk[i])))
        contexts.append(hin.ref(ctx))
        negatives.append(tuple(negs))
    return ProbeSet(centers, contexts, negatives)


def probe_loss(emb: EmbeddingTable, probes: ProbeSet) -> float:
    if emb.context is None:
        raise ValueError("probe loss needs the context table")
    total = 0.0
    for c, x, negs in zip(probes.centers, probes.contexts, probes.negatives):
        u = emb.center[emb.row[c]]
        v = emb.context[emb.row[x]]
        total += sgns_pair_loss(u, v, [emb.context[emb.row[n]] for n in negs])
    return total / len(probes.centers)


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = np.asarray(a), np.asarray(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return 0.0 if na == 0 or nb == 0 else float(a @ b / (na * nb))
