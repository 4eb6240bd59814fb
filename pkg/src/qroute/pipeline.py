"""End-to-end orchestration shared by the CLI and the acceptance suite."""
from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field, fields
from typing import Callable

from .corpus import EventLog, Split, SplitSpec, SynthConfig, temporal_split
from .hin import Hin, build_hin
from .metrics import EvalReport, evaluate
from .rng import mix_seed
from .router import Scorer, answer_counts, build_training_pairs, candidate_pool, train_scorer
from .sgns import EmbeddingTable, TrainConfig, make_probe_set, probe_loss, train
from .walker import Metapath, WalkConfig, WalkCorpus, default_metapaths, generate_walks

# stage ordinals for seed mixing
SYNTH, WALK, SGNS, PAIRS, SCORER, EVAL, PROBE = range(7)


@dataclass
class PipelineConfig:
    # synthesis
    clusters: int = 10
    users: int = 500
    crops: int = 50
    questions: int = 5000
    answers_mean: float = 3.0
    noise: float = 0.1
    time_span: int = 180 * 86400
    # split
    cutoff_fraction: float | None = 0.9
    cutoff_time: int | None = None
    # walks
    metapaths: str = "default"
    walks_per_node: int = 10
    walk_length: int = 40
    # embeddings
    dim: int = 128
    window: int = 5
    negatives: int = 5
    lr0: float = 0.025
    epochs: int = 5
    noise_power: float = 0.75
    kind_aware_negatives: bool = True
    workers: int = 1
    # router
    neg_per_pos: int = 5
    scorer_epochs: int = 10
    scorer_lr: float = 0.05
    l2: float = 1e-4
    top_k: int = 10
    ks: str = "1,5,10"
    # seeds; ``seed`` overrides all stage seeds when set
    seed: int | None = None
    synth_seed: int = 42
    walk_seed: int = 1
    train_seed: int = 2
    pairs_seed: int = 3
    scorer_seed: int = 4
    eval_seed: int = 5

    def stage_seed(self, stage: int) -> int:
        if self.seed is not None:
            return mix_seed(self.seed, stage)
        return {SYNTH: self.synth_seed, WALK: self.walk_seed, SGNS: self.train_seed,
                PAIRS: self.pairs_seed, SCORER: self.scorer_seed, EVAL: self.eval_seed,
                PROBE: mix_seed(self.train_seed, PROBE)}[stage]

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def synth_config(self) -> SynthConfig:
        return SynthConfig(self.clusters, self.users, self.crops, self.questions,
                           self.answers_mean, self.noise, self.time_span,
                           self.stage_seed(SYNTH))

    def split_spec(self) -> SplitSpec:
        if self.cutoff_time is not None:
            return SplitSpec(cutoff_time=self.cutoff_time)
        return SplitSpec(cutoff_fraction=self.cutoff_fraction)

    def walk_config(self) -> WalkConfig:
        if self.metapaths.strip() == "default":
            paths = default_metapaths()
        else:
            paths = [Metapath.parse(p) for p in self.metapaths.split(",") if p.strip()]
        return WalkConfig(tuple(paths), self.walks_per_node, self.walk_length, self.stage_seed(WALK))

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.dim, self.window, self.negatives, self.lr0, self.epochs,
                           self.noise_power, self.kind_aware_negatives,
                           self.stage_seed(SGNS), self.workers)

    def k_list(self) -> list[int]:
        ks = sorted({int(k) for k in self.ks.split(",") if k.strip()})
        if not ks or ks[0] < 1:
            raise ValueError("ks must be positive integers")
        return ks


@dataclass
class Prepared:
    split: Split
    hin: Hin
    candidates: list[str]
    popularity: Counter


@dataclass
class Fitted:
    prepared: Prepared
    corpus: WalkCorpus
    emb: EmbeddingTable
    scorer: Scorer
    timings: dict[str, float] = field(default_factory=dict)
    probe_losses: list[float] = field(default_factory=list)


def prepare(log: EventLog, cfg: PipelineConfig) -> Prepared:
    split = temporal_split(log, cfg.split_spec())
    return Prepared(split, build_hin(split.train), candidate_pool(split.train),
                    answer_counts(split.train))


def fit(log: EventLog, cfg: PipelineConfig,
        log_line: Callable[[str], None] | None = None) -> Fitted:
    say = log_line or (lambda s: None)
    timings: dict[str, float] = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        out = fn()
        timings[name] = time.perf_counter() - t0
        say(f"stage {name} {timings[name]:.2f}s")
        return out

    prep = stage("split+graph", lambda: prepare(log, cfg))
    corpus = stage("walks", lambda: generate_walks(prep.hin, cfg.walk_config()))
    tcfg = cfg.train_config()
    probes = make_probe_set(corpus, tcfg, 1000, cfg.stage_seed(PROBE))
    losses: list[float] = []

    def on_epoch(epoch, emb):
        losses.append(probe_loss(emb, probes))
        say(f"epoch {epoch + 1} probe_loss = {losses[-1]:.6f}")

    emb = stage("embed", lambda: train(corpus, tcfg, on_epoch))
    pairs = stage("pairs", lambda: build_training_pairs(
        prep.split.train, emb, cfg.neg_per_pos, cfg.stage_seed(PAIRS)))
    scorer = stage("scorer", lambda: train_scorer(
        pairs.X, pairs.y, cfg.scorer_epochs, cfg.scorer_lr, cfg.l2, cfg.stage_seed(SCORER)))
    return Fitted(prep, corpus, emb, scorer, timings, losses)


def run_evaluation(prep: Prepared, emb: EmbeddingTable, scorer: Scorer,
                   cfg: PipelineConfig) -> EvalReport:
    return evaluate(prep.split.test, emb, scorer, prep.candidates, cfg.k_list(),
                    cfg.stage_seed(EVAL), prep.popularity)
