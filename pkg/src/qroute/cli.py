"""Command-line entry point: ``qroute {synth,stats,train,evaluate,recommend}``.

Every flag mirrors a :class:`~qroute.pipeline.PipelineConfig` key
(``--walks-per-node`` <-> ``walks_per_node``). Values load in the order
defaults, then ``--config FILE`` (``key = value`` lines), then flags.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from . import corpus, metrics, router, sgns
from .corpus import CorpusError, read_events_file, synth_generate, write_events_file
from .pipeline import PipelineConfig, fit, prepare, run_evaluation

EXIT_OK, EXIT_INPUT, EXIT_EMPTY = 0, 2, 3

EMBEDDINGS = "embeddings.txt"
SCORER = "scorer.txt"

HELP = {
    "clusters": "planted clusters", "users": "users to synthesize", "crops": "crops to synthesize",
    "questions": "questions to synthesize", "answers_mean": "Poisson mean of answers per question",
    "noise": "probability an answerer ignores the question's cluster",
    "time_span": "seconds spanned by ask times",
    "cutoff_fraction": "fraction of asked events on the train side",
    "cutoff_time": "explicit cutoff unix time (overrides cutoff_fraction)",
    "metapaths": "'default' or comma-separated paths like U-answered-Q-answered-U",
    "walks_per_node": "walks launched per start node and metapath",
    "walk_length": "maximum nodes per walk",
    "dim": "embedding dimension", "window": "maximum skip-gram window",
    "negatives": "negative samples per pair", "lr0": "initial learning rate",
    "epochs": "passes over the walk corpus", "noise_power": "exponent on noise frequencies",
    "kind_aware_negatives": "draw negatives of the context node's kind (true/false)",
    "workers": "training threads (>1 is nondeterministic)",
    "neg_per_pos": "scorer negatives per positive pair", "scorer_epochs": "scorer SGD epochs",
    "scorer_lr": "scorer learning rate", "l2": "scorer L2 penalty",
    "top_k": "users to recommend", "ks": "comma-separated cutoffs for recall/ndcg",
    "seed": "global seed; overrides every stage seed",
}

SECTIONS = {
    "synth": ("clusters", "users", "crops", "questions", "answers_mean", "noise", "time_span",
              "synth_seed"),
    "split": ("cutoff_fraction", "cutoff_time"),
    "model": ("metapaths", "walks_per_node", "walk_length", "dim", "window", "negatives", "lr0",
              "epochs", "noise_power", "kind_aware_negatives", "workers", "neg_per_pos",
              "scorer_epochs", "scorer_lr", "l2", "walk_seed", "train_seed", "pairs_seed",
              "scorer_seed"),
    "eval": ("ks", "eval_seed"),
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _converter(name: str):
    f = {f.name: f for f in fields(PipelineConfig)}[name]
    t = str(f.type)
    if "bool" in t:
        return _bool
    if "int" in t:
        return int
    if "float" in t:
        return float
    return str


def _add_keys(parser: argparse.ArgumentParser, *sections: str) -> None:
    defaults = PipelineConfig()
    for sec in sections:
        group = parser.add_argument_group(sec)
        for key in SECTIONS[sec]:
            group.add_argument("--" + key.replace("_", "-"), dest=key, type=_converter(key),
                               default=argparse.SUPPRESS,
                               help=f"{HELP.get(key, key.replace('_', ' '))} "
                                    f"(default: {getattr(defaults, key)})")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qroute", description="Question routing over a user/question/crop graph.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value file; flags override it")
        sp.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=HELP["seed"])

    s = sub.add_parser("synth", help="write a planted-cluster event log")
    common(s)
    s.add_argument("--output", "-o", required=True, help="event CSV to write")
    _add_keys(s, "synth")

    s = sub.add_parser("stats", help="characterize an event log")
    common(s)
    s.add_argument("input", help="event CSV")
    s.add_argument("--out-dir", default=".", help="directory for histogram CSVs (default: .)")

    s = sub.add_parser("train", help="split, embed and fit the scorer")
    common(s)
    s.add_argument("input", help="event CSV")
    s.add_argument("--out-dir", required=True, help="artifact directory")
    s.add_argument("--dump-context", action="store_true", help="also write the context table")
    s.add_argument("--dump-walks", help="write the walk corpus to this file")
    s.add_argument("--test-cases", help="write the held-out test cases CSV here")
    _add_keys(s, "split", "model")

    s = sub.add_parser("evaluate", help="score held-out questions against baselines")
    common(s)
    s.add_argument("input", help="event CSV")
    s.add_argument("--artifacts", required=True, help="directory written by train")
    s.add_argument("--output", "-o", help="report file (default: stdout)")
    _add_keys(s, "split", "eval")

    s = sub.add_parser("recommend", help="rank users for a new question")
    common(s)
    s.add_argument("input", help="event CSV the artifacts were trained on")
    s.add_argument("--artifacts", required=True, help="directory written by train")
    s.add_argument("--asker", required=True, help="user id of the asker")
    s.add_argument("--crops", default="", help="comma-separated crop ids")
    s.add_argument("--question", default="new", help="question id to report (default: new)")
    s.add_argument("--top-k", dest="top_k", type=int, default=argparse.SUPPRESS,
                   help=f"{HELP['top_k']} (default: {PipelineConfig().top_k})")
    _add_keys(s, "split")
    return p


def read_config_file(path: str) -> dict[str, object]:
    known = set(PipelineConfig.keys())
    out: dict[str, object] = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in known:
                raise CliError(f"{path}:{n}: unknown or malformed entry {line!r}")
            try:
                out[key] = _converter(key)(value.strip())
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise CliError(f"{path}:{n}: {exc}") from None
    return out


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    values: dict[str, object] = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    known = set(PipelineConfig.keys())
    values.update({k: v for k, v in vars(args).items() if k in known})
    return PipelineConfig(**values)


def _err(msg: str) -> None:
    print(f"qroute: {msg}", file=sys.stderr)


# ------------------------------------------------------------ commands


def cmd_synth(args, cfg: PipelineConfig) -> int:
    try:
        scfg = cfg.synth_config()
    except ValueError as exc:
        raise CliError(f"invalid synth config: {exc}") from None
    log = synth_generate(scfg)
    write_events_file(log, args.output)
    print(" ".join(f"{k}={v}" for k, v in corpus.census(log).items()))
    return EXIT_OK


def _load(path: str):
    try:
        return read_events_file(path)
    except CorpusError as exc:
        raise CliError(f"{path}: {exc}") from None
    except OSError as exc:
        raise CliError(str(exc)) from None


def cmd_stats(args, cfg: PipelineConfig) -> int:
    report = metrics.characterize(_load(args.input))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "answers_per_question.csv", "w", encoding="utf-8") as fh:
        metrics.write_histogram(report.answers_per_question, fh)
    with open(out / "time_to_first_answer.csv", "w", encoding="utf-8") as fh:
        metrics.write_ttfa(report.time_to_first_answer, fh)
    print("\n".join(report.lines()))
    return EXIT_OK


def cmd_train(args, cfg: PipelineConfig) -> int:
    log = _load(args.input)
    fitted = fit(log, cfg, log_line=lambda s: print(s, file=sys.stderr))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / EMBEDDINGS, "w", encoding="utf-8") as fh:
        sgns.write_embeddings(fitted.emb, fh, dump_context=args.dump_context)
    with open(out / SCORER, "w", encoding="utf-8") as fh:
        router.write_scorer(fitted.scorer, fh)
    if args.dump_walks:
        with open(args.dump_walks, "w", encoding="utf-8") as fh:
            fitted.corpus.dump(fh)
    if args.test_cases:
        with open(args.test_cases, "w", encoding="utf-8") as fh:
            corpus.write_test_cases(fitted.prepared.split.test, fh)
    print(f"nodes={len(fitted.emb)} dim={fitted.emb.dim} walks={len(fitted.corpus)} "
          f"train_events={len(fitted.prepared.split.train)} test_cases={len(fitted.prepared.split.test)}")
    return EXIT_OK


def _artifacts(args, cfg):
    log = _load(args.input)
    prep = prepare(log, cfg)
    root = Path(args.artifacts)
    try:
        with open(root / EMBEDDINGS, encoding="utf-8") as fh:
            emb = sgns.read_embeddings(fh, prep.hin)
        with open(root / SCORER, encoding="utf-8") as fh:
            scorer = router.read_scorer(fh)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load artifacts: {exc}") from None
    if scorer.dim != emb.dim:
        raise CliError(f"scorer dim {scorer.dim} does not match embedding dim {emb.dim}")
    return prep, emb, scorer


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    prep, emb, scorer = _artifacts(args, cfg)
    report = run_evaluation(prep, emb, scorer, cfg)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            report.write(fh)
    else:
        report.write(sys.stdout)
    return EXIT_OK


def cmd_recommend(args, cfg: PipelineConfig) -> int:
    prep, emb, scorer = _artifacts(args, cfg)
    probe = router.QuestionProbe(args.question, args.asker,
                                 tuple(c for c in args.crops.split(",") if c))
    try:
        ranked = router.recommend(probe, emb, scorer, prep.candidates, cfg.top_k, prep.popularity)
    except router.NoCandidates:
        raise CliError("no candidate users to rank", EXIT_EMPTY) from None
    if ranked.cold_start:
        _err("no embedded context for this question; falling back to popularity ranking")
    router.write_recommendations([ranked], sys.stdout)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "stats": cmd_stats, "train": cmd_train,
            "evaluate": cmd_evaluate, "recommend": cmd_recommend}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            cfg = resolve_config(args)
        except (TypeError, ValueError) as exc:
            raise CliError(f"invalid configuration: {exc}") from None
        return COMMANDS[args.command](args, cfg)
    except CliError as exc:
        _err(str(exc))
        return exc.code
    except (ValueError, LookupError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
