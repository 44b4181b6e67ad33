"""Command-line entry point.

Exit codes: 0 success, 1 validation failure (bad config, flags or input files),
2 runtime failure (for example a non-finite training loss).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import metrics
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .corpus import (
    Corpus,
    CorpusError,
    align_emotion_labels,
    filter_flip_dialogues,
    parse_corpus,
    read_annotations,
    read_emotion_labels,
    split_summary,
    stats_report,
    write_annotations,
    write_corpus,
    write_emotion_labels,
    write_stats_csv,
)
from .dialogue import NUM_EMOTIONS, detect_flips
from .efr_tx import load_efr, predict_triggers, save_efr, train_efr
from .embeddings import EmbeddingError, EmbeddingStore, load_store
from .erc_mmn import load_erc, predict_emotions, save_erc, train_erc
from .instances import compile_corpus, window_loss_report, write_instances
from .multitask import load_multi, predict_multi, save_multi, train_multi
from .sweeps import HOPS, LAYERS, efr_gold_labels, sweep_hops, sweep_layers
from .training import TrainingError

VALIDATION_ERRORS = (ConfigError, CorpusError, EmbeddingError, CheckpointError, ValueError, KeyError)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = Parser(add_help=False)
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="YAML or JSON run configuration")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")
    g.add_argument("--split", choices=("train", "dev", "test"))
    g.add_argument("--window", type=int, help="trigger context window (target + predecessors)")
    g.add_argument("--hops", type=int, help="memory hops of the emotion model")
    g.add_argument("--layers", type=int, help="encoder layers of the trigger model")
    g.add_argument("--conditioning", choices=("none", "early", "late"))
    g.add_argument("--label-source", choices=("gold", "predicted", "absent"))
    g.add_argument("--epochs", type=int, help="override max_epochs for the task being trained")
    d = p.add_argument_group("data")
    d.add_argument("--dialogues", help="dialogue file (.csv MELD layout or JSONL)")
    d.add_argument("--triggers", help="trigger annotation JSONL")
    d.add_argument("--embeddings", help="precomputed utterance vectors JSONL")
    d.add_argument("--emotion-labels", help="predicted emotion JSONL for label_source=predicted")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = Parser(prog="convflip", description="Emotion recognition and emotion-flip trigger reasoning for dialogue.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)
    sub.add_parser("ingest", parents=[common], help="validate a corpus and write canonical JSONL").add_argument(
        "--flip-only", action="store_true", help="keep only dialogues with at least one emotion flip"
    )
    sub.add_parser("stats", parents=[common], help="split summary, flip directionality, trigger distances")
    sub.add_parser("compile", parents=[common], help="write windowed trigger instances")
    for task in ("erc", "efr", "multi"):
        sub.add_parser(f"train-{task}", parents=[common], help=f"train the {task} model")
    p = sub.add_parser("predict", parents=[common], help="predict emotions and/or triggers")
    p.add_argument("--task", choices=("erc", "efr", "multi"), required=True)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("eval", parents=[common], help="score predictions against gold labels")
    p.add_argument("--task", choices=("erc", "efr"), required=True)
    p.add_argument("--predictions", help="prediction JSONL (emotion records or trigger annotations)")
    p.add_argument("--counts", type=int, nargs="+", metavar="N", help="trigger TP FP FN [TN] instead of files")
    p = sub.add_parser("sweep", parents=[common], help="train and report one model per hyperparameter value")
    p.add_argument("--param", choices=("hops", "layers"), required=True)
    p.add_argument("--values", type=int, nargs="+")
    return parser


# ------------------------------------------------------------------ config resolution


def resolve_config(args) -> RunConfig:
    over: dict = {"erc": {}, "efr": {}, "data": {}}
    for key in ("seed", "out", "split"):
        if getattr(args, key) is not None:
            over[key] = getattr(args, key)
    if args.hops is not None:
        over["erc"]["hops"] = args.hops
    if args.layers is not None:
        over["efr"]["encoder_layers"] = args.layers
    if args.window is not None:
        over["efr"]["window"] = args.window
    if args.conditioning is not None:
        over["efr"]["conditioning"] = args.conditioning
    if args.label_source is not None:
        over["efr"]["label_source"] = args.label_source
    if args.epochs is not None:
        section = "efr" if args.command in ("train-efr",) or getattr(args, "param", None) == "layers" else "erc"
        over[section]["max_epochs"] = args.epochs
    for key in ("dialogues", "triggers", "embeddings", "emotion_labels"):
        if getattr(args, key) is not None:
            over["data"][key] = getattr(args, key)
    return load_config(args.config, overrides=over)


NEEDS_TRIGGERS = ("stats", "compile", "train-efr", "train-multi", "sweep")


def validate(cfg: RunConfig, args) -> None:
    """Every problem the config and flags can reveal without reading data, reported together."""
    problems = []
    if cfg.data.dialogues is None:
        problems.append("data.dialogues is required")
    needs_triggers = args.command in NEEDS_TRIGGERS or (args.command == "eval" and args.task == "efr" and not args.counts)
    if needs_triggers and cfg.data.triggers is None:
        problems.append(f"data.triggers is required for {args.command}")
    uses_efr = args.command == "train-efr" or (args.command == "sweep" and args.param == "layers")
    hp = cfg.efr_hparams
    if uses_efr and hp.uses_labels and hp.label_source == "predicted" and cfg.data.emotion_labels is None:
        problems.append(f"conditioning={hp.conditioning} with predicted labels needs data.emotion_labels")
    if args.command == "eval" and args.counts is not None:
        problems = []  # count-based evaluation reads no data
    if problems:
        raise ConfigError(problems)


def _require(cfg: RunConfig, *keys: str) -> None:
    missing = [k for k in keys if getattr(cfg.data, k) is None]
    if missing:
        raise ConfigError([f"data.{k} is required for this command" for k in missing])


def _corpus(cfg: RunConfig, triggers: bool = True) -> Corpus:
    _require(cfg, "dialogues")
    return parse_corpus(cfg.data.dialogues, cfg.data.triggers if triggers else None, cfg.split)


def _store(cfg: RunConfig) -> EmbeddingStore:
    return load_store(cfg.data.embeddings) if cfg.data.embeddings else EmbeddingStore()


def _efr_emotions(cfg: RunConfig, corpus: Corpus):
    hp = cfg.efr_hparams
    if not hp.uses_labels:
        return None
    if hp.label_source == "gold":
        return efr_gold_labels(corpus)
    if cfg.data.emotion_labels is None:
        raise ConfigError([f"conditioning={hp.conditioning} with predicted labels needs data.emotion_labels"])
    return align_emotion_labels(corpus, read_emotion_labels(cfg.data.emotion_labels))


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_log(path: Path, entries) -> None:
    path.write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in entries), encoding="utf-8")


# ------------------------------------------------------------------ commands


def cmd_ingest(cfg: RunConfig, args) -> None:
    corpus = _corpus(cfg)
    if args.flip_only:
        corpus = filter_flip_dialogues(corpus)
    out = _out(cfg)
    write_corpus(corpus, out / f"dialogues_{cfg.split}.jsonl", out / f"triggers_{cfg.split}.jsonl")
    print(json.dumps(split_summary(corpus).to_json(), sort_keys=True))


def cmd_stats(cfg: RunConfig, args) -> None:
    corpus = _corpus(cfg)
    out = _out(cfg)
    _write_json(out / f"stats_{cfg.split}.json", stats_report(corpus))
    write_stats_csv(corpus, out)


def cmd_compile(cfg: RunConfig, args) -> None:
    corpus = _corpus(cfg)
    window = cfg.efr.window
    instances = compile_corpus(corpus, window)
    out = _out(cfg)
    write_instances(instances, out / f"instances_{cfg.split}.jsonl")
    report = {
        "window": window,
        "instances": len(instances),
        "flip_instances": sum(i.has_flip for i in instances),
        "gold_triggers_outside_window": window_loss_report(instances, corpus.annotations),
    }
    _write_json(out / f"instances_{cfg.split}_report.json", report)


def cmd_train_erc(cfg: RunConfig, args) -> None:
    corpus, store, out = _corpus(cfg, triggers=False), _store(cfg), _out(cfg)
    model, entries = train_erc(corpus, store, cfg.erc_hparams)
    save_erc(model, out / "erc.ckpt")
    _write_log(out / "erc_log.jsonl", entries)
    _write_json(out / "erc_config.json", cfg.to_json())


def cmd_train_efr(cfg: RunConfig, args) -> None:
    hp = cfg.efr_hparams
    corpus, store = _corpus(cfg), _store(cfg)
    emotions = _efr_emotions(cfg, corpus)
    out = _out(cfg)
    vectors = {d.id: store.dialogue_matrix(d) for d in corpus.dialogues}
    model, entries = train_efr(compile_corpus(corpus, hp.window), vectors, hp, emotions)
    save_efr(model, out / "efr.ckpt")
    _write_log(out / "efr_log.jsonl", entries)
    _write_json(out / "efr_config.json", cfg.to_json())


def cmd_train_multi(cfg: RunConfig, args) -> None:
    corpus, store, out = _corpus(cfg), _store(cfg), _out(cfg)
    model, entries = train_multi(corpus, store, cfg.multi_hparams)
    save_multi(model, out / "multi.ckpt")
    _write_log(out / "multi_log.jsonl", entries)
    _write_json(out / "multi_config.json", cfg.to_json())


def cmd_predict(cfg: RunConfig, args) -> None:
    store = _store(cfg)
    if args.task == "erc":
        model = load_erc(args.checkpoint)
        corpus, out = _corpus(cfg, triggers=False), _out(cfg)
        labels = {d.id: predict_emotions(model, d, store) for d in corpus.dialogues}
        write_emotion_labels(labels, out / f"emotions_{cfg.split}.jsonl")
    elif args.task == "efr":
        model = load_efr(args.checkpoint)
        # conditioning mode and window come from the checkpoint; labels from the run config
        cfg = dataclasses.replace(cfg, efr=model.hp)
        corpus = _corpus(cfg, triggers=False)
        emotions = _efr_emotions(cfg, corpus)
        out = _out(cfg)
        pred = {}
        for d in corpus.dialogues:
            emo = None if emotions is None else emotions[d.id]
            pred[d.id] = predict_triggers(model, d, store.dialogue_matrix(d), detect_flips(d), emo)
        write_annotations(pred, out / f"triggers_{cfg.split}.jsonl")
    else:
        model = load_multi(args.checkpoint)
        corpus, out = _corpus(cfg, triggers=False), _out(cfg)
        labels, pred = {}, {}
        for d in corpus.dialogues:
            labels[d.id], pred[d.id] = predict_multi(model, d, store)
        write_emotion_labels(labels, out / f"emotions_{cfg.split}.jsonl")
        write_annotations(pred, out / f"triggers_{cfg.split}.jsonl")


def cmd_eval(cfg: RunConfig, args) -> None:
    out = _out(cfg)
    if args.counts is not None:
        if args.task != "efr" or len(args.counts) not in (3, 4):
            raise ConfigError(["--counts takes TP FP FN [TN] and only applies to --task efr"])
        report = metrics.binary_report_from_counts(*args.counts)
        metrics.write_report(report, out, "efr_counts")
        print(f"trigger_f1 {report.trigger_f1:.4f}")
        return
    if args.predictions is None:
        raise ConfigError(["eval needs --predictions or --counts"])
    if args.task == "erc":
        corpus = _corpus(cfg, triggers=False)
        pred = align_emotion_labels(corpus, read_emotion_labels(args.predictions))
        gold = [int(u.emotion) for d in corpus.dialogues for u in d.utterances]
        flat = [e for d in corpus.dialogues for e in pred[d.id]]
        report = metrics.classification_report(gold, flat, list(range(NUM_EMOTIONS)))
        metrics.write_report(report, out, f"erc_{cfg.split}")
        print(f"weighted_f1 {report.weighted_f1:.4f}")
    else:
        _require(cfg, "triggers")
        corpus = _corpus(cfg)
        pred = read_annotations(args.predictions)
        unknown = sorted(set(pred) - set(corpus.by_id))
        if unknown:
            raise CorpusError(f"predictions for unknown dialogues {unknown[:3]}")
        report = metrics.efr_dialogue_report(corpus.annotations, pred, cfg.efr.window)
        metrics.write_report(report, out, f"efr_{cfg.split}")
        print(f"trigger_f1 {report.trigger_f1:.4f}")


def cmd_sweep(cfg: RunConfig, args) -> None:
    corpus, store, out = _corpus(cfg), _store(cfg), _out(cfg)
    if args.param == "hops":
        rows = sweep_hops(corpus, store, cfg.erc_hparams, out, args.values or HOPS)
    else:
        emotions = _efr_emotions(cfg, corpus)
        rows = sweep_layers(corpus, store, cfg.efr_hparams, out, args.values or LAYERS, emotions)
    for row in rows:
        print(json.dumps(row, sort_keys=True))


COMMANDS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "compile": cmd_compile,
    "train-erc": cmd_train_erc,
    "train-efr": cmd_train_efr,
    "train-multi": cmd_train_multi,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        validate(cfg, args)
    except UsageError as exc:
        print(f"convflip: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"convflip: config: {problem}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"convflip: config: {problem}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"convflip: training failed: {exc}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as exc:
        print(f"convflip: {exc}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError) as exc:
        print(f"convflip: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
