"""Command line entry point: ``dementia-nlp <command> [--key value ...]``.

Every command accepts ``--config FILE`` (key=value lines) and long-form
flags for any config key; flags win over the file. Outputs land in
``<out>/<command>/`` next to ``config.resolved``.

Exit codes: 0 success, 1 usage/config error, 2 data/format error,
3 numeric error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import fields
from pathlib import Path

from . import pipeline
from .config import RunConfig, derive_seed, parse_config_text
from .corpus import Vocabulary, extract_utterances, generate_synthetic_corpus, read_corpus, write_corpus
from .errors import DementiaNLPError, FormatError, NumericError, UsageError
from .interpret import render_heatmap, saliency
from .models import load_model, save_model
from .training import error_report, evaluate, history_csv

COMMANDS = ("synth", "ingest", "train", "eval", "cluster", "saliency", "gender", "report")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="dementia-nlp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value file; flags override it")
        p.add_argument("-v", "--verbose", action="store_true")
        for f in fields(RunConfig):
            flag = "--" + f.name.replace("_", "-")
            if f.type in (bool, "bool"):
                p.add_argument(flag, dest=f.name, nargs="?", const="true", default=None,
                               metavar="BOOL")
            else:
                p.add_argument(flag, dest=f.name, default=None)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        cfg.update(parse_config_text(text))
    flags = {f.name: getattr(args, f.name) for f in fields(RunConfig)
             if getattr(args, f.name, None) is not None}
    cfg.update(flags)
    return cfg.validate()


@contextmanager
def command_dir(cfg: RunConfig, command: str):
    """Create ``<out>/<command>``, hold its lock file and echo the config."""
    d = Path(cfg.out) / command
    d.mkdir(parents=True, exist_ok=True)
    lock = d / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"{d} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        (d / "config.resolved").write_text(cfg.to_text(), encoding="utf-8")
        yield d
    finally:
        lock.unlink(missing_ok=True)


def _load_corpus(cfg):
    if not cfg.corpus_dir.is_dir():
        raise FormatError(f"corpus directory {cfg.corpus_dir} does not exist")
    corpus = read_corpus(cfg.corpus_dir)
    if not corpus:
        raise FormatError(f"no *.cha files in {cfg.corpus_dir}")
    return corpus


def _checkpoint(cfg):
    """Model, vocabulary and the data settings it was trained with."""
    ck = cfg.checkpoint_dir
    if not (ck / "model.params").exists():
        raise FormatError(f"no checkpoint in {ck}; run 'train' first")
    m = load_model(ck)
    vocab = Vocabulary.from_text((ck / "vocab.txt").read_text(encoding="utf-8"))
    if vocab.digest() != m.vocab_hash:
        raise FormatError("vocabulary does not match the checkpoint")
    trained = RunConfig()
    trained.update(parse_config_text((ck / "config.resolved").read_text(encoding="utf-8")))
    data_cfg = RunConfig(**{**cfg.__dict__})
    for key in ("tagged", "require_pos", "max_len", "by_transcript", "arch", "seed"):
        setattr(data_cfg, key, getattr(trained, key))
    data_cfg.max_len = m.config.max_len
    return m, vocab, data_cfg


def cmd_synth(cfg, d):
    ts = generate_synthetic_corpus(cfg.n, cfg.ad_fraction, derive_seed(cfg.seed, "synth"),
                                   (cfg.utterances_min, cfg.utterances_max))
    write_corpus(ts, cfg.corpus_dir)
    n_ad = sum(t.diagnosis == "AD" for t in ts)
    msg = f"wrote {len(ts)} transcripts ({n_ad} AD, {len(ts) - n_ad} Control) to {cfg.corpus_dir}\n"
    (d / "summary.txt").write_text(msg, encoding="utf-8")
    return msg


def cmd_ingest(cfg, d):
    text = pipeline.corpus_statistics(_load_corpus(cfg))
    (d / "stats.txt").write_text(text, encoding="utf-8")
    return text


def cmd_train(cfg, d):
    data = pipeline.prepare_dataset(_load_corpus(cfg), cfg)
    m, history = pipeline.fit(cfg, data)
    save_model(m, d)
    (d / "vocab.txt").write_text(data.vocab.to_text(), encoding="utf-8")
    hist = history_csv(history)
    (d / "history.csv").write_text(hist, encoding="utf-8")
    return hist


def cmd_eval(cfg, d):
    m, vocab, dcfg = _checkpoint(cfg)
    data = pipeline.prepare_dataset(_load_corpus(cfg), dcfg, vocab)
    rep = evaluate(m, data.split.test)
    text = rep.to_text()
    (d / "eval.txt").write_text(text, encoding="utf-8")
    (d / "predictions.csv").write_text(rep.predictions_csv(), encoding="utf-8")
    if cfg.error_report:
        er = error_report(m, data.split.test, cfg.sample_frac, cfg.short_threshold,
                          derive_seed(cfg.seed, "errors"), report=rep)
        (d / "error_report.txt").write_text(er.to_text(), encoding="utf-8")
        text += er.to_text()
    return text


def cmd_cluster(cfg, d):
    m, vocab, dcfg = _checkpoint(cfg)
    dcfg.task, dcfg.k, dcfg.probe, dcfg.restarts, dcfg.top_k = cfg.task, cfg.k, cfg.probe, cfg.restarts, cfg.top_k
    utts = extract_utterances(_load_corpus(cfg), require_pos=dcfg.require_pos)
    text = pipeline.cluster_report(m, utts, vocab, dcfg, m.config.max_len)
    (d / "clusters.txt").write_text(text, encoding="utf-8")
    return text


def cmd_saliency(cfg, d):
    m, vocab, dcfg = _checkpoint(cfg)
    corpus = _load_corpus(cfg)
    utts = extract_utterances(corpus, require_pos=dcfg.require_pos)
    if cfg.ids:
        by_key = {f"{u.transcript_id}:{u.index}": u for u in utts}
        wanted = [k.strip() for k in cfg.ids.split(",") if k.strip()]
        missing = [k for k in wanted if k not in by_key]
        if missing:
            raise FormatError(f"unknown utterance ids: {', '.join(missing)}")
        chosen = [by_key[k] for k in wanted]
    else:
        data = pipeline.prepare_dataset(corpus, dcfg, vocab)
        chosen = [s.source for s in data.split.test[:cfg.n_saliency]]
    lines = []
    for u in chosen:
        smap = saliency(m, u, vocab, dcfg.tagged, cfg.score_kind, cfg.target, m.config.max_len)
        path = d / f"{smap.filename_stem}.{'txt' if cfg.format == 'text' else cfg.format}"
        path.write_text(render_heatmap(smap, cfg.format), encoding="utf-8")
        lines.append(f"{path.name} predicted={smap.predicted_class} true={u.label}")
    return "\n".join(lines) + "\n"


def cmd_gender(cfg, d):
    text = pipeline.gender_protocol(_load_corpus(cfg), cfg)
    (d / "gender.txt").write_text(text, encoding="utf-8")
    return text


def cmd_report(cfg, d):
    sub = RunConfig(**{**cfg.__dict__})
    sub.out = str(d)
    sub.corpus = str(cfg.corpus_dir)
    sub.checkpoint = ""
    sub.error_report = True
    parts = []
    for name in ("ingest", "train", "eval", "cluster", "saliency", "gender"):
        parts.append(f"== {name} ==\n" + run_command(name, sub))
    text = "\n".join(parts)
    (d / "summary.txt").write_text(text, encoding="utf-8")
    return text


_HANDLERS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train, "eval": cmd_eval,
    "cluster": cmd_cluster, "saliency": cmd_saliency, "gender": cmd_gender, "report": cmd_report,
}


def run_command(command: str, cfg: RunConfig) -> str:
    if command not in _HANDLERS:
        raise UsageError(f"unknown command {command!r}")
    with command_dir(cfg, command) as d:
        return _HANDLERS[command](cfg, d)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        sys.stdout.write(run_command(args.command, cfg))
        return 0
    except DementiaNLPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NumericError.exit_code
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
