"""Command-line driver: every pipeline stage as a subcommand.

Exit codes: 0 success, 1 usage/config error, 2 data error (including a
missing upstream artifact), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .attention import FullModel
from .backbone import CheckpointError, Classifier, clip_embedding, load_checkpoint, save_checkpoint
from .config import ConfigError, PipelineConfig, dump_config, load_config
from .corpus import Corpus, DatasetError, generate_corpus, read_dataset, write_dataset
from .evaluation import (EvalReport, Span, localize, map_at_tiou, recognition_report,
                         sign_signature)
from .extraction import (candidates_as_samples, extract_candidates, read_candidates,
                         write_candidates)
from .memory import EmptyClassError, build_memory, load_memory, save_memory
from .training import NumericalError, train_base, train_full, train_joint

logger = logging.getLogger("signxfer")


class MissingArtifact(FileNotFoundError):
    pass


def _sha(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(q for q in path.rglob("*") if q.is_file()):
            h.update(str(p.relative_to(path)).encode())
            h.update(p.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


class Stage:
    """Resolves artifact paths and writes the per-stage manifest."""

    def __init__(self, name: str, cfg: PipelineConfig):
        self.name = name
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.data = Path(cfg.dataset_dir)
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    def need(self, path: Path) -> Path:
        if not path.exists():
            raise MissingArtifact(f"{self.name}: missing upstream artifact {path}")
        self.inputs.append(path)
        return path

    def produce(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(path)
        return path

    def corpus(self) -> Corpus:
        self.need(self.data / "index.tsv")
        self.inputs.append(self.data)
        return read_dataset(self.data)

    def finish(self) -> None:
        manifest = {
            "stage": self.name,
            "config_hash": self.cfg.digest(),
            "seed": self.cfg.seed,
            "inputs": {str(p): _sha(p) for p in dict.fromkeys(self.inputs)},
            "outputs": {str(p): _sha(p) for p in dict.fromkeys(self.outputs)},
        }
        path = self.out / "manifests" / f"{self.name}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_classifier(st: Stage, name: str) -> Classifier:
    return Classifier.from_sections(load_checkpoint(st.need(st.out / name)))


def _write_report(st: Stage, name: str, report) -> None:
    st.produce(st.out / name).write_text(report.to_tsv(), encoding="utf-8")


# --- stages -----------------------------------------------------------------


def stage_gen(cfg: PipelineConfig) -> None:
    st = Stage("gen", cfg)
    corpus = generate_corpus(cfg.synth)
    if st.data.exists():
        shutil.rmtree(st.data)
    write_dataset(st.data, corpus)
    st.produce(st.data)
    (st.out).mkdir(parents=True, exist_ok=True)
    st.produce(st.out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    logger.info("gen: %d isolated clips, %d news streams -> %s",
                len(corpus.isolated), len(corpus.streams), st.data)
    st.finish()


def stage_train_base(cfg: PipelineConfig) -> None:
    st = Stage("train-base", cfg)
    corpus = st.corpus()
    model, report = train_base(corpus.split("train"), corpus.vocab.K, cfg.train_base,
                               cfg.model, val_samples=corpus.split("val"))
    ckpt = st.produce(st.out / "base.ckpt")
    save_checkpoint(ckpt, model.checkpoint_sections())
    report.checkpoint = str(ckpt)
    _write_report(st, "base.log.tsv", report)
    logger.info("train-base: final loss %.4f", report.losses[-1] if report.losses else float("nan"))
    st.finish()


def stage_extract(cfg: PipelineConfig) -> None:
    st = Stage("extract", cfg)
    corpus = st.corpus()
    base = _load_classifier(st, "base.ckpt")
    cands = extract_candidates(corpus.news("train"), corpus.vocab, base.predict, cfg.extraction)
    write_candidates(st.produce(st.out / "candidates.tsv"), cands)
    windows_dir = st.out / "news_windows"
    if windows_dir.exists():
        shutil.rmtree(windows_dir)
    write_dataset(windows_dir, Corpus(candidates_as_samples(cands), [], corpus.vocab))
    st.produce(windows_dir)
    st.finish()


def stage_align(cfg: PipelineConfig) -> None:
    st = Stage("align", cfg)
    corpus = st.corpus()
    base = _load_classifier(st, "base.ckpt")
    ckpt = st.produce(st.out / "aligned.ckpt")
    if not cfg.align.enabled:
        logger.info("align: disabled, base model used as the aligned model")
        save_checkpoint(ckpt, base.checkpoint_sections())
        st.finish()
        return
    cands = read_candidates(st.need(st.out / "candidates.tsv"), corpus)
    model, report = train_joint(corpus.split("train"), cands, corpus.vocab.K, cfg.train_joint,
                                cfg.model, base=base, val_samples=corpus.split("val"))
    save_checkpoint(ckpt, model.checkpoint_sections())
    report.checkpoint = str(ckpt)
    _write_report(st, "aligned.log.tsv", report)
    st.finish()


def stage_build_memory(cfg: PipelineConfig) -> None:
    st = Stage("build-memory", cfg)
    corpus = st.corpus()
    tag = cfg.memory.source_tag
    base = _load_classifier(st, "base.ckpt") if tag == "iso-base" else None
    aligned = _load_classifier(st, "aligned.ckpt") if tag != "iso-base" else None
    cands = None
    if tag in ("news-aligned", "both-aligned"):
        cands = read_candidates(st.need(st.out / "candidates.tsv"), corpus)
    mem = build_memory(corpus.vocab.glosses, tag, candidates=cands,
                       isolated=corpus.split("train"), aligned=aligned, base=base,
                       fallback=cfg.memory.fallback)
    save_memory(st.produce(st.out / "memory.txt"), mem)
    st.finish()


def stage_train_full(cfg: PipelineConfig) -> None:
    st = Stage("train-full", cfg)
    corpus = st.corpus()
    base = _load_classifier(st, "base.ckpt")
    mem = load_memory(st.need(st.out / "memory.txt"))
    model, report = train_full(corpus.split("train"), mem, base, cfg.train_full, cfg.model,
                               val_samples=corpus.split("val"))
    ckpt = st.produce(st.out / "full.ckpt")
    save_checkpoint(ckpt, model.checkpoint_sections())
    report.checkpoint = str(ckpt)
    _write_report(st, "full.log.tsv", report)
    st.finish()


def _models(st: Stage):
    """(name, predict) pairs for the base and full models."""
    base = _load_classifier(st, "base.ckpt")
    full = FullModel.from_sections(load_checkpoint(st.need(st.out / "full.ckpt")))
    M = ad.constant(load_memory(st.need(st.out / "memory.txt")).M)
    return [("base", base.predict), ("full", lambda f: full.predict(f, M))]


def stage_localize(cfg: PipelineConfig) -> None:
    st = Stage("localize", cfg)
    corpus = st.corpus()
    ev = cfg.eval
    sizes = range(ev.min_window, ev.max_window + 1)
    for name, predict in _models(st):
        path = st.produce(st.out / f"detections_{name}.tsv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for stream in sorted(corpus.news("test"), key=lambda s: s.id):
                for sp in localize(stream.frames, predict, sizes, ev.stride, ev.gate, ev.nms_tiou):
                    fh.write(f"{sp.cls}\t{stream.id}\t{sp.start}\t{sp.end}\t{sp.score!r}\n")
    st.finish()


def read_detections(path: Path) -> list[tuple[str, Span]]:
    out = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split("\t")
        if len(parts) != 5:
            raise DatasetError(f"{path}:{n}: expected 5 fields")
        out.append((parts[1], Span(int(parts[0]), int(parts[2]), int(parts[3]), float(parts[4]))))
    return out


def stage_eval(cfg: PipelineConfig) -> None:
    st = Stage("eval", cfg)
    corpus = st.corpus()
    test = corpus.split("test")
    labels = [s.label for s in test]
    gts = [(s.id, Span(c, a, b)) for s in corpus.news("test") for c, a, b in s.spans]
    for name, predict in _models(st):
        logits = np.vstack([predict(s.frames) for s in test])
        report: EvalReport = recognition_report(logits, labels, name)
        dets = read_detections(st.need(st.out / f"detections_{name}.tsv"))
        if gts:
            report.map_by_tiou = map_at_tiou(dets, gts, cfg.eval.tiou_thresholds)
        st.produce(st.out / f"eval_{name}.tsv").write_text(report.to_tsv(), encoding="utf-8")
        print(report.table())
    st.finish()


def stage_dump_attention(cfg: PipelineConfig) -> None:
    st = Stage("dump-attention", cfg)
    corpus = st.corpus()
    full = FullModel.from_sections(load_checkpoint(st.need(st.out / "full.ckpt")))
    M = ad.constant(load_memory(st.need(st.out / "memory.txt")).M)
    outdir = st.out / "attention"
    if outdir.exists():
        shutil.rmtree(outdir)
    for s in corpus.split("test")[:cfg.eval.attention_clips]:
        tr = full.trace(s.frames, M)
        idx, (a, b) = sign_signature(tr.A, full.enc.rho)
        lines = [f"# clip {s.id} label {s.label}", f"# signature step {idx} frames {a} {b}",
                 "# A", "step,weight"]
        lines += [f"{i},{float(w)!r}" for i, w in enumerate(tr.A[0])]
        lines += ["# r"] + [",".join(repr(float(v)) for v in row) for row in tr.r]
        st.produce(outdir / f"{s.id}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    st.finish()


def stage_dump_embeddings(cfg: PipelineConfig) -> None:
    st = Stage("dump-embeddings", cfg)
    corpus = st.corpus()
    models = [("F", _load_classifier(st, "base.ckpt")), ("F_hat", _load_classifier(st, "aligned.ckpt"))]
    path = st.produce(st.out / "embeddings.tsv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("model\tdomain\tclass\tid\tfeature\n")
        for mname, model in models:
            for s in corpus.split("train"):
                e = clip_embedding(s.frames, model.enc)[0]
                fh.write(f"{mname}\tiso\t{s.label}\t{s.id}\t" + ",".join(repr(float(v)) for v in e) + "\n")
            for stream in corpus.news("train"):
                for c, a, b in stream.spans:
                    e = clip_embedding(stream.frames[a:b], model.enc)[0]
                    fh.write(f"{mname}\tnews\t{c}\t{stream.id}:{a}-{b}\t"
                             + ",".join(repr(float(v)) for v in e) + "\n")
    st.finish()


STAGES = {
    "gen": stage_gen,
    "train-base": stage_train_base,
    "extract": stage_extract,
    "align": stage_align,
    "build-memory": stage_build_memory,
    "train-full": stage_train_full,
    "localize": stage_localize,
    "eval": stage_eval,
    "dump-attention": stage_dump_attention,
    "dump-embeddings": stage_dump_embeddings,
}


def stage_pipeline(cfg: PipelineConfig) -> None:
    for name, fn in STAGES.items():
        logger.info("== %s", name)
        fn(cfg)


# --- argument parsing -------------------------------------------------------

# flag, config path, type, default shown in --help
TRAIN_FLAGS = [
    ("--epochs", "epochs", int, 40),
    ("--batch-size", "batch_size", int, 8),
    ("--lr", "lr", float, 1e-3),
    ("--weight-decay", "weight_decay", float, 1e-7),
    ("--target-length", "target_length", int, 64),
]
EXTRACT_FLAGS = [
    ("--epsilon", "extraction.epsilon", float, 0.3),
    ("--min-window", "extraction.min_window", int, 9),
    ("--max-window", "extraction.max_window", int, 16),
    ("--stride", "extraction.stride", int, 1),
]
EVAL_FLAGS = [
    ("--gate", "eval.gate", float, 0.2),
    ("--nms-tiou", "eval.nms_tiou", float, 0.5),
    ("--eval-min-window", "eval.min_window", int, 9),
    ("--eval-max-window", "eval.max_window", int, 16),
]
MEMORY_FLAGS = [
    ("--source-tag", "memory.source_tag", str, "news-aligned"),
]

TRAIN_SECTIONS = {"train-base": ["train_base"], "align": ["train_joint"],
                  "train-full": ["train_full"],
                  "pipeline": ["train_base", "train_joint", "train_full"]}
STAGE_FLAGS = {
    "extract": EXTRACT_FLAGS, "build-memory": MEMORY_FLAGS,
    "localize": EVAL_FLAGS, "eval": EVAL_FLAGS,
    "pipeline": EXTRACT_FLAGS + MEMORY_FLAGS + EVAL_FLAGS,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="signxfer", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["pipeline"]:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "pipeline" else "run every stage in order")
        p.add_argument("--config", "-c", help="YAML configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path override, e.g. train_full.epochs=10 (repeatable)")
        p.add_argument("--seed", type=int, help="top-level seed (default: 0)")
        p.add_argument("--dataset-dir", help="dataset directory (default: data)")
        p.add_argument("--output-dir", help="artifact directory (default: out)")
        p.add_argument("--log-level", default="INFO", help="logging level (default: INFO)")
        if name in TRAIN_SECTIONS:
            for flag, key, tp, default in TRAIN_FLAGS:
                p.add_argument(flag, dest=key, type=tp, help=f"(default: {default})")
        for flag, key, tp, default in STAGE_FLAGS.get(name, []):
            p.add_argument(flag, dest=key, type=tp, help=f"(default: {default})")
        if name in ("build-memory", "pipeline"):
            p.add_argument("--fallback", dest="memory.fallback", action="store_true", default=None,
                           help="use isolated clips for classes without news windows (default: off)")
        if name in ("align", "pipeline"):
            p.add_argument("--no-align", dest="align.enabled", action="store_false", default=None,
                           help="skip coarse alignment; the base model builds the memory (default: on)")
    return parser


def _overrides(args, command: str) -> list:
    """``--set`` strings first, then typed values from dedicated flags (which win)."""
    out: list = list(args.overrides)
    for key in ("seed", "dataset_dir", "output_dir"):
        val = getattr(args, key)
        if val is not None:
            out.append((key, val))
    train_keys = {k for _, k, _, _ in TRAIN_FLAGS}
    for key, val in vars(args).items():
        if val is None:
            continue
        if key in train_keys:
            out += [(f"{section}.{key}", val) for section in TRAIN_SECTIONS.get(command, [])]
        elif "." in key:
            out.append((key, val))
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; this tool reserves 2 for data errors
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, _overrides(args, args.command))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    fn = stage_pipeline if args.command == "pipeline" else STAGES[args.command]
    try:
        fn(cfg)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (MissingArtifact, FileNotFoundError, DatasetError, CheckpointError,
            EmptyClassError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
