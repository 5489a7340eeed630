"""Command-line front end.

Every subcommand is a thin wrapper over the library: it resolves its
configuration, runs one pipeline, and writes the resolved config, an input
manifest (paths and content hashes), and the tool version next to its
outputs so any artifact directory is reproducible from its own records.

Exit codes: 0 success, 1 validation problem (bad flags, missing or
malformed inputs), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import evalkit, pipelines, presets, runtime, synthlab
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .encoder import ConfigError, EncoderConfig, init_model
from .pipelines import LanguageCluster, TrainConfig
from .tokenizer import Vocabulary, VocabularyError, train_vocab

logger = logging.getLogger(__name__)

_VALIDATION_ERRORS = (
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    ValueError,  # covers ConfigError, VocabularyError, CorpusConfigError, ...
    KeyError,
    LookupError,
    CheckpointError,
    json.JSONDecodeError,
)

ARCHES = ("micro-teacher", "micro-student-1", "micro-student-2")


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# run metadata
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_run_metadata(out_dir: Path, resolved: dict, inputs: list[Path]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(resolved, sort_keys=True, indent=2, default=str) + "\n",
        encoding="utf-8",
    )
    manifest = {
        "tool_version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs if p.is_file()},
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {p}")
    return p


def _arch_config(name: str, vocab_size: int, max_len: int) -> EncoderConfig:
    if name == "micro-teacher":
        return presets.micro_teacher_config(vocab_size, max_len)
    if name == "micro-student-1":
        return presets.micro_student_config(vocab_size, layers=1, max_len=max_len)
    if name == "micro-student-2":
        return presets.micro_student_config(vocab_size, layers=2, max_len=max_len)
    raise UsageError(f"unknown architecture {name!r}; expected one of {ARCHES}")


def _parse_kv(text: str, cast=str) -> dict:
    out = {}
    for item in text.split(","):
        if not item:
            continue
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k] = cast(v)
    if not out:
        raise UsageError(f"no key=value entries in {text!r}")
    return out


def _read_pair_files(paths: list[str]) -> list[synthlab.PerturbedPair]:
    pairs = []
    for p in paths:
        pairs.extend(synthlab.read_pairs(_require_file(p)))
    if not pairs:
        raise UsageError("no pairs found in the given files")
    return pairs


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_vocab(args) -> int:
    lines = []
    for f in args.corpus:
        lines.extend(_require_file(f).read_text(encoding="utf-8").splitlines())
    vocab = train_vocab(lines, args.target_size, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out)
    _write_run_metadata(out.parent, vars(args) | {"vocab_size": vocab.size},
                        [Path(f) for f in args.corpus])
    print(f"wrote vocabulary of {vocab.size} tokens to {out}")
    return 0


def _cmd_synth(args) -> int:
    codes = args.languages.split(",")
    world = synthlab.make_world(codes, concept_space=args.concept_space)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    synthlab.save_world(world, out_dir / "world.json")
    for i, code in enumerate(codes):
        sentences, _ = synthlab.gen_corpus(world[code], args.sentences_per_lang, args.seed + i)
        (out_dir / f"{code}.txt").write_text("\n".join(sentences) + "\n", encoding="utf-8")
    if args.rating_segments:
        ratings = presets.build_rating_corpus(
            world, args.rating_segments, args.seed,
            systems=presets.default_system_profiles(args.systems), pivot=args.pivot,
        )
        pipelines.write_ratings(ratings, out_dir / "ratings.jsonl")
    _write_run_metadata(out_dir, vars(args), [])
    print(f"wrote {len(codes)} corpora to {out_dir}")
    return 0


def _cmd_pretrain(args) -> int:
    vocab = Vocabulary.load(_require_file(args.vocab))
    corpora = {}
    for f in args.corpus:
        corpora[Path(f).stem] = _require_file(f).read_text(encoding="utf-8").splitlines()
    config = _arch_config(args.arch, vocab.size, args.max_len)
    model = init_model(config, args.seed)
    train_cfg = TrainConfig(
        lr=args.lr, steps=args.steps, batch_size=args.batch_size,
        eval_every=max(1, args.steps // 4), warmup=args.warmup, seed=args.seed,
        max_len=args.max_len,
    )
    pipelines.pretrain_mlm(model, vocab, corpora, train_cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    _write_run_metadata(
        out.parent,
        vars(args) | {"encoder_config": config.to_dict()},
        [Path(args.vocab), *map(Path, args.corpus)],
    )
    print(f"wrote pretrained checkpoint to {out}")
    return 0


def _cmd_perturb(args) -> int:
    world = synthlab.load_world(_require_file(args.world))
    vocab = Vocabulary.load(_require_file(args.vocab))
    counts = _parse_kv(args.counts, int)
    mix = _parse_kv(args.mix, float) if args.mix else None
    mlm = load_checkpoint(_require_file(args.mlm)) if args.mlm else None
    kit = synthlab.PerturberKit(
        vocab=vocab,
        mlm=mlm,
        translator=synthlab.ConceptPivotTranslator(world, p_noise=args.p_noise),
        beam_width=args.beam_width,
    )
    out_dir = Path(args.out_dir)
    pairs = synthlab.build_distill_corpus(
        world, counts, mix, args.seed, kit,
        drop_fraction=args.drop_fraction, shard_size=args.shard_size,
        out_dir=out_dir, corpus_name=args.corpus_name,
    )
    inputs = [Path(args.world), Path(args.vocab)] + ([Path(args.mlm)] if args.mlm else [])
    _write_run_metadata(out_dir, vars(args) | {"pairs_written": len(pairs)}, inputs)
    print(f"wrote {len(pairs)} pairs to {out_dir}")
    return 0


def _cmd_finetune(args) -> int:
    vocab = Vocabulary.load(_require_file(args.vocab))
    model = load_checkpoint(_require_file(args.model))
    ratings = pipelines.read_ratings(_require_file(args.ratings))
    train, evalset = pipelines.split_ratings(ratings, args.holdout, args.seed)
    sweep = tuple(float(x) for x in args.lr_sweep.split(",")) if args.lr_sweep else None
    cfg = TrainConfig(
        lr=args.lr, steps=args.steps, batch_size=args.batch_size,
        eval_every=args.eval_every, seed=args.seed, max_len=args.max_len,
        lr_sweep=sweep, z_normalize=args.z_normalize,
    )
    result = pipelines.finetune_regression(model, train, evalset, cfg, vocab)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out)
    _write_run_metadata(
        out.parent,
        vars(args) | {"best_eval_mse": result.best_eval, "lr_used": result.lr},
        [Path(args.vocab), Path(args.model), Path(args.ratings)],
    )
    print(f"wrote fine-tuned checkpoint to {out} (eval mse {result.best_eval:.6f})")
    return 0


def _cmd_label(args) -> int:
    vocab = Vocabulary.load(_require_file(args.vocab))
    teacher = load_checkpoint(_require_file(args.teacher))
    pairs = _read_pair_files(args.pairs)
    labeled = pipelines.pseudo_label(teacher, pairs, vocab, batch_size=args.batch_size)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for ex in labeled:
            fh.write(json.dumps(asdict(ex), sort_keys=True) + "\n")
    _write_run_metadata(
        out.parent, vars(args) | {"labeled": len(labeled)},
        [Path(args.teacher), Path(args.vocab), *map(Path, args.pairs)],
    )
    print(f"wrote {len(labeled)} pseudo-labels to {out}")
    return 0


def _read_labels(path: Path) -> list[pipelines.DistillExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(pipelines.DistillExample(**json.loads(line)))
    if not out:
        raise UsageError(f"no labels in {path}")
    return out


def _cmd_distill(args) -> int:
    vocab = Vocabulary.load(_require_file(args.vocab))
    if args.student_init:
        student = load_checkpoint(_require_file(args.student_init))
    else:
        student = init_model(_arch_config(args.arch, vocab.size, args.max_len), args.seed)
    labels = _read_labels(_require_file(args.labels))
    cfg = TrainConfig(
        lr=args.lr, steps=args.steps, batch_size=args.batch_size,
        eval_every=args.steps, seed=args.seed, max_len=args.max_len,
    )
    result = pipelines.distill_student(student, labels, cfg, vocab)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out)
    inputs = [Path(args.vocab), Path(args.labels)]
    if args.student_init:
        inputs.append(Path(args.student_init))
    _write_run_metadata(out.parent, vars(args), inputs)
    print(f"wrote distilled checkpoint to {out}")
    return 0


def _load_clusters(path: Path, vocab_size: int, max_len: int) -> list[LanguageCluster]:
    spec = json.loads(path.read_text(encoding="utf-8"))
    clusters = []
    for entry in spec:
        clusters.append(
            LanguageCluster(
                cluster_id=entry["cluster_id"],
                languages=tuple(entry["languages"]),
                student_config=_arch_config(
                    entry.get("arch", "micro-student-1"), vocab_size, max_len
                ),
            )
        )
    return clusters


def _cmd_distill_1ton(args) -> int:
    vocab = Vocabulary.load(_require_file(args.vocab))
    teacher = load_checkpoint(_require_file(args.teacher))
    pairs = _read_pair_files(args.pairs)
    clusters = _load_clusters(_require_file(args.clusters), vocab.size, args.max_len)
    cfg = TrainConfig(
        lr=args.lr, steps=args.steps, batch_size=args.batch_size,
        eval_every=args.steps, seed=args.seed, max_len=args.max_len,
    )
    result = pipelines.run_1toN(teacher, clusters, pairs, cfg, vocab)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cid, student in result.students.items():
        save_checkpoint(student, out_dir / f"{cid}.ckpt")
    (out_dir / "routing.json").write_text(
        json.dumps(result.routing, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _write_run_metadata(
        out_dir, vars(args),
        [Path(args.teacher), Path(args.vocab), Path(args.clusters), *map(Path, args.pairs)],
    )
    print(f"wrote {len(result.students)} students and routing table to {out_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    if bool(args.scores) == bool(args.model):
        raise UsageError("provide exactly one of --scores or (--model and --ratings)")
    if args.model and not args.ratings:
        raise UsageError("--model requires --ratings")
    if args.scores:
        segments = evalkit.read_scored_segments(_require_file(args.scores))
        inputs = [Path(args.scores)]
    else:
        vocab = Vocabulary.load(_require_file(args.vocab))
        model = load_checkpoint(_require_file(args.model))
        ratings = pipelines.read_ratings(_require_file(args.ratings))
        segments = evalkit.score_ratings(model, vocab, ratings)
        inputs = [Path(args.model), Path(args.vocab), Path(args.ratings)]
    report = evalkit.build_eval_report(
        model_id=args.model_id,
        runs={args.seed: segments},
        darr_threshold=args.threshold,
        pivot=args.pivot,
        exclude_outliers=not args.keep_outliers,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    evalkit.report_to_csv(report, out_dir / "report.csv")
    evalkit.report_to_json(report, out_dir / "report.json")
    table = evalkit.format_report_table([(args.model_id, report)])
    (out_dir / "report.txt").write_text(table, encoding="utf-8")
    if args.scores is None:
        evalkit.write_scored_segments(segments, out_dir / "scores.jsonl")
    _write_run_metadata(out_dir, vars(args), inputs)
    print(table, end="")
    return 0


def _cmd_sweep(args) -> int:
    vocab = Vocabulary.load(_require_file(args.vocab))
    base = load_checkpoint(_require_file(args.base))
    ratings = pipelines.read_ratings(_require_file(args.ratings))
    eval_ratings = pipelines.read_ratings(_require_file(args.eval_ratings))
    targets = args.targets.split(",")
    seeds = list(range(args.seeds))

    def train_fn(subset, seed):
        model = base.clone()
        cfg = TrainConfig(
            lr=args.lr, steps=args.steps, batch_size=args.batch_size,
            eval_every=max(1, args.steps // 4), seed=seed, max_len=args.max_len,
        )
        train, evalset = pipelines.split_ratings(subset, args.holdout, seed)
        return pipelines.finetune_regression(model, train, evalset, cfg, vocab).model

    result = evalkit.language_sweep(
        train_fn, ratings, eval_ratings, targets, vocab,
        n_buckets=args.buckets, seeds=seeds, darr_threshold=args.threshold,
        pivot=args.pivot,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.to_plot_csv(out_dir / "sweep.csv")
    for point in result.points:
        evalkit.report_to_json(point.report, out_dir / f"point_{point.n_languages:02d}.json")
    _write_run_metadata(
        out_dir, vars(args),
        [Path(args.vocab), Path(args.base), Path(args.ratings), Path(args.eval_ratings)],
    )
    print(f"wrote sweep series ({len(result.points)} points) to {out_dir}")
    return 0


def _cmd_ablate_pretrain(args) -> int:
    world = synthlab.load_world(_require_file(args.world))
    vocab = Vocabulary.load(_require_file(args.vocab))
    ratings = pipelines.read_ratings(_require_file(args.ratings))
    eval_ratings = pipelines.read_ratings(_require_file(args.eval_ratings))
    full = args.full.split(",")
    restricted = args.restricted.split(",")

    def protocol(langs, seed):
        corpora = {
            code: synthlab.gen_corpus(world[code], args.sentences_per_lang, seed)[0]
            for code in langs
        }
        model = init_model(_arch_config(args.arch, vocab.size, args.max_len), seed)
        pre_cfg = presets.desk_pretrain(steps=args.pretrain_steps, seed=seed)
        pipelines.pretrain_mlm(model, vocab, corpora, pre_cfg)
        train, evalset = pipelines.split_ratings(ratings, args.holdout, seed)
        ft_cfg = TrainConfig(
            lr=args.lr, steps=args.steps, batch_size=args.batch_size,
            eval_every=max(1, args.steps // 4), seed=seed, max_len=args.max_len,
        )
        ft = pipelines.finetune_regression(model, train, evalset, ft_cfg, vocab)
        segments = evalkit.score_ratings(ft.model, vocab, eval_ratings)
        report = evalkit.build_eval_report(
            "ablation", {seed: segments}, darr_threshold=args.threshold, pivot=args.pivot
        )
        return {
            lp: report.column(lp, "darr").mean
            for lp in report.lang_pairs
            if report.column(lp, "darr").mean is not None
        }

    result = evalkit.pretrain_ablation(protocol, full, restricted, list(range(args.seeds)))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "per_pair": result.per_pair,
        "medians": result.medians(),
        "full_languages": full,
        "restricted_languages": restricted,
    }
    (out_dir / "ablation.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _write_run_metadata(
        out_dir, vars(args),
        [Path(args.world), Path(args.vocab), Path(args.ratings), Path(args.eval_ratings)],
    )
    print(f"wrote ablation results to {out_dir}")
    return 0


def _cmd_bench(args) -> int:
    vocab = Vocabulary.load(_require_file(args.vocab))
    models = {}
    for name, path in _parse_kv(args.models).items():
        models[name] = (load_checkpoint(_require_file(path)), vocab)
    ratings = pipelines.read_ratings(_require_file(args.corpus))
    corpus = [(ex.reference, ex.candidate) for ex in ratings]
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else None
    results = runtime.throughput_bench(
        models, corpus, modes=args.modes.split(","), repeats=args.repeats,
        batch_size=args.batch_size, sizes=sizes,
    )
    out = Path(args.out)
    runtime.bench_to_csv(results, out)
    for row in runtime.speedup_table(results):
        print(
            f"{row['model']:>16s} {row['mode']:>9s} n={row['n_examples']:<6d} "
            f"{row['tuples_per_second']:8.1f} tuples/s  "
            f"({row['speedup_vs_baseline']:.2f}x baseline)"
        )
    _write_run_metadata(out.parent, vars(args), [Path(args.vocab), Path(args.corpus)])
    return 0


def _cmd_report(args) -> int:
    rows = []
    for label, path in _parse_kv(args.reports).items():
        rows.append((label, evalkit.load_report_json(_require_file(path))))
    teacher_label, teacher_path = next(iter(_parse_kv(args.teacher).items()))
    teacher = evalkit.load_report_json(_require_file(teacher_path))
    all_rows = [(teacher_label, teacher)] + rows
    table = evalkit.format_report_table(all_rows, metric=args.metric)

    ratio_col = f"{teacher.pivot}-*"
    teacher_mean = teacher.column(ratio_col, args.metric).mean
    lines = [table.rstrip("\n"), "", f"ratio vs {teacher_label} on {ratio_col}:"]
    for label, rep in all_rows:
        mean = rep.column(ratio_col, args.metric).mean
        if mean is None or teacher_mean in (None, 0):
            lines.append(f"  {label}: n/a")
        else:
            lines.append(f"  {label}: {mean / teacher_mean:.3f}")
    text = "\n".join(lines) + "\n"
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "grid.txt").write_text(text, encoding="utf-8")
    with open(out_dir / "grid.csv", "w", encoding="utf-8") as fh:
        import csv as _csv

        writer = _csv.writer(fh)
        columns = teacher.aggregate_names() + teacher.lang_pairs
        writer.writerow(["row"] + columns + ["ratio_vs_teacher"])
        for label, rep in all_rows:
            mean = rep.column(ratio_col, args.metric).mean
            ratio = "" if mean is None or not teacher_mean else f"{mean / teacher_mean:.4f}"
            cells = []
            for c in columns:
                v = rep.column(c, args.metric).mean
                cells.append("" if v is None else f"{v:.4f}")
            writer.writerow([label] + cells + [ratio])
    _write_run_metadata(out_dir, vars(args), [])
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metriclab",
        description="Train, distill, and benchmark learned text-evaluation metrics.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, workers=True):
        if seed:
            p.add_argument("--seed", type=int, default=0)
        if workers:
            p.add_argument("--workers", type=int, default=1,
                           help="parallel job bound for sharded work")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded numeric mode")

    p = sub.add_parser("vocab", help="train a subword vocabulary")
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--target-size", type=int, default=4096)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(fn=_cmd_vocab)

    p = sub.add_parser("synth", help="generate synthetic corpora and ratings")
    p.add_argument("--languages", required=True, help="comma-separated codes")
    p.add_argument("--sentences-per-lang", type=int, default=2000)
    p.add_argument("--concept-space", type=int, default=800)
    p.add_argument("--rating-segments", type=int, default=0,
                   help="also emit ratings with this many segments per language")
    p.add_argument("--systems", type=int, default=6)
    p.add_argument("--pivot", default="en")
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("pretrain", help="masked-LM pretraining")
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--arch", default="micro-teacher", choices=ARCHES)
    p.add_argument("--steps", type=int, default=800)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--warmup", type=int, default=61)
    p.add_argument("--max-len", type=int, default=32)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(fn=_cmd_pretrain)

    p = sub.add_parser("perturb", help="build a perturbed distillation corpus")
    p.add_argument("--world", required=True, help="world.json from synth")
    p.add_argument("--vocab", required=True)
    p.add_argument("--mlm", default=None, help="checkpoint for mask substitution")
    p.add_argument("--counts", required=True, help="lang=count,...")
    p.add_argument("--mix", default=None, help="perturber=weight,...")
    p.add_argument("--p-noise", type=float, default=0.3)
    p.add_argument("--beam-width", type=int, default=8)
    p.add_argument("--drop-fraction", type=float, default=0.3)
    p.add_argument("--shard-size", type=int, default=5000)
    p.add_argument("--corpus-name", default="distill")
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(fn=_cmd_perturb)

    p = sub.add_parser("finetune", help="regression fine-tuning on ratings")
    p.add_argument("--vocab", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--ratings", required=True)
    p.add_argument("--holdout", type=float, default=0.05)
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--lr-sweep", default=None, help="comma-separated rates")
    p.add_argument("--eval-every", type=int, default=100)
    p.add_argument("--max-len", type=int, default=32)
    p.add_argument("--z-normalize", action="store_true")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(fn=_cmd_finetune)

    p = sub.add_parser("label", help="teacher pseudo-labeling of pair files")
    p.add_argument("--vocab", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--pairs", nargs="+", required=True)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(fn=_cmd_label)

    p = sub.add_parser("distill", help="train a student on teacher labels")
    p.add_argument("--vocab", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--student-init", default=None, help="checkpoint to start from")
    p.add_argument("--arch", default="micro-student-1", choices=ARCHES)
    p.add_argument("--steps", type=int, default=1200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--max-len", type=int, default=32)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(fn=_cmd_distill)

    p = sub.add_parser("distill-1toN", help="cluster-specialized students")
    p.add_argument("--vocab", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--pairs", nargs="+", required=True)
    p.add_argument("--clusters", required=True, help="clusters JSON")
    p.add_argument("--steps", type=int, default=1200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--max-len", type=int, default=32)
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(fn=_cmd_distill_1ton)

    p = sub.add_parser("evaluate", help="correlation report from scores or a model")
    p.add_argument("--scores", default=None, help="scored-segments JSONL")
    p.add_argument("--model", default=None)
    p.add_argument("--vocab", default=None)
    p.add_argument("--ratings", default=None)
    p.add_argument("--model-id", default="model")
    p.add_argument("--threshold", type=float, default=presets.DESK_DARR_THRESHOLD)
    p.add_argument("--pivot", default="en")
    p.add_argument("--keep-outliers", action="store_true")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("sweep", help="cumulative fine-tuning-language sweep")
    p.add_argument("--vocab", required=True)
    p.add_argument("--base", required=True, help="pretrained checkpoint")
    p.add_argument("--ratings", required=True)
    p.add_argument("--eval-ratings", required=True)
    p.add_argument("--targets", required=True, help="zero-shot language codes")
    p.add_argument("--buckets", type=int, default=3)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--holdout", type=float, default=0.05)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--max-len", type=int, default=32)
    p.add_argument("--threshold", type=float, default=presets.DESK_DARR_THRESHOLD)
    p.add_argument("--pivot", default="en")
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("ablate-pretrain", help="pretraining-language ablation")
    p.add_argument("--world", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--ratings", required=True)
    p.add_argument("--eval-ratings", required=True)
    p.add_argument("--full", required=True, help="comma-separated codes")
    p.add_argument("--restricted", required=True)
    p.add_argument("--arch", default="micro-student-1", choices=ARCHES)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--sentences-per-lang", type=int, default=1500)
    p.add_argument("--pretrain-steps", type=int, default=300)
    p.add_argument("--holdout", type=float, default=0.05)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--max-len", type=int, default=32)
    p.add_argument("--threshold", type=float, default=presets.DESK_DARR_THRESHOLD)
    p.add_argument("--pivot", default="en")
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(fn=_cmd_ablate_pretrain)

    p = sub.add_parser("bench", help="throughput benchmark")
    p.add_argument("--vocab", required=True)
    p.add_argument("--models", required=True, help="name=ckpt,...")
    p.add_argument("--corpus", required=True, help="ratings file used as text pairs")
    p.add_argument("--modes", default="padded,bucketed")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--sizes", default=None, help="comma-separated corpus sizes")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("report", help="side-by-side grid with teacher ratios")
    p.add_argument("--reports", required=True, help="label=report.json,...")
    p.add_argument("--teacher", required=True, help="label=report.json")
    p.add_argument("--metric", default="darr")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(fn=_cmd_report)

    return parser


def dispatch(argv: list[str]) -> int:
    """Run one subcommand; 0 ok, 1 validation error, 2 runtime error."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; flag errors are validation errors
        return 0 if exc.code == 0 else 1
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    if getattr(args, "deterministic", False):
        args.workers = 1
    try:
        return args.fn(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        logger.exception("run failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
