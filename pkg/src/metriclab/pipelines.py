"""Training pipelines: masked-LM pretraining, regression fine-tuning with
best-checkpoint selection, teacher pseudo-labeling, single and 1-to-N
distillation, and the per-cluster fine-tuning baseline."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, asdict, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import numcore as nc
from .encoder import Batch, EncoderConfig, MetricModel, init_model, pack_batch
from .runtime import score_stream
from .tokenizer import NUM_SPECIALS, Vocabulary, encode_pair, encode_single

logger = logging.getLogger(__name__)


class SplitError(ValueError):
    """A reference-disjoint split cannot be built from the data."""


class RoutingError(LookupError):
    pass


class ClusterError(ValueError):
    pass


class PseudoLabelError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# records and configs
# ---------------------------------------------------------------------------


@dataclass
class RatingExample:
    lang_pair: str  # "src-tgt"
    reference: str
    candidate: str
    rating: float
    system: str
    segment_id: str

    @property
    def target_lang(self) -> str:
        parts = self.lang_pair.split("-")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ValueError(f"malformed lang_pair {self.lang_pair!r}")
        return parts[1]


@dataclass
class DistillExample:
    language: str
    reference: str
    candidate: str
    teacher_score: float


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    steps: int
    batch_size: int
    eval_every: int = 250
    seed: int = 0
    max_len: int = 32
    lr_sweep: tuple[float, ...] | None = None
    warmup: int = 100  # pretraining schedule only
    z_normalize: bool = False

    def __post_init__(self):
        if self.steps < self.eval_every or self.eval_every < 1:
            raise ValueError(
                f"need steps >= eval_every >= 1, got steps={self.steps}, "
                f"eval_every={self.eval_every}"
            )
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class LanguageCluster:
    cluster_id: str
    languages: tuple[str, ...]
    student_config: EncoderConfig | None = None


# ---------------------------------------------------------------------------
# ratings io
# ---------------------------------------------------------------------------

_TSV_COLUMNS = ("lang_pair", "system", "segment_id", "reference", "candidate", "score")


def read_ratings(path: str | Path) -> list[RatingExample]:
    """JSON-lines records, or WMT-style TSV when the suffix is .tsv."""
    path = Path(path)
    out = []
    if path.suffix == ".tsv":
        with open(path, encoding="utf-8") as fh:
            for ln, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                cells = line.split("\t")
                if len(cells) != len(_TSV_COLUMNS):
                    raise ValueError(f"{path}:{ln}: expected {len(_TSV_COLUMNS)} columns")
                rec = dict(zip(_TSV_COLUMNS, cells))
                out.append(
                    RatingExample(
                        lang_pair=rec["lang_pair"],
                        reference=rec["reference"],
                        candidate=rec["candidate"],
                        rating=float(rec["score"]),
                        system=rec["system"],
                        segment_id=rec["segment_id"],
                    )
                )
        return out
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(
                RatingExample(
                    lang_pair=rec["lang_pair"],
                    reference=rec["reference"],
                    candidate=rec["candidate"],
                    rating=float(rec["score"]),
                    system=rec["system"],
                    segment_id=rec["segment_id"],
                )
            )
    return out


def write_ratings(examples: Iterable[RatingExample], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {
                "lang_pair": ex.lang_pair,
                "reference": ex.reference,
                "candidate": ex.candidate,
                "score": ex.rating,
                "system": ex.system,
                "segment_id": ex.segment_id,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def split_ratings(
    examples: Sequence[RatingExample], holdout_fraction: float, seed: int
) -> tuple[list[RatingExample], list[RatingExample]]:
    """Random split adjusted so no reference string appears on both sides."""
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    groups: dict[str, list[RatingExample]] = defaultdict(list)
    for ex in examples:
        groups[ex.reference].append(ex)
    if len(groups) < 2:
        raise SplitError("all examples share one reference; cannot split disjointly")
    keys = sorted(groups)
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(keys))
    target = holdout_fraction * len(examples)
    eval_keys: set[str] = set()
    count = 0
    for idx in order:
        if count >= target:
            break
        key = keys[int(idx)]
        group_n = len(groups[key])
        # stop short if overshooting is worse than stopping
        if count > 0 and abs(count + group_n - target) > abs(count - target):
            break
        eval_keys.add(key)
        count += group_n
    if not eval_keys:  # target smaller than every group
        eval_keys.add(keys[int(order[0])])
    train, evalset = [], []
    for ex in examples:
        (evalset if ex.reference in eval_keys else train).append(ex)
    if not train:
        raise SplitError("split left the training side empty")
    return train, evalset


# ---------------------------------------------------------------------------
# masked-LM pretraining
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: MetricModel
    history: list[tuple[int, float]]
    lr: float | None = None
    eval_history: list[tuple[int, float]] = field(default_factory=list)
    best_eval: float | None = None


def _flatten_corpora(corpora) -> list[str]:
    if isinstance(corpora, Mapping):
        seqs = [corpora[k] for k in sorted(corpora)]
    elif corpora and isinstance(corpora[0], str):
        seqs = [corpora]
    else:
        seqs = list(corpora)
    flat = [s for seq in seqs for s in seq]
    if not flat:
        raise ValueError("no sentences to pretrain on")
    return flat


def apply_mlm_masking(
    batch: Batch, rng: np.random.Generator, vocab_size: int, mask_rate: float = 0.15
) -> tuple[Batch, tuple[np.ndarray, np.ndarray], np.ndarray]:
    """BERT-style corruption: 15% of content tokens, 80/10/10 mask/random/keep.

    Returns the corrupted batch, the (rows, cols) mask positions, and the
    original ids at those positions.
    """
    from .tokenizer import MASK_ID

    ids = batch.ids.copy()
    rows_all, cols_all = [], []
    for r in range(ids.shape[0]):
        content = np.where((batch.mask[r] > 0) & (ids[r] >= NUM_SPECIALS))[0]
        if content.size == 0:
            continue
        k = max(1, int(round(mask_rate * content.size)))
        picked = rng.choice(content, size=min(k, content.size), replace=False)
        rows_all.extend([r] * len(picked))
        cols_all.extend(int(c) for c in picked)
    rows = np.asarray(rows_all, dtype=np.int64)
    cols = np.asarray(cols_all, dtype=np.int64)
    originals = ids[rows, cols].copy()
    action = rng.random(rows.size)
    mask_slot = action < 0.8
    random_slot = (action >= 0.8) & (action < 0.9)
    ids[rows[mask_slot], cols[mask_slot]] = MASK_ID
    n_rand = int(random_slot.sum())
    if n_rand:
        ids[rows[random_slot], cols[random_slot]] = rng.integers(
            NUM_SPECIALS, vocab_size, size=n_rand
        )
    return Batch(ids=ids, mask=batch.mask, segments=batch.segments), (rows, cols), originals


def pretrain_mlm(
    model: MetricModel,
    vocab: Vocabulary,
    corpora,
    config: TrainConfig,
    log_every: int = 100,
) -> TrainResult:
    """Masked-LM training with linear warmup then inverse-sqrt decay.

    Sentences are drawn uniformly over the concatenated corpora.
    """
    sentences = _flatten_corpora(corpora)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    encoded = None
    if len(sentences) <= 50_000:
        encoded = [encode_single(s, vocab, config.max_len) for s in sentences]
    adam = nc.Adam(model.parameters())
    history = []
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(sentences), size=config.batch_size)
        if encoded is not None:
            picked = [encoded[int(i)] for i in idx]
        else:
            picked = [encode_single(sentences[int(i)], vocab, config.max_len) for i in idx]
        width = max(p.length for p in picked)
        batch = pack_batch(picked, width=width)
        masked, positions, originals = apply_mlm_masking(
            batch, rng, model.config.vocab_size
        )
        loss = model.mlm_loss(masked, positions, originals, train=True, rng=rng)
        model.zero_grads()
        nc.backward(loss)
        adam.step(nc.lr_at(step, config.lr, config.warmup))
        value = loss.item()
        history.append((step, value))
        if step == 1 or step % log_every == 0:
            logger.info("mlm step %d loss %.4f", step, value)
    return TrainResult(model=model, history=history, lr=config.lr)


def mlm_eval_loss(
    model: MetricModel,
    vocab: Vocabulary,
    sentences: Sequence[str],
    seed: int,
    max_len: int = 32,
    batch_size: int = 64,
) -> float:
    """Average masked-LM loss over a held-out corpus with fixed masking."""
    rng = np.random.Generator(np.random.PCG64(seed))
    losses = []
    with nc.no_grad():
        for start in range(0, len(sentences), batch_size):
            chunk = sentences[start : start + batch_size]
            pairs = [encode_single(s, vocab, max_len) for s in chunk]
            batch = pack_batch(pairs, width=max(p.length for p in pairs))
            masked, positions, originals = apply_mlm_masking(
                batch, rng, model.config.vocab_size
            )
            loss = model.mlm_loss(masked, positions, originals)
            losses.append((loss.item(), len(positions[0])))
    total = sum(n for _, n in losses)
    return sum(v * n for v, n in losses) / total


# ---------------------------------------------------------------------------
# regression fine-tuning
# ---------------------------------------------------------------------------


def _z_stats(train: Sequence[RatingExample]) -> dict[str, tuple[float, float]]:
    by_pair: dict[str, list[float]] = defaultdict(list)
    for ex in train:
        by_pair[ex.lang_pair].append(ex.rating)
    return {
        lp: (float(np.mean(v)), max(float(np.std(v)), 1e-6)) for lp, v in by_pair.items()
    }


def _targets(
    examples: Sequence[RatingExample], stats: dict[str, tuple[float, float]] | None
) -> np.ndarray:
    if stats is None:
        return np.asarray([ex.rating for ex in examples], dtype=np.float32)
    out = []
    for ex in examples:
        mu, sd = stats.get(ex.lang_pair, (0.0, 1.0))
        out.append((ex.rating - mu) / sd)
    return np.asarray(out, dtype=np.float32)


def _eval_mse(
    model: MetricModel, encoded, targets: np.ndarray, batch_size: int = 256
) -> float:
    err = 0.0
    with nc.no_grad():
        for start in range(0, len(encoded), batch_size):
            chunk = encoded[start : start + batch_size]
            batch = pack_batch(chunk, width=max(p.length for p in chunk))
            pred = model.score(batch).data
            diff = pred.astype(np.float64) - targets[start : start + len(chunk)]
            err += float(diff @ diff)
    return err / len(encoded)


def finetune_regression(
    model: MetricModel,
    train: Sequence[RatingExample],
    eval: Sequence[RatingExample],
    config: TrainConfig,
    vocab: Vocabulary,
    log_every: int = 500,
) -> TrainResult:
    """Minimize MSE between scores and ratings; keep the best eval checkpoint.

    When ``config.lr_sweep`` is set, one run per rate starts from the same
    initial parameters and the best final eval loss wins. The returned model
    has the masked-LM head removed.
    """
    if not train or not eval:
        raise ValueError("train and eval sets must both be non-empty")
    if config.lr_sweep:
        initial = model.state_arrays()
        initial = {k: v.copy() for k, v in initial.items()}
        best: TrainResult | None = None
        for lr in config.lr_sweep:
            model.load_state_arrays(initial)
            run = _finetune_once(model, train, eval, replace(config, lr=lr, lr_sweep=None), vocab, log_every)
            logger.info("lr sweep: lr=%g best eval %.6f", lr, run.best_eval)
            if best is None or run.best_eval < best.best_eval:
                best = run
        return best
    return _finetune_once(model, train, eval, config, vocab, log_every)


def _finetune_once(
    model: MetricModel,
    train: Sequence[RatingExample],
    eval: Sequence[RatingExample],
    config: TrainConfig,
    vocab: Vocabulary,
    log_every: int,
) -> TrainResult:
    stats = _z_stats(train) if config.z_normalize else None
    enc_train = [encode_pair(ex.reference, ex.candidate, vocab, config.max_len) for ex in train]
    enc_eval = [encode_pair(ex.reference, ex.candidate, vocab, config.max_len) for ex in eval]
    y_train = _targets(train, stats)
    y_eval = _targets(eval, stats)

    rng = np.random.Generator(np.random.PCG64(config.seed))
    adam = nc.Adam(model.parameters())
    history, eval_history = [], []
    best_eval = np.inf
    best_arrays = None
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(train), size=config.batch_size)
        picked = [enc_train[int(i)] for i in idx]
        batch = pack_batch(picked, width=max(p.length for p in picked))
        target = nc.Tensor(y_train[idx])
        loss = nc.mean_squared_error(model.score(batch, train=True, rng=rng), target)
        model.zero_grads()
        nc.backward(loss)
        adam.step(config.lr)
        history.append((step, loss.item()))
        if step % config.eval_every == 0 or step == config.steps:
            e = _eval_mse(model, enc_eval, y_eval)
            eval_history.append((step, e))
            if e < best_eval:
                best_eval = e
                best_arrays = {k: v.copy() for k, v in model.state_arrays().items()}
            if step % log_every == 0:
                logger.info("finetune step %d train %.5f eval %.5f", step, history[-1][1], e)
    model.load_state_arrays(best_arrays)
    exported = model.drop_mlm_head() if model.has_mlm_head else model.clone()
    return TrainResult(
        model=exported,
        history=history,
        lr=config.lr,
        eval_history=eval_history,
        best_eval=float(best_eval),
    )


# ---------------------------------------------------------------------------
# pseudo-labeling and distillation
# ---------------------------------------------------------------------------


def pairs_from_ratings(ratings: Sequence[RatingExample]) -> list[tuple[str, str, str]]:
    """Rating rows as bare (language, reference, candidate) triples."""
    return [(ex.target_lang, ex.reference, ex.candidate) for ex in ratings]


def _as_triples(pairs) -> list[tuple[str, str, str]]:
    out = []
    for i, p in enumerate(pairs):
        if isinstance(p, tuple):
            out.append(p)
        else:
            try:
                out.append((p.lang, p.reference, p.candidate))
            except AttributeError as exc:
                raise PseudoLabelError(f"record {i} is not a labelable pair: {exc}") from exc
    return out


def pseudo_label(
    teacher: MetricModel,
    pairs,
    vocab: Vocabulary,
    batch_size: int = 256,
) -> list[DistillExample]:
    """Teacher scores for every pair, in input order; gold fields are ignored."""
    triples = _as_triples(pairs)
    if not triples:
        return []
    texts = [(ref, cand) for _, ref, cand in triples]
    try:
        scores = score_stream(teacher, vocab, texts, mode="bucketed", batch_size=batch_size)
    except Exception as exc:
        raise PseudoLabelError(f"scoring failed: {exc}") from exc
    out = []
    for (lang, ref, cand), s in zip(triples, scores):
        s = float(s)
        if not np.isfinite(s):
            raise PseudoLabelError(f"non-finite teacher score for ({lang!r}, {ref!r})")
        out.append(DistillExample(language=lang, reference=ref, candidate=cand, teacher_score=s))
    return out


def distill_student(
    student: MetricModel,
    stream: Sequence[DistillExample],
    config: TrainConfig,
    vocab: Vocabulary,
    log_every: int = 500,
) -> TrainResult:
    """MSE against teacher scores, trained to completion (no early stop)."""
    examples = list(stream)
    if not examples:
        raise ValueError("distillation stream is empty")
    encoded = [encode_pair(ex.reference, ex.candidate, vocab, config.max_len) for ex in examples]
    targets = np.asarray([ex.teacher_score for ex in examples], dtype=np.float32)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    adam = nc.Adam(student.parameters())
    history = []
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(examples), size=config.batch_size)
        picked = [encoded[int(i)] for i in idx]
        batch = pack_batch(picked, width=max(p.length for p in picked))
        loss = nc.mean_squared_error(
            student.score(batch, train=True, rng=rng), nc.Tensor(targets[idx])
        )
        student.zero_grads()
        nc.backward(loss)
        adam.step(config.lr)
        history.append((step, loss.item()))
        if step % log_every == 0:
            logger.info("distill step %d loss %.5f", step, history[-1][1])
    exported = student.drop_mlm_head() if student.has_mlm_head else student.clone()
    return TrainResult(model=exported, history=history, lr=config.lr)


# ---------------------------------------------------------------------------
# 1-to-N distillation and baselines
# ---------------------------------------------------------------------------


@dataclass
class OneToNResult:
    students: dict[str, MetricModel]
    routing: dict[str, str]  # language -> cluster id
    histories: dict[str, list[tuple[int, float]]]


def validate_clusters(clusters: Sequence[LanguageCluster], languages: Iterable[str]) -> None:
    """Clusters must partition the language set."""
    owner: dict[str, str] = {}
    for cluster in clusters:
        for lang in cluster.languages:
            if lang in owner:
                raise ClusterError(
                    f"language {lang!r} is in clusters {owner[lang]!r} and "
                    f"{cluster.cluster_id!r}"
                )
            owner[lang] = cluster.cluster_id
    missing = sorted(set(languages) - set(owner))
    if missing:
        raise RoutingError(f"languages not covered by any cluster: {missing}")


def run_1toN(
    teacher: MetricModel,
    clusters: Sequence[LanguageCluster],
    corpora,
    config: TrainConfig,
    vocab: Vocabulary,
    student_factory: Callable[[LanguageCluster, int], MetricModel] | None = None,
) -> OneToNResult:
    """Distill one specialized student per language cluster.

    ``corpora`` is a sequence of perturbed pairs spanning all cluster
    languages; each student sees only its own cluster's restriction.
    """
    triples = _as_triples(corpora)
    langs = {lang for lang, _, _ in triples}
    validate_clusters(clusters, langs)
    routing = {
        lang: c.cluster_id for c in clusters for lang in c.languages
    }
    students, histories = {}, {}
    for ci, cluster in enumerate(clusters):
        subset = [t for t in triples if t[0] in cluster.languages]
        if not subset:
            logger.warning("cluster %s has no corpus pairs; skipped", cluster.cluster_id)
            continue
        labeled = pseudo_label(teacher, subset, vocab)
        if student_factory is not None:
            student = student_factory(cluster, config.seed + ci)
        else:
            if cluster.student_config is None:
                raise ClusterError(f"cluster {cluster.cluster_id!r} has no student config")
            student = init_model(cluster.student_config, config.seed + ci)
        run = distill_student(student, labeled, replace(config, seed=config.seed + ci), vocab)
        students[cluster.cluster_id] = run.model
        histories[cluster.cluster_id] = run.history
    return OneToNResult(students=students, routing=routing, histories=histories)


def n_finetune_baseline(
    clusters: Sequence[LanguageCluster],
    ratings: Sequence[RatingExample],
    config: TrainConfig,
    vocab: Vocabulary,
    model_factory: Callable[[LanguageCluster, int], MetricModel],
    holdout_fraction: float = 0.05,
) -> dict[str, TrainResult | None]:
    """Fine-tune one model per cluster directly on its languages' ratings."""
    out: dict[str, TrainResult | None] = {}
    for ci, cluster in enumerate(clusters):
        subset = [ex for ex in ratings if ex.target_lang in cluster.languages]
        if not subset:
            logger.warning("cluster %s has no rating examples; skipped", cluster.cluster_id)
            out[cluster.cluster_id] = None
            continue
        train, evalset = split_ratings(subset, holdout_fraction, config.seed + ci)
        model = model_factory(cluster, config.seed + ci)
        out[cluster.cluster_id] = finetune_regression(
            model, train, evalset, replace(config, seed=config.seed + ci), vocab
        )
    return out


def route(language: str, routing: Mapping[str, str]) -> str:
    try:
        return routing[language]
    except KeyError:
        raise RoutingError(f"no student owns language {language!r}") from None


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def write_manifest(path: str | Path, **fields) -> None:
    """Experiment manifest: inputs, seeds, presets, output paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(fields, sort_keys=True, indent=2) + "\n", encoding="utf-8")
