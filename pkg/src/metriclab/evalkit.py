"""Correlation statistics and evaluation reports.

Segment-level agreement follows the shared-task convention: within each
segment, candidate pairs whose human-score gap clears a threshold are
counted concordant or discordant against the metric's ordering, with metric
ties counted discordant. System-level agreement is Pearson over per-system
means, optionally after median/MAD outlier exclusion. Both conventions are
reconstructions of the cited benchmark methodology and are flagged as such
in report metadata.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .encoder import MetricModel
from .pipelines import RatingExample
from .runtime import score_stream
from .tokenizer import Vocabulary

logger = logging.getLogger(__name__)

DEFAULT_DARR_THRESHOLD = 25.0  # raw 0-100 rating units; use 0.25 on [0, 1] scales
RECONSTRUCTION_NOTES = {
    "segment_agreement": "threshold/tie conventions reconstructed from the shared-task definition",
    "outlier_rule": "median/MAD exclusion at 2.5 reconstructed from the cited methodology",
}


class UndefinedMetricError(ArithmeticError):
    """No qualifying data; reported as n/a, never coerced to 0."""


@dataclass(frozen=True)
class ScoredSegment:
    lang_pair: str
    segment_id: str
    system: str
    human: float
    metric: float


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def darr(segments: Sequence[ScoredSegment], threshold: float = DEFAULT_DARR_THRESHOLD) -> float:
    """Segment-level pairwise agreement in [-1, 1].

    Counts within-segment candidate pairs whose human gap is at least
    ``threshold``; the metric ordering is concordant or discordant (ties
    discordant) and the statistic is (C - D) / (C + D).
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    groups: dict[tuple[str, str], list[ScoredSegment]] = defaultdict(list)
    seen = set()
    for s in segments:
        key = (s.lang_pair, s.segment_id, s.system)
        if key in seen:
            raise ValueError(f"duplicate (lang_pair, segment, system): {key}")
        seen.add(key)
        groups[(s.lang_pair, s.segment_id)].append(s)
    concordant = discordant = 0
    for group in groups.values():
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                a, b = group[i], group[j]
                if abs(a.human - b.human) < threshold:
                    continue
                if a.human < b.human:
                    a, b = b, a
                if a.metric > b.metric:
                    concordant += 1
                else:  # metric ties count as disagreement
                    discordant += 1
    total = concordant + discordant
    if total == 0:
        raise UndefinedMetricError("no candidate pair clears the human-score threshold")
    return (concordant - discordant) / total


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> float:
    """Plain tau-a: ties contribute zero to the numerator, all pairs count."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"paired 1-d inputs required, got {x.shape} and {y.shape}")
    n = x.size
    if n < 2:
        raise ValueError("kendall_tau needs at least two pairs")
    num = 0
    for i in range(n - 1):
        sx = np.sign(x[i + 1 :] - x[i])
        sy = np.sign(y[i + 1 :] - y[i])
        num += int((sx * sy).sum())
    return num / (n * (n - 1) / 2)


def pearson_system(
    segments: Sequence[ScoredSegment], exclude_outliers: bool = False
) -> float:
    """Pearson correlation of per-system human and metric means.

    With exclusion on, systems whose human mean deviates from the median by
    more than 2.5 median-absolute-deviations are dropped first (skipped when
    the MAD is zero).
    """
    by_system: dict[str, list[ScoredSegment]] = defaultdict(list)
    for s in segments:
        by_system[s.system].append(s)
    if len(by_system) < 2:
        raise UndefinedMetricError("fewer than two systems")
    systems = sorted(by_system)
    human = np.array([np.mean([s.human for s in by_system[k]]) for k in systems])
    metric = np.array([np.mean([s.metric for s in by_system[k]]) for k in systems])
    if exclude_outliers:
        med = np.median(human)
        mad = np.median(np.abs(human - med))
        if mad > 0:
            keep = np.abs(human - med) / mad <= 2.5
            human, metric = human[keep], metric[keep]
    if human.size < 2:
        raise UndefinedMetricError("fewer than two systems after outlier exclusion")
    if np.std(human) == 0 or np.std(metric) == 0:
        raise UndefinedMetricError("zero variance across systems")
    return float(np.corrcoef(human, metric)[0, 1])


def normal_ci(values: Sequence[float]) -> tuple[float, float]:
    """Mean and half-width of the Normal 95% interval (1.96 * s / sqrt(n))."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        raise ValueError("normal_ci needs at least two values")
    return float(arr.mean()), float(1.96 * arr.std(ddof=1) / np.sqrt(arr.size))


def relative_improvement(baseline: float, improved: float) -> float:
    if baseline == 0:
        raise ValueError("baseline is zero; relative improvement undefined")
    return (improved - baseline) / baseline


# ---------------------------------------------------------------------------
# scoring ratings with a model
# ---------------------------------------------------------------------------


def score_ratings(
    model: MetricModel,
    vocab: Vocabulary,
    ratings: Sequence[RatingExample],
    batch_size: int = 256,
) -> list[ScoredSegment]:
    """Run the metric over rating rows, pairing its scores with the humans'."""
    scores = score_stream(
        model,
        vocab,
        [(ex.reference, ex.candidate) for ex in ratings],
        mode="bucketed",
        batch_size=batch_size,
    )
    return [
        ScoredSegment(
            lang_pair=ex.lang_pair,
            segment_id=ex.segment_id,
            system=ex.system,
            human=ex.rating,
            metric=float(s),
        )
        for ex, s in zip(ratings, scores)
    ]


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

METRIC_NAMES = ("darr", "kendall", "pearson")


@dataclass
class Cell:
    """Per-seed values of one statistic for one column."""

    values: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float | None:
        return float(np.mean(self.values)) if self.values else None

    @property
    def half_width(self) -> float | None:
        if len(self.values) < 2:
            return None
        return normal_ci(self.values)[1]


@dataclass
class EvalReport:
    model_id: str
    seeds: list[int]
    pivot: str
    darr_threshold: float
    config_hash: str = ""
    cells: dict[str, dict[str, Cell]] = field(default_factory=dict)  # column -> metric -> Cell
    notes: dict[str, str] = field(default_factory=lambda: dict(RECONSTRUCTION_NOTES))

    @property
    def lang_pairs(self) -> list[str]:
        return sorted(c for c in self.cells if "*" not in c)

    def column(self, name: str, metric: str = "darr") -> Cell:
        return self.cells.get(name, {}).get(metric, Cell())

    def aggregate_names(self) -> list[str]:
        return [f"*-{self.pivot}", f"{self.pivot}-*"]


def build_eval_report(
    model_id: str,
    runs: Mapping[int, Sequence[ScoredSegment]],
    darr_threshold: float,
    pivot: str = "en",
    exclude_outliers: bool = True,
    config_hash: str = "",
) -> EvalReport:
    """Per-language-pair statistics from one scored run per seed.

    Aggregate columns hold, per seed, the unweighted mean over the language
    pairs defined for that seed; undefined statistics stay n/a.
    """
    seeds = sorted(runs)
    report = EvalReport(
        model_id=model_id,
        seeds=list(seeds),
        pivot=pivot,
        darr_threshold=darr_threshold,
        config_hash=config_hash,
    )
    stats: dict[str, dict[str, dict[int, float]]] = defaultdict(lambda: defaultdict(dict))
    for seed in seeds:
        by_pair: dict[str, list[ScoredSegment]] = defaultdict(list)
        for s in runs[seed]:
            by_pair[s.lang_pair].append(s)
        for lp, segs in by_pair.items():
            computed = {}
            try:
                computed["darr"] = darr(segs, darr_threshold)
            except UndefinedMetricError:
                pass
            try:
                computed["kendall"] = kendall_tau(
                    [s.human for s in segs], [s.metric for s in segs]
                )
            except ValueError:
                pass
            try:
                computed["pearson"] = pearson_system(segs, exclude_outliers)
            except UndefinedMetricError:
                pass
            for metric, value in computed.items():
                stats[lp][metric][seed] = value

    pairs = sorted(stats)
    to_pivot = [lp for lp in pairs if lp.endswith(f"-{pivot}")]
    from_pivot = [lp for lp in pairs if lp.startswith(f"{pivot}-")]
    for lp in pairs:
        report.cells[lp] = {
            m: Cell(values=[stats[lp][m][s] for s in seeds if s in stats[lp][m]])
            for m in METRIC_NAMES
            if m in stats[lp]
        }
    for agg_name, members in ((f"*-{pivot}", to_pivot), (f"{pivot}-*", from_pivot)):
        if not members:
            continue
        report.cells[agg_name] = {}
        for m in METRIC_NAMES:
            values = []
            for seed in seeds:
                defined = [stats[lp][m][seed] for lp in members if seed in stats[lp][m]]
                if defined:
                    values.append(float(np.mean(defined)))
            if values:
                report.cells[agg_name][m] = Cell(values=values)
    return report


def report_to_csv(report: EvalReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "column", "metric", "mean", "ci95_half_width", "n_seeds"])
        for column in report.aggregate_names() + report.lang_pairs:
            for metric in METRIC_NAMES:
                cell = report.column(column, metric)
                if cell.mean is None:
                    writer.writerow([report.model_id, column, metric, "n/a", "n/a", 0])
                else:
                    hw = "n/a" if cell.half_width is None else f"{cell.half_width:.6f}"
                    writer.writerow(
                        [report.model_id, column, metric, f"{cell.mean:.6f}", hw, len(cell.values)]
                    )


def report_to_json(report: EvalReport, path: str | Path) -> None:
    payload = {
        "model_id": report.model_id,
        "seeds": report.seeds,
        "pivot": report.pivot,
        "darr_threshold": report.darr_threshold,
        "config_hash": report.config_hash,
        "notes": report.notes,
        "cells": {
            col: {m: cell.values for m, cell in metrics.items()}
            for col, metrics in report.cells.items()
        },
    }
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_report_json(path: str | Path) -> EvalReport:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    report = EvalReport(
        model_id=payload["model_id"],
        seeds=payload["seeds"],
        pivot=payload["pivot"],
        darr_threshold=payload["darr_threshold"],
        config_hash=payload.get("config_hash", ""),
    )
    report.notes = payload.get("notes", dict(RECONSTRUCTION_NOTES))
    report.cells = {
        col: {m: Cell(values=list(vals)) for m, vals in metrics.items()}
        for col, metrics in payload["cells"].items()
    }
    return report


def format_report_table(
    rows: Sequence[tuple[str, EvalReport]], metric: str = "darr"
) -> str:
    """Aligned text grid: aggregates first, then per-pair columns."""
    if not rows:
        return ""
    first = rows[0][1]
    pair_set = set(first.lang_pairs)
    for _, rep in rows[1:]:
        if set(rep.lang_pairs) != pair_set:
            raise SchemaError(
                f"reports disagree on language pairs: {sorted(pair_set)} vs "
                f"{sorted(rep.lang_pairs)}"
            )
    columns = first.aggregate_names() + first.lang_pairs
    header = ["model/method"] + columns
    lines = []
    widths = [max(len(header[0]), max(len(label) for label, _ in rows))]
    widths += [max(len(c), 6) for c in columns]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for label, rep in rows:
        cells = [label.ljust(widths[0])]
        for c, w in zip(columns, widths[1:]):
            cell = rep.column(c, metric)
            text = "n/a" if cell.mean is None else f"{100 * cell.mean:.1f}"
            cells.append(text.ljust(w))
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


class SchemaError(ValueError):
    pass


# ---------------------------------------------------------------------------
# language buckets and sweep runners
# ---------------------------------------------------------------------------


def bucketize_languages(counts: Mapping[str, int], n_buckets: int) -> list[list[str]]:
    """Contiguous buckets of frequency-sorted languages, balanced by example
    count (optimal contiguous partition, minimizing the largest deviation)."""
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    langs = sorted(counts, key=lambda k: (-counts[k], k))
    if n_buckets > len(langs):
        raise ValueError(f"cannot form {n_buckets} buckets from {len(langs)} languages")
    sizes = [counts[lang] for lang in langs]
    target = sum(sizes) / n_buckets
    n = len(sizes)
    prefix = np.concatenate([[0], np.cumsum(sizes)])
    # dp[b][i]: best (max deviation) partition of langs[:i] into b buckets
    INF = float("inf")
    dp = [[INF] * (n + 1) for _ in range(n_buckets + 1)]
    cut = [[-1] * (n + 1) for _ in range(n_buckets + 1)]
    dp[0][0] = 0.0
    for b in range(1, n_buckets + 1):
        for i in range(b, n + 1):
            for j in range(b - 1, i):
                dev = abs((prefix[i] - prefix[j]) - target)
                cost = max(dp[b - 1][j], dev)
                if cost < dp[b][i]:
                    dp[b][i] = cost
                    cut[b][i] = j
    bounds = [n]
    for b in range(n_buckets, 0, -1):
        bounds.append(cut[b][bounds[-1]])
    bounds = bounds[::-1]
    return [langs[bounds[k] : bounds[k + 1]] for k in range(n_buckets)]


@dataclass
class SweepPoint:
    n_languages: int
    languages: list[str]
    report: EvalReport


@dataclass
class SweepResult:
    points: list[SweepPoint]

    def series(self, column: str, metric: str = "darr") -> list[tuple[int, float]]:
        out = []
        for p in self.points:
            cell = p.report.column(column, metric)
            if cell.mean is not None:
                out.append((p.n_languages, cell.mean))
        return out

    def to_plot_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n_languages", "column", "metric", "mean", "ci95_half_width"])
            for p in self.points:
                for column in p.report.aggregate_names() + p.report.lang_pairs:
                    for metric in METRIC_NAMES:
                        cell = p.report.column(column, metric)
                        if cell.mean is None:
                            continue
                        hw = "" if cell.half_width is None else f"{cell.half_width:.6f}"
                        writer.writerow(
                            [p.n_languages, column, metric, f"{cell.mean:.6f}", hw]
                        )


def language_sweep(
    train_fn: Callable[[list[RatingExample], int], MetricModel],
    ratings: Sequence[RatingExample],
    eval_ratings: Sequence[RatingExample],
    target_langs: Sequence[str],
    vocab: Vocabulary,
    n_buckets: int,
    seeds: Sequence[int],
    darr_threshold: float,
    pivot: str = "en",
) -> SweepResult:
    """Fine-tune on cumulative frequency-ordered language buckets and measure
    zero-shot quality on target languages at every prefix.

    Training data for the target languages is never included, whatever the
    bucket contents.
    """
    targets = set(target_langs)
    usable = [ex for ex in ratings if ex.target_lang not in targets]
    if not usable:
        raise ValueError("no training data outside the target languages")
    counts = defaultdict(int)
    for ex in usable:
        counts[ex.target_lang] += 1
    if len(counts) < 2:
        raise ValueError("sweep needs ratings in at least two languages")
    buckets = bucketize_languages(counts, n_buckets)
    if any(not b for b in buckets):
        raise ValueError("bucketizer produced an empty bucket")
    points = []
    included: list[str] = []
    for bucket in buckets:
        included.extend(bucket)
        subset = [ex for ex in usable if ex.target_lang in included]
        runs = {}
        for seed in seeds:
            model = train_fn(subset, seed)
            runs[seed] = score_ratings(model, vocab, eval_ratings)
        report = build_eval_report(
            model_id=f"sweep@{len(included)}",
            runs=runs,
            darr_threshold=darr_threshold,
            pivot=pivot,
        )
        points.append(
            SweepPoint(n_languages=len(included), languages=list(included), report=report)
        )
        logger.info("sweep point %d languages done", len(included))
    return SweepResult(points=points)


@dataclass
class AblationResult:
    per_pair: dict[str, list[float]]  # relative improvement per seed

    def medians(self) -> dict[str, float]:
        return {lp: float(np.median(v)) for lp, v in self.per_pair.items()}


def pretrain_ablation(
    protocol: Callable[[Sequence[str], int], Mapping[str, float]],
    langs_full: Sequence[str],
    langs_restricted: Sequence[str],
    seeds: Sequence[int],
) -> AblationResult:
    """Relative score change from pretraining on fewer languages.

    ``protocol`` pretrains on the given language set, runs the identical
    downstream fine-tune + eval, and returns a score per language pair.
    """
    if not set(langs_restricted) <= set(langs_full):
        raise ValueError("restricted language set must be a subset of the full set")
    per_pair: dict[str, list[float]] = defaultdict(list)
    for seed in seeds:
        full = protocol(tuple(langs_full), seed)
        restricted = protocol(tuple(langs_restricted), seed)
        if full.keys() != restricted.keys():
            raise ValueError("protocol returned mismatched language pairs")
        for lp in full:
            per_pair[lp].append(relative_improvement(full[lp], restricted[lp]))
    return AblationResult(per_pair=dict(per_pair))


# ---------------------------------------------------------------------------
# score file io
# ---------------------------------------------------------------------------


def write_scored_segments(segments: Iterable[ScoredSegment], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for s in segments:
            fh.write(json.dumps(asdict(s), sort_keys=True) + "\n")


def read_scored_segments(path: str | Path) -> list[ScoredSegment]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(ScoredSegment(**json.loads(line)))
    return out
