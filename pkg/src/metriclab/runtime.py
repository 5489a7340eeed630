"""Length-bucketed batch scoring and throughput benchmarking.

Padded mode widens every batch to the model's configured maximum length;
bucketed mode sorts by encoded length, chunks, and crops each chunk to its
longest member. Masked attention makes the two modes agree to float noise,
so bucketing is a pure speed optimization.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .encoder import MetricModel, pack_batch
from .tokenizer import EncodedPair, Vocabulary, encode_pair

logger = logging.getLogger(__name__)

MODES = ("padded", "bucketed")


@dataclass
class Bucket:
    indices: list[int]  # original positions, contiguous in sorted order
    crop_len: int  # max member length


def bucket_batches(
    pairs: Sequence[EncodedPair], batch_size: int
) -> tuple[list[Bucket], np.ndarray]:
    """Stable length-sorted chunks plus the permutation back to input order.

    ``inverse[k]`` gives the position in the sorted stream of input pair k,
    so ``sorted_scores[inverse]`` restores input order.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    lengths = np.asarray([p.length for p in pairs])
    order = np.argsort(lengths, kind="stable")  # ties keep original index order
    buckets = []
    for start in range(0, len(pairs), batch_size):
        chunk = order[start : start + batch_size]
        buckets.append(
            Bucket(indices=[int(i) for i in chunk], crop_len=int(lengths[chunk].max()))
        )
    inverse = np.argsort(order, kind="stable")
    return buckets, inverse


def _score_encoded(
    model: MetricModel,
    encoded: Sequence[EncodedPair],
    mode: str,
    batch_size: int,
) -> np.ndarray:
    if mode == "padded":
        out = np.empty(len(encoded), dtype=np.float32)
        for start in range(0, len(encoded), batch_size):
            chunk = encoded[start : start + batch_size]
            out[start : start + len(chunk)] = model.score_np(pack_batch(chunk))
        return out
    if mode == "bucketed":
        buckets, inverse = bucket_batches(encoded, batch_size)
        sorted_scores = np.empty(len(encoded), dtype=np.float32)
        pos = 0
        for bucket in buckets:
            chunk = [encoded[i] for i in bucket.indices]
            batch = pack_batch(chunk, width=bucket.crop_len)
            sorted_scores[pos : pos + len(chunk)] = model.score_np(batch)
            pos += len(chunk)
        return sorted_scores[inverse]
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def score_stream(
    model: MetricModel,
    vocab: Vocabulary,
    pairs: Sequence[tuple[str, str]],
    mode: str = "bucketed",
    batch_size: int = 64,
) -> np.ndarray:
    """Scores for (reference, candidate) text pairs, in input order.

    Over-long pairs are truncated by the packing rules, never rejected.
    """
    if not pairs:
        return np.zeros(0, dtype=np.float32)
    encoded = [
        encode_pair(ref, cand, vocab, model.config.max_len) for ref, cand in pairs
    ]
    return _score_encoded(model, encoded, mode, batch_size)


# ---------------------------------------------------------------------------
# benchmarking
# ---------------------------------------------------------------------------


@dataclass
class BenchResult:
    model_id: str
    mode: str
    n_examples: int
    seconds: list[float]  # one entry per repeat
    repeats: int

    @property
    def mean_seconds(self) -> float:
        return float(np.mean(self.seconds))

    @property
    def median_seconds(self) -> float:
        return float(np.median(self.seconds))

    @property
    def throughput(self) -> float:
        """Examples per second, from the mean wall time."""
        return self.n_examples / self.mean_seconds


def throughput_bench(
    models: dict[str, tuple[MetricModel, Vocabulary]],
    corpus: Sequence[tuple[str, str]],
    modes: Sequence[str] = MODES,
    repeats: int = 3,
    batch_size: int = 64,
    sizes: Sequence[int] | None = None,
) -> list[BenchResult]:
    """Wall-clock scoring throughput per (model, mode, corpus size).

    Text-to-id encoding is shared across modes and excluded from the timed
    region; a warm-up batch runs before measurement.
    """
    if not corpus:
        raise ValueError("benchmark corpus is empty")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    sizes = [len(corpus)] if sizes is None else sorted(sizes)
    results = []
    for model_id in sorted(models):
        model, vocab = models[model_id]
        encoded = [
            encode_pair(ref, cand, vocab, model.config.max_len) for ref, cand in corpus
        ]
        warm = encoded[: min(batch_size, len(encoded))]
        for mode in modes:
            _score_encoded(model, warm, mode, batch_size)  # warm-up, untimed
            for n in sizes:
                subset = encoded[:n]
                times = []
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    _score_encoded(model, subset, mode, batch_size)
                    times.append(time.perf_counter() - t0)
                result = BenchResult(
                    model_id=model_id,
                    mode=mode,
                    n_examples=len(subset),
                    seconds=times,
                    repeats=repeats,
                )
                logger.info(
                    "bench %s/%s n=%d: %.3fs mean, %.1f tuples/s",
                    model_id,
                    mode,
                    n,
                    result.mean_seconds,
                    result.throughput,
                )
                results.append(result)
    return results


def bench_to_csv(results: Sequence[BenchResult], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["model", "mode", "n_examples", "repeat", "seconds", "tuples_per_second"]
        )
        for r in results:
            for i, s in enumerate(r.seconds):
                writer.writerow(
                    [r.model_id, r.mode, r.n_examples, i, f"{s:.6f}", f"{r.n_examples / s:.3f}"]
                )


def speedup_table(results: Sequence[BenchResult]) -> list[dict]:
    """Throughput of every run relative to the slowest padded run at the
    largest corpus size (the padded baseline)."""
    largest = max(r.n_examples for r in results)
    padded = [r for r in results if r.mode == "padded" and r.n_examples == largest]
    if not padded:
        raise ValueError("no padded results at the largest size to use as baseline")
    baseline = min(padded, key=lambda r: r.throughput)
    return [
        {
            "model": r.model_id,
            "mode": r.mode,
            "n_examples": r.n_examples,
            "tuples_per_second": r.throughput,
            "speedup_vs_baseline": r.throughput / baseline.throughput,
        }
        for r in results
    ]
