"""Length bucketing, dual-mode scoring equivalence, and the bench harness."""

import csv

import numpy as np
import pytest

from metriclab import synthlab
from metriclab.runtime import (
    BenchResult,
    bench_to_csv,
    bucket_batches,
    score_stream,
    speedup_table,
    throughput_bench,
)
from metriclab.tokenizer import EncodedPair, PAD_ID


def _pair_with_length(length, max_len=16):
    ids = np.full(max_len, PAD_ID, dtype=np.int32)
    ids[:length] = 7
    mask = np.zeros(max_len, dtype=np.float32)
    mask[:length] = 1.0
    return EncodedPair(ids=ids, mask=mask, segments=np.zeros(max_len, dtype=np.int32))


def test_bucket_example_from_sorted_chunks():
    pairs = [_pair_with_length(n) for n in (3, 9, 4, 8)]
    buckets, inverse = bucket_batches(pairs, batch_size=2)
    assert [(b.indices, b.crop_len) for b in buckets] == [([0, 2], 4), ([3, 1], 9)]
    order = [i for b in buckets for i in b.indices]
    assert [order[k] for k in inverse] == [0, 1, 2, 3]


def test_bucket_equal_lengths_keep_original_chunks():
    pairs = [_pair_with_length(5) for _ in range(5)]
    buckets, _ = bucket_batches(pairs, batch_size=2)
    assert [b.indices for b in buckets] == [[0, 1], [2, 3], [4]]
    assert all(b.crop_len == 5 for b in buckets)


def test_bucket_batch_size_at_least_n_gives_one_bucket():
    pairs = [_pair_with_length(n) for n in (2, 7, 5)]
    buckets, _ = bucket_batches(pairs, batch_size=10)
    assert len(buckets) == 1
    assert buckets[0].crop_len == 7


def test_bucketing_is_a_permutation():
    rng = np.random.Generator(np.random.PCG64(0))
    lengths = rng.integers(1, 16, size=137)
    pairs = [_pair_with_length(int(n)) for n in lengths]
    buckets, inverse = bucket_batches(pairs, batch_size=8)
    order = [i for b in buckets for i in b.indices]
    assert sorted(order) == list(range(137))
    restored = np.asarray(order)[inverse]
    assert list(restored) == list(range(137))
    for b in buckets:
        assert all(pairs[i].length <= b.crop_len for i in b.indices)


def test_bucket_batches_validates_batch_size():
    with pytest.raises(ValueError):
        bucket_batches([_pair_with_length(3)], 0)


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def scorer(tiny_model):
    return tiny_model.drop_mlm_head()


@pytest.fixture(scope="module")
def text_pairs(small_world):
    rng = np.random.Generator(np.random.PCG64(3))
    sentences, concepts = synthlab.gen_corpus(small_world["aa"], 200, seed=40)
    out = []
    for s, c in zip(sentences, concepts):
        keep = [x for x in c if rng.random() > 0.3] or [c[0]]
        out.append((s, small_world["aa"].render(keep)))
    return out


def test_scores_preserve_input_order_and_count(scorer, small_vocab, text_pairs):
    padded = score_stream(scorer, small_vocab, text_pairs, mode="padded", batch_size=16)
    assert padded.shape == (len(text_pairs),)
    shuffled = list(reversed(text_pairs))
    reversed_scores = score_stream(scorer, small_vocab, shuffled, mode="padded", batch_size=16)
    np.testing.assert_array_equal(reversed_scores, padded[::-1])


def test_padded_and_bucketed_scores_agree(scorer, small_vocab, text_pairs):
    padded = score_stream(scorer, small_vocab, text_pairs, mode="padded", batch_size=16)
    bucketed = score_stream(scorer, small_vocab, text_pairs, mode="bucketed", batch_size=16)
    assert float(np.abs(padded - bucketed).max()) < 1e-4


def test_singleton_scores_agree_across_modes(scorer, small_vocab, text_pairs):
    one = text_pairs[:1]
    padded = score_stream(scorer, small_vocab, one, mode="padded")
    bucketed = score_stream(scorer, small_vocab, one, mode="bucketed")
    assert abs(float(padded[0]) - float(bucketed[0])) < 1e-4


def test_overlong_pairs_truncate_not_error(scorer, small_vocab):
    long_text = "aagedo " * 60
    out = score_stream(scorer, small_vocab, [(long_text, long_text)], mode="bucketed")
    assert out.shape == (1,) and np.isfinite(out[0])


def test_empty_stream(scorer, small_vocab):
    assert score_stream(scorer, small_vocab, [], mode="padded").shape == (0,)


def test_unknown_mode_rejected(scorer, small_vocab, text_pairs):
    with pytest.raises(ValueError, match="mode"):
        score_stream(scorer, small_vocab, text_pairs[:2], mode="ragged")


# ---------------------------------------------------------------------------
# benchmarking
# ---------------------------------------------------------------------------


def test_throughput_bench_and_csv(tmp_path, scorer, small_vocab, text_pairs):
    results = throughput_bench(
        {"tiny": (scorer, small_vocab)}, text_pairs[:60],
        modes=("padded", "bucketed"), repeats=3, batch_size=16,
    )
    assert {(r.model_id, r.mode) for r in results} == {("tiny", "padded"), ("tiny", "bucketed")}
    for r in results:
        assert r.n_examples == 60 and len(r.seconds) == 3
        assert r.throughput == pytest.approx(60 / np.mean(r.seconds))
        assert r.median_seconds == pytest.approx(float(np.median(r.seconds)))
    path = tmp_path / "bench.csv"
    bench_to_csv(results, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["model", "mode", "n_examples", "repeat", "seconds", "tuples_per_second"]
    assert len(rows) == 1 + 2 * 3  # header + modes x repeats


def test_speedup_table_uses_largest_padded_baseline():
    results = [
        BenchResult("big", "padded", 100, [2.0], 1),
        BenchResult("big", "bucketed", 100, [1.0], 1),
        BenchResult("big", "padded", 50, [0.5], 1),
    ]
    table = speedup_table(results)
    by_key = {(r["model"], r["mode"], r["n_examples"]): r for r in table}
    assert by_key[("big", "padded", 100)]["speedup_vs_baseline"] == pytest.approx(1.0)
    assert by_key[("big", "bucketed", 100)]["speedup_vs_baseline"] == pytest.approx(2.0)


def test_bench_validates_inputs(scorer, small_vocab):
    with pytest.raises(ValueError):
        throughput_bench({"m": (scorer, small_vocab)}, [], repeats=1)
    with pytest.raises(ValueError):
        throughput_bench({"m": (scorer, small_vocab)}, [("a", "b")], repeats=0)
