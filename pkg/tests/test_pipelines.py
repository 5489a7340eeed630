"""Splits, training loops, pseudo-labeling, and cluster routing."""

import math

import numpy as np
import pytest

from metriclab import presets, synthlab
from metriclab.encoder import init_model, pack_batch, scores_equal
from metriclab.pipelines import (
    ClusterError,
    DistillExample,
    LanguageCluster,
    RatingExample,
    RoutingError,
    SplitError,
    TrainConfig,
    distill_student,
    finetune_regression,
    n_finetune_baseline,
    pairs_from_ratings,
    pretrain_mlm,
    pseudo_label,
    read_ratings,
    route,
    run_1toN,
    split_ratings,
    validate_clusters,
    write_ratings,
)
from metriclab.presets import build_rating_corpus, language_family_clusters
from metriclab.tokenizer import encode_pair


@pytest.fixture(scope="module")
def ratings(small_world):
    return build_rating_corpus(small_world, segments_per_lang=60, seed=21)


@pytest.fixture(scope="module")
def trained_toy(small_world, small_vocab, ratings):
    """One fine-tuned toy metric shared by the scoring-behavior tests."""
    model = init_model(
        presets.micro_student_config(small_vocab.size, layers=1, hidden=32, max_len=24),
        seed=2,
    )
    pretrain_mlm(
        model, small_vocab,
        {c: synthlab.gen_corpus(small_world[c], 300, seed=31)[0] for c in small_world},
        TrainConfig(lr=2e-4, steps=80, batch_size=16, eval_every=20, seed=0, max_len=24, warmup=6),
    )
    train, evalset = split_ratings(ratings, 0.1, seed=0)
    cfg = TrainConfig(lr=1e-3, steps=500, batch_size=32, eval_every=100, seed=0, max_len=24)
    return finetune_regression(model, train, evalset, cfg, small_vocab)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def test_split_references_are_disjoint(ratings):
    train, evalset = split_ratings(ratings, 0.1, seed=3)
    assert {e.reference for e in train}.isdisjoint({e.reference for e in evalset})
    assert len(train) + len(evalset) == len(ratings)


def test_split_size_close_to_target(small_world):
    big = build_rating_corpus(small_world, segments_per_lang=417, seed=4)
    big = big[:10_000]
    train, evalset = split_ratings(big, 0.05, seed=1)
    assert 450 <= len(evalset) <= 550


def test_split_single_reference_infeasible():
    rows = [
        RatingExample("en-aa", "same ref", f"cand {i}", 0.5, f"s{i}", "seg0")
        for i in range(10)
    ]
    with pytest.raises(SplitError):
        split_ratings(rows, 0.1, seed=0)


def test_split_validates_fraction(ratings):
    with pytest.raises(ValueError):
        split_ratings(ratings, 0.0, seed=0)


# ---------------------------------------------------------------------------
# ratings io
# ---------------------------------------------------------------------------


def test_ratings_jsonl_roundtrip(tmp_path, ratings):
    path = tmp_path / "ratings.jsonl"
    write_ratings(ratings[:50], path)
    assert read_ratings(path) == ratings[:50]


def test_ratings_wmt_style_tsv(tmp_path):
    path = tmp_path / "ratings.tsv"
    path.write_text(
        "en-de\tsysA\tseg1\tthe reference\tthe candidate\t0.75\n"
        "en-de\tsysB\tseg1\tthe reference\tanother candidate\t-0.25\n"
    )
    rows = read_ratings(path)
    assert rows[0] == RatingExample(
        lang_pair="en-de", reference="the reference", candidate="the candidate",
        rating=0.75, system="sysA", segment_id="seg1",
    )
    assert rows[1].rating == -0.25


def test_malformed_lang_pair_rejected():
    with pytest.raises(ValueError, match="lang_pair"):
        RatingExample("ende", "r", "c", 0.1, "s", "g").target_lang


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------


def test_pretrain_same_seed_identical_curves(small_vocab, tiny_config):
    cfg = TrainConfig(lr=1e-3, steps=30, batch_size=8, eval_every=10, seed=5, max_len=16, warmup=3)
    sentences = ["aagedo aapibi aakibe", "aavube aagedo", "aapibi aavube aagedo"]
    a = pretrain_mlm(init_model(tiny_config, seed=1), small_vocab, sentences, cfg)
    b = pretrain_mlm(init_model(tiny_config, seed=1), small_vocab, sentences, cfg)
    assert a.history == b.history
    assert scores_equal(a.model, b.model)


def test_pretrain_rejects_empty_corpus(small_vocab, tiny_config):
    cfg = TrainConfig(lr=1e-3, steps=10, batch_size=4, eval_every=5, max_len=16)
    with pytest.raises(ValueError):
        pretrain_mlm(init_model(tiny_config, seed=0), small_vocab, [], cfg)


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------


def test_constant_target_converges_to_constant_predictor(small_vocab, small_world):
    sentences, _ = synthlab.gen_corpus(small_world["aa"], 80, seed=12)
    rows = [
        RatingExample("en-aa", s, s, 0.7, "s0", f"seg{i}")
        for i, s in enumerate(sentences)
    ]
    train, evalset = rows[:60], rows[60:]
    model = init_model(
        presets.micro_student_config(small_vocab.size, layers=1, hidden=32, max_len=24), seed=0
    )
    cfg = TrainConfig(lr=1e-2, steps=300, batch_size=16, eval_every=50, seed=0, max_len=24)
    result = finetune_regression(model, train, evalset, cfg, small_vocab)
    assert result.best_eval < 1e-3


def test_best_checkpoint_selection_replay(trained_toy, small_vocab, ratings):
    # the exported model must reproduce the minimum recorded eval loss
    _, evalset = split_ratings(ratings, 0.1, seed=0)
    enc = [encode_pair(e.reference, e.candidate, small_vocab, 24) for e in evalset]
    targets = np.asarray([e.rating for e in evalset], dtype=np.float32)
    pred = trained_toy.model.score_np(pack_batch(enc, width=max(p.length for p in enc)))
    replayed = float(np.mean((pred.astype(np.float64) - targets) ** 2))
    best = min(v for _, v in trained_toy.eval_history)
    assert math.isclose(replayed, best, rel_tol=1e-6)
    assert trained_toy.best_eval == best


def test_finetune_exports_without_mlm_head(trained_toy):
    assert not trained_toy.model.has_mlm_head


def test_finetuned_metric_prefers_identity(trained_toy, small_vocab, small_world):
    # score(x, x) should beat score(x, heavily perturbed x) on held-out items;
    # the perturbation keeps only the first third of the concepts
    lang = small_world["dd"]
    sentences, concepts = synthlab.gen_corpus(lang, 100, seed=77)
    wins = 0
    for s, c in zip(sentences, concepts):
        degraded = lang.render(c[: max(1, len(c) // 3)])
        enc = [encode_pair(s, s, small_vocab, 24), encode_pair(s, degraded, small_vocab, 24)]
        good, bad = trained_toy.model.score_np(pack_batch(enc))
        wins += int(good > bad)
    assert wins >= 95


def test_lr_sweep_picks_best(small_vocab, small_world):
    sentences, _ = synthlab.gen_corpus(small_world["aa"], 60, seed=13)
    rows = [RatingExample("en-aa", s, s, 0.5, "s0", f"g{i}") for i, s in enumerate(sentences)]
    model = init_model(
        presets.micro_student_config(small_vocab.size, layers=1, hidden=32, max_len=24), seed=0
    )
    cfg = TrainConfig(
        lr=1e-3, steps=60, batch_size=8, eval_every=30, seed=0, max_len=24,
        lr_sweep=(1e-5, 1e-2),
    )
    result = finetune_regression(model, rows[:40], rows[40:], cfg, small_vocab)
    assert result.lr == 1e-2  # the only rate that can reach 0.5 in 60 steps


def test_z_normalization_flag(small_vocab, small_world):
    sentences, _ = synthlab.gen_corpus(small_world["aa"], 40, seed=14)
    rows = []
    for i, s in enumerate(sentences):
        rows.append(RatingExample("en-aa", s, s, 50 + 10 * (i % 3), "s0", f"a{i}"))
        rows.append(RatingExample("en-bb", s, s, 0.01 * (i % 3), "s0", f"b{i}"))
    model = init_model(
        presets.micro_student_config(small_vocab.size, layers=1, hidden=32, max_len=24), seed=0
    )
    cfg = TrainConfig(
        lr=1e-3, steps=40, batch_size=8, eval_every=20, seed=0, max_len=24, z_normalize=True
    )
    result = finetune_regression(model, rows[:60], rows[60:], cfg, small_vocab)
    assert np.isfinite(result.best_eval)
    # normalized targets are O(1), so the eval loss cannot sit at raw-score scale
    assert result.best_eval < 100


# ---------------------------------------------------------------------------
# pseudo-labeling and distillation
# ---------------------------------------------------------------------------


def test_pseudo_labels_are_pure(trained_toy, small_vocab, small_world, bt_pairs=None):
    pairs = [("aa", "aagedo aapibi", "aagedo"), ("bb", "bbkibe", "bbkibe bbgedo")]
    a = pseudo_label(trained_toy.model, pairs, small_vocab)
    b = pseudo_label(trained_toy.model, pairs, small_vocab)
    assert a == b
    assert [x.language for x in a] == ["aa", "bb"]  # order preserved


def test_constant_teacher_labels_everything_equal(small_vocab, tiny_model):
    teacher = tiny_model.drop_mlm_head()
    teacher.params["head.weight"].data = np.zeros_like(teacher.params["head.weight"].data)
    teacher.params["head.bias"].data = np.array([0.37], dtype=np.float32)
    out = pseudo_label(teacher, [("aa", "x", "y"), ("aa", "longer text", "z")], small_vocab)
    assert all(math.isclose(e.teacher_score, 0.37, rel_tol=1e-6) for e in out)


def test_rating_pairs_relabeled_not_copied(trained_toy, small_vocab, ratings):
    subset = ratings[:30]
    labeled = pseudo_label(trained_toy.model, pairs_from_ratings(subset), small_vocab)
    assert [(e.reference, e.candidate) for e in labeled] == [
        (r.reference, r.candidate) for r in subset
    ]
    # pseudo-labels come from the teacher, not the gold ratings
    assert any(abs(e.teacher_score - r.rating) > 1e-6 for e, r in zip(labeled, subset))


def test_self_distillation_loss_stays_near_zero(trained_toy, small_vocab, ratings):
    teacher = trained_toy.model
    labeled = pseudo_label(teacher, pairs_from_ratings(ratings[:100]), small_vocab)
    student = teacher.clone()  # same architecture, same starting point
    cfg = TrainConfig(lr=1e-5, steps=30, batch_size=16, eval_every=30, seed=0, max_len=24)
    result = distill_student(student, labeled, cfg, small_vocab)
    assert result.history[-1][1] < 1e-3


def test_distill_deterministic_per_seed(trained_toy, small_vocab, ratings):
    labeled = pseudo_label(trained_toy.model, pairs_from_ratings(ratings[:80]), small_vocab)

    def run():
        student = init_model(
            presets.micro_student_config(small_vocab.size, layers=1, hidden=32, max_len=24),
            seed=4,
        )
        cfg = TrainConfig(lr=1e-3, steps=25, batch_size=8, eval_every=25, seed=9, max_len=24)
        return distill_student(student, labeled, cfg, small_vocab)

    assert scores_equal(run().model, run().model)


def test_distill_rejects_empty_stream(small_vocab, tiny_model):
    cfg = TrainConfig(lr=1e-3, steps=10, batch_size=4, eval_every=10, max_len=16)
    with pytest.raises(ValueError):
        distill_student(tiny_model.clone(), [], cfg, small_vocab)


def test_published_distill_budget_ratio():
    distill = presets.full_scale_distill()
    finetune = presets.full_scale_teacher_finetune()
    ratio = (distill.steps * distill.batch_size) / (finetune.steps * finetune.batch_size)
    assert ratio == 100.0  # 64M distillation sentences vs 640k fine-tuning


def test_published_finetune_presets():
    teacher = presets.full_scale_teacher_finetune()
    assert (teacher.lr, teacher.steps, teacher.batch_size, teacher.eval_every) == (
        1e-6, 5000, 128, 250,
    )
    student = presets.full_scale_student_finetune()
    assert (student.lr, student.steps, student.batch_size, student.eval_every) == (
        1e-5, 20_000, 32, 1000,
    )
    pre = presets.full_scale_pretrain()
    assert (pre.lr, pre.steps, pre.batch_size, pre.warmup) == (2e-4, 2**17, 512, 10_000)
    # sequence-length asymmetry: teacher fine-tunes at 128, students at 512
    assert teacher.max_len == 128 and student.max_len == 512


# ---------------------------------------------------------------------------
# clusters and routing
# ---------------------------------------------------------------------------


def test_language_family_routing():
    clusters = language_family_clusters()
    routing = {lang: c.cluster_id for c in clusters for lang in c.languages}
    assert route("de", routing) == "student1"
    assert route("fr", routing) == "student2"
    assert route("ja", routing) == "student5"
    assert route("ta", routing) == "student3"
    assert route("cs", routing) == "student4"
    with pytest.raises(RoutingError):
        route("xx", routing)


def test_cluster_partition_validation():
    clusters = [
        LanguageCluster("c1", ("aa", "bb")),
        LanguageCluster("c2", ("bb", "cc")),
    ]
    with pytest.raises(ClusterError, match="'bb'"):
        validate_clusters(clusters, ["aa", "bb", "cc"])
    with pytest.raises(RoutingError, match="dd"):
        validate_clusters([LanguageCluster("c1", ("aa",))], ["aa", "dd"])


def test_run_1toN_single_cluster_matches_plain_distillation(
    trained_toy, small_vocab, small_world
):
    kit = synthlab.PerturberKit(
        vocab=small_vocab,
        translator=synthlab.ConceptPivotTranslator(small_world, p_noise=0.4),
    )
    pairs = synthlab.build_distill_corpus(
        small_world, {"aa": 60, "bb": 60}, {"back-translate": 1.0}, 17, kit
    )
    student_cfg = presets.micro_student_config(small_vocab.size, layers=1, hidden=32, max_len=24)
    cluster = LanguageCluster("only", ("aa", "bb", "cc", "dd"), student_cfg)
    cfg = TrainConfig(lr=1e-3, steps=30, batch_size=8, eval_every=30, seed=6, max_len=24)
    result = run_1toN(trained_toy.model, [cluster], pairs, cfg, small_vocab)
    assert set(result.students) == {"only"}
    assert result.routing["cc"] == "only"

    labeled = pseudo_label(trained_toy.model, pairs, small_vocab)
    student = init_model(student_cfg, seed=cfg.seed)
    manual = distill_student(student, labeled, cfg, small_vocab)
    assert scores_equal(result.students["only"], manual.model)


def test_run_1toN_restricts_corpora_by_cluster(trained_toy, small_vocab, small_world):
    kit = synthlab.PerturberKit(
        vocab=small_vocab,
        translator=synthlab.ConceptPivotTranslator(small_world, p_noise=0.4),
    )
    pairs = synthlab.build_distill_corpus(
        small_world, {"aa": 50, "cc": 50}, {"back-translate": 1.0}, 18, kit
    )
    student_cfg = presets.micro_student_config(small_vocab.size, layers=1, hidden=32, max_len=24)
    clusters = [
        LanguageCluster("west", ("aa", "bb"), student_cfg),
        LanguageCluster("east", ("cc", "dd"), student_cfg),
    ]
    cfg = TrainConfig(lr=1e-3, steps=20, batch_size=8, eval_every=20, seed=1, max_len=24)
    result = run_1toN(trained_toy.model, clusters, pairs, cfg, small_vocab)
    assert set(result.students) == {"west", "east"}
    # restriction property: training a student only on its own languages
    # reproduces the exact same parameters
    west_only = [p for p in pairs if p.lang == "aa"]
    labeled = pseudo_label(trained_toy.model, west_only, small_vocab)
    manual = distill_student(
        init_model(student_cfg, seed=cfg.seed), labeled, cfg, small_vocab
    )
    assert scores_equal(result.students["west"], manual.model)


def test_run_1toN_uncovered_language_raises(trained_toy, small_vocab, small_world):
    pairs = [synthlab.PerturbedPair("dd", "x", "y", "back-translate", 0.5)]
    clusters = [LanguageCluster("c1", ("aa",), None)]
    cfg = TrainConfig(lr=1e-3, steps=10, batch_size=4, eval_every=10, max_len=16)
    with pytest.raises(RoutingError):
        run_1toN(trained_toy.model, clusters, pairs, cfg, small_vocab)


def test_n_finetune_baseline(small_vocab, small_world, ratings, caplog):
    student_cfg = presets.micro_student_config(small_vocab.size, layers=1, hidden=32, max_len=24)
    clusters = [
        LanguageCluster("west", ("aa", "bb")),
        LanguageCluster("empty", ("zz",)),
    ]
    cfg = TrainConfig(lr=1e-3, steps=30, batch_size=8, eval_every=15, seed=0, max_len=24)
    out = n_finetune_baseline(
        clusters, ratings, cfg, small_vocab,
        model_factory=lambda cluster, seed: init_model(student_cfg, seed),
        holdout_fraction=0.1,
    )
    assert out["empty"] is None
    assert out["west"] is not None and not out["west"].model.has_mlm_head
