"""Named configurations: published-scale architectures and protocols, the
five language-family clusters for 1-to-N routing, desk-scale micro models
trainable in minutes, and the synthetic rating-corpus builder that gives
desk experiments an exact human-rating surrogate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig
from .pipelines import LanguageCluster, RatingExample, TrainConfig
from .synthlab import (
    GrammarSpec,
    SyntheticLanguage,
    _sample_concepts,
    concept_similarity,
)

DESK_LANGS = ("aa", "bb", "cc", "dd", "ee", "ff", "gg", "hh")
DESK_PIVOT = "en"
DESK_DARR_THRESHOLD = 0.25  # gold similarities live on [0, 1]


# ---------------------------------------------------------------------------
# architectures
# ---------------------------------------------------------------------------


def full_scale_configs(max_len: int = 512) -> dict[str, EncoderConfig]:
    """The four published encoder sizes (3/6/12/32 layers)."""
    return {
        "encoder-3": EncoderConfig(
            layers=3, hidden=640, input_emb_dim=128, output_emb_dim=2048,
            heads=8, head_dim=80, vocab_size=120_000, max_len=max_len,
        ),
        "encoder-6": EncoderConfig(
            layers=6, hidden=640, input_emb_dim=128, output_emb_dim=2048,
            heads=8, head_dim=80, vocab_size=120_000, max_len=max_len,
        ),
        "encoder-12": EncoderConfig(
            layers=12, hidden=1024, input_emb_dim=128, output_emb_dim=2048,
            heads=16, head_dim=64, vocab_size=120_000, max_len=max_len,
        ),
        "encoder-32": EncoderConfig(
            layers=32, hidden=1152, input_emb_dim=256, output_emb_dim=1536,
            heads=18, head_dim=64, vocab_size=250_000, max_len=max_len,
        ),
    }


def micro_teacher_config(vocab_size: int, max_len: int = 32) -> EncoderConfig:
    """Desk-scale teacher: 4 layers, every architectural relationship kept."""
    return EncoderConfig(
        layers=4, hidden=128, input_emb_dim=32, output_emb_dim=192,
        heads=4, head_dim=32, vocab_size=vocab_size, max_len=max_len,
    )


def micro_student_config(
    vocab_size: int, layers: int = 1, hidden: int = 64, max_len: int = 32
) -> EncoderConfig:
    heads = 4
    return EncoderConfig(
        layers=layers, hidden=hidden, input_emb_dim=min(32, hidden),
        output_emb_dim=max(96, hidden), heads=heads, head_dim=hidden // heads,
        vocab_size=vocab_size, max_len=max_len,
    )


# ---------------------------------------------------------------------------
# training protocols
# ---------------------------------------------------------------------------


def full_scale_pretrain() -> TrainConfig:
    """Published pretraining protocol: 2^17 Adam steps at batch 512, lr 2e-4
    with 10k-step linear warmup then inverse-sqrt decay."""
    return TrainConfig(
        lr=2e-4, steps=2**17, batch_size=512, eval_every=1000, warmup=10_000, max_len=128
    )


def full_scale_teacher_finetune() -> TrainConfig:
    """Published teacher fine-tuning: lr 1e-6, 5000 steps, batch 128,
    evaluated every 250 steps; sequence length 128."""
    return TrainConfig(
        lr=1e-6, steps=5000, batch_size=128, eval_every=250, max_len=128,
        lr_sweep=(1e-6, 2e-6, 5e-6, 7e-6, 8e-6, 9e-6, 1e-5, 2e-5),
    )


def full_scale_student_finetune() -> TrainConfig:
    """Published student fine-tuning: lr 1e-5, 20000 steps, batch 32,
    evaluated every 1000 steps; sequence length 512."""
    return TrainConfig(lr=1e-5, steps=20_000, batch_size=32, eval_every=1000, max_len=512)


def full_scale_distill() -> TrainConfig:
    """Published distillation budget: 500k batches of 128 (100x the
    fine-tuning example budget), trained to completion."""
    return TrainConfig(lr=1e-5, steps=500_000, batch_size=128, eval_every=1000, max_len=512)


def desk_pretrain(steps: int = 800, seed: int = 0) -> TrainConfig:
    """Desk-scale pretraining; warmup shrinks proportionally with steps."""
    warmup = max(1, round(steps * 10_000 / 2**17))
    return TrainConfig(
        lr=2e-4, steps=steps, batch_size=32, eval_every=max(1, steps // 4),
        warmup=warmup, seed=seed, max_len=32,
    )


def desk_finetune(steps: int = 600, seed: int = 0, batch_size: int = 32) -> TrainConfig:
    return TrainConfig(
        lr=3e-4, steps=steps, batch_size=batch_size, eval_every=max(1, steps // 6),
        seed=seed, max_len=32,
    )


def desk_distill(steps: int = 1200, seed: int = 0, batch_size: int = 32) -> TrainConfig:
    return TrainConfig(
        lr=3e-4, steps=steps, batch_size=batch_size, eval_every=steps, seed=seed, max_len=32
    )


# ---------------------------------------------------------------------------
# language clusters
# ---------------------------------------------------------------------------


def language_family_clusters() -> list[LanguageCluster]:
    """The five-student routing used at full scale: Germanic, Romance,
    Indic/Iranian (+Tamil), Balto-Slavic/Uralic/Turkic, East Asian."""
    return [
        LanguageCluster(
            "student1",
            ("af", "da", "nl", "en", "de", "is", "lb", "no", "sv", "fy"),
        ),
        LanguageCluster(
            "student2",
            ("ca", "fr", "gl", "ht", "it", "la", "pt", "ro", "es"),
        ),
        LanguageCluster(
            "student3",
            ("bn", "gu", "hi", "hi-Latn", "mr", "ne", "fa", "pa", "tg", "ur", "ta"),
        ),
        LanguageCluster(
            "student4",
            ("be", "bg", "bg-Latn", "cs", "mk", "pl", "ru", "ru-Latn", "sr", "sk",
             "sl", "uk", "fi", "et", "kk", "lt", "lv", "tr"),
        ),
        LanguageCluster(
            "student5",
            ("my", "zh", "zh-Latn", "ja"),
        ),
    ]


# ---------------------------------------------------------------------------
# synthetic ratings with system/segment structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SystemProfile:
    """One pseudo-MT-system: how hard it degrades references."""

    name: str
    drop_prob: float
    synonym_prob: float
    swap_prob: float


def default_system_profiles(n_systems: int = 6) -> list[SystemProfile]:
    """Quality ladder from verbatim output down to heavy degradation.

    Dropping and hallucination scale with the system's badness; synonym
    substitution stays constant so that surface overlap alone mis-ranks the
    candidates and the metric has to know each language's lexicon.
    """
    profiles = []
    for j in range(n_systems):
        q = j / max(1, n_systems - 1)
        profiles.append(
            SystemProfile(
                name=f"sys{j}",
                drop_prob=0.35 * q,
                synonym_prob=0.5,
                swap_prob=0.3 * q,
            )
        )
    return profiles


def _degrade(
    concepts: list[int],
    profile: SystemProfile,
    rng: np.random.Generator,
    concept_space: int,
) -> tuple[list[int], list[int]]:
    """Degraded concept sequence plus a synonym slot per surviving concept."""
    out, syn = [], []
    for c in concepts:
        r = rng.random()
        if r < profile.drop_prob:
            continue
        if r < profile.drop_prob + profile.swap_prob * 0.2:
            c = int(rng.integers(0, concept_space))  # hallucinated concept
        out.append(c)
        syn.append(0)
    if not out:
        out, syn = [concepts[0]], [0]
    for i in range(len(out)):
        if rng.random() < profile.synonym_prob:
            syn[i] = 1
    return out, syn


def build_rating_corpus(
    languages: dict[str, SyntheticLanguage],
    segments_per_lang: int | dict[str, int],
    seed: int,
    systems: list[SystemProfile] | None = None,
    pivot: str = DESK_PIVOT,
    grammar: GrammarSpec | None = None,
) -> list[RatingExample]:
    """(reference, candidate, rating) triplets with system/segment structure.

    Each reference segment gets one candidate per pseudo-system; the rating
    is the exact concept-level similarity, so metric quality against these
    ratings is measurable without human judgments. ``segments_per_lang`` may
    be one count for every language or a per-language mapping (used to skew
    the training distribution across languages).
    """
    systems = systems or default_system_profiles()
    grammar = grammar or GrammarSpec()
    out = []
    for li, code in enumerate(sorted(languages)):
        language = languages[code]
        n_segments = (
            segments_per_lang
            if isinstance(segments_per_lang, int)
            else segments_per_lang.get(code, 0)
        )
        if n_segments == 0:
            continue
        ss = np.random.SeedSequence((seed, 1000 + li))
        rng = np.random.Generator(np.random.PCG64(ss))
        concept_lists = _sample_concepts(
            rng, n_segments, language.concept_space, grammar
        )
        for si, concepts in enumerate(concept_lists):
            reference = language.render(concepts)
            for profile in systems:
                degraded, syn = _degrade(concepts, profile, rng, language.concept_space)
                candidate = language.render(degraded, syn)
                gold = concept_similarity(concepts, degraded)
                out.append(
                    RatingExample(
                        lang_pair=f"{pivot}-{code}",
                        reference=reference,
                        candidate=candidate,
                        rating=gold,
                        system=profile.name,
                        segment_id=f"{code}:{si}",
                    )
                )
    return out
