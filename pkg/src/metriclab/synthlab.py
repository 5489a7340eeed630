"""Synthetic multilingual corpora and pseudo-translation pairs.

Languages share one integer concept space. Each language renders concepts
through its own disjoint surface lexicon (a per-language permutation plus
syllable spelling behind a language-code prefix) and a word-order rotation,
so corpora in different languages express identical concept sequences with
zero surface overlap. Every generated pair carries a gold similarity:
1 minus the normalized concept-level edit distance between reference and
candidate, an exact stand-in for a human rating.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .encoder import Batch, MetricModel, PhaseError
from .tokenizer import MASK_ID, NUM_SPECIALS, Vocabulary, encode_single

logger = logging.getLogger(__name__)

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]
_SYL_LOOKUP = {s: i for i, s in enumerate(_SYLLABLES)}


class CapabilityError(LookupError):
    """A translator or language registry cannot serve the request."""


class CorpusConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# languages
# ---------------------------------------------------------------------------


def _spell(index: int) -> str:
    base = len(_SYLLABLES)
    out = []
    index = int(index)
    while True:
        out.append(_SYLLABLES[index % base])
        index //= base
        if index == 0:
            break
    return "".join(out)


@dataclass(frozen=True)
class SyntheticLanguage:
    """One synthetic language over a shared concept space."""

    code: str
    concept_space: int
    word_order: int = 0  # words rotate left by this much at render time
    n_synonyms: int = 2

    def __post_init__(self):
        rng = np.random.Generator(np.random.PCG64(_code_seed(self.code)))
        perm = rng.permutation(self.concept_space)
        object.__setattr__(self, "_perm", perm)
        inv = {}
        for concept in range(self.concept_space):
            for syn in range(self.n_synonyms):
                inv[self.surface(concept, syn)] = concept
        object.__setattr__(self, "_inverse", inv)

    def surface(self, concept: int, synonym: int = 0) -> str:
        if not 0 <= concept < self.concept_space:
            raise IndexError(f"concept {concept} outside space {self.concept_space}")
        if not 0 <= synonym < self.n_synonyms:
            raise IndexError(f"synonym {synonym} outside {self.n_synonyms}")
        return self.code + _spell(int(self._perm[concept]) * self.n_synonyms + synonym)

    def concept_of(self, word: str) -> int | None:
        return self._inverse.get(word)

    def render(self, concepts: Sequence[int], synonyms: Sequence[int] | None = None) -> str:
        n = len(concepts)
        if n == 0:
            return ""
        k = self.word_order % n
        rotated = [concepts[(i + k) % n] for i in range(n)]
        if synonyms is None:
            return " ".join(self.surface(c) for c in rotated)
        rot_syn = [synonyms[(i + k) % n] for i in range(n)]
        return " ".join(self.surface(c, s) for c, s in zip(rotated, rot_syn))

    def parse(self, sentence: str) -> list[int | str]:
        """Words back to concepts in surface order; unknown words pass through."""
        out: list[int | str] = []
        for word in sentence.split():
            concept = self._inverse.get(word)
            out.append(word if concept is None else concept)
        return out

    def unrotate(self, items: list) -> list:
        n = len(items)
        if n == 0:
            return []
        k = self.word_order % n
        return [items[(i - k) % n] for i in range(n)]


def _code_seed(code: str) -> int:
    return int.from_bytes(code.encode("utf-8").ljust(8, b"\0")[:8], "little")


def make_world(
    codes: Sequence[str], concept_space: int = 800, n_synonyms: int = 2
) -> dict[str, SyntheticLanguage]:
    """A family of languages over one concept space, word orders staggered."""
    return {
        code: SyntheticLanguage(
            code=code,
            concept_space=concept_space,
            word_order=i % 4,
            n_synonyms=n_synonyms,
        )
        for i, code in enumerate(codes)
    }


def save_world(languages: Mapping[str, SyntheticLanguage], path: str | Path) -> None:
    payload = {
        code: {
            "concept_space": lang.concept_space,
            "word_order": lang.word_order,
            "n_synonyms": lang.n_synonyms,
        }
        for code, lang in languages.items()
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_world(path: str | Path) -> dict[str, SyntheticLanguage]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return {code: SyntheticLanguage(code=code, **spec) for code, spec in payload.items()}


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrammarSpec:
    """Sentence lengths and the concept frequency skew."""

    min_len: int = 4
    max_len: int = 12
    length_weights: tuple[float, ...] | None = None  # uniform when absent
    concept_exponent: float = 1.1

    def length_probs(self) -> np.ndarray:
        n = self.max_len - self.min_len + 1
        if self.length_weights is None:
            return np.full(n, 1.0 / n)
        w = np.asarray(self.length_weights, dtype=np.float64)
        if w.shape != (n,) or (w < 0).any() or w.sum() <= 0:
            raise CorpusConfigError(f"bad length weights for range {self.min_len}..{self.max_len}")
        return w / w.sum()


DEFAULT_GRAMMAR = GrammarSpec()


def _concept_probs(space: int, exponent: float) -> np.ndarray:
    p = (np.arange(1, space + 1, dtype=np.float64)) ** (-exponent)
    return p / p.sum()


def _sample_concepts(
    rng: np.random.Generator, n: int, space: int, grammar: GrammarSpec
) -> list[list[int]]:
    lengths = rng.choice(
        np.arange(grammar.min_len, grammar.max_len + 1), size=n, p=grammar.length_probs()
    )
    flat = rng.choice(space, size=int(lengths.sum()), p=_concept_probs(space, grammar.concept_exponent))
    out = []
    pos = 0
    for length in lengths:
        out.append([int(c) for c in flat[pos : pos + length]])
        pos += length
    return out


def gen_corpus(
    language: SyntheticLanguage,
    n: int,
    seed: int,
    grammar: GrammarSpec = DEFAULT_GRAMMAR,
) -> tuple[list[str], list[list[int]]]:
    """``n`` sentences plus their underlying concept sequences.

    Concept draws depend only on (n, seed, grammar, concept space), so two
    languages generated with the same seed share concept sequences exactly.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    concepts = _sample_concepts(rng, n, language.concept_space, grammar)
    sentences = [language.render(c) for c in concepts]
    return sentences, concepts


# ---------------------------------------------------------------------------
# gold similarity
# ---------------------------------------------------------------------------


def _edit_distance(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, xa in enumerate(a, start=1):
        cur = [i]
        for j, xb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (xa != xb)))
        prev = cur
    return prev[-1]


def concept_similarity(seq_a: Sequence, seq_b: Sequence) -> float:
    """1 - normalized edit distance; 1.0 iff the sequences match exactly."""
    if not seq_a and not seq_b:
        return 1.0
    denom = max(len(seq_a), len(seq_b))
    return 1.0 - _edit_distance(seq_a, seq_b) / denom


def gold_similarity(language: SyntheticLanguage, reference: str, candidate: str) -> float:
    """Concept-level similarity of two surface sentences in one language."""
    return concept_similarity(language.parse(reference), language.parse(candidate))


# ---------------------------------------------------------------------------
# perturbations
# ---------------------------------------------------------------------------


@dataclass
class PerturbedPair:
    lang: str
    reference: str
    candidate: str
    tag: str  # mask-substitute | back-translate | word-drop | compound
    gold: float


@dataclass
class MaskSubstituteResult:
    candidate: str
    n_masked: int


def perturb_mask_substitute(
    sentence: str,
    mlm: MetricModel,
    vocab: Vocabulary,
    rng: np.random.Generator,
    max_masks: int = 15,
    beam_width: int = 8,
) -> MaskSubstituteResult:
    """Mask 1..min(max_masks, len) subwords and refill them with the model.

    Masked slots are filled left to right by beam search over the masked-LM
    logits; the highest-probability beam wins.
    """
    results = mask_substitute_batch(
        [sentence], mlm, vocab, rng, max_masks=max_masks, beam_width=beam_width
    )
    return results[0]


def mask_substitute_batch(
    sentences: Sequence[str],
    mlm: MetricModel,
    vocab: Vocabulary,
    rng: np.random.Generator,
    max_masks: int = 15,
    beam_width: int = 8,
) -> list[MaskSubstituteResult]:
    """Vectorized mask-and-refill over many sentences at once."""
    if not mlm.has_mlm_head:
        raise PhaseError("mask substitution requires a model with the masked-LM head")
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    n = len(sentences)
    if n == 0:
        return []
    width = mlm.config.max_len
    encoded = [encode_single(s, vocab, width) for s in sentences]
    body_lens = [max(p.length - 2, 0) for p in encoded]
    if min(body_lens) < 1:
        bad = sentences[body_lens.index(0)]
        raise ValueError(f"sentence has no subwords: {bad!r}")

    ks = [int(rng.integers(1, min(max_masks, L) + 1)) for L in body_lens]
    positions = [
        np.sort(rng.choice(L, size=k, replace=False)) + 1  # +1 skips [CLS]
        for L, k in zip(body_lens, ks)
    ]

    bw = beam_width
    ids = np.repeat(np.stack([p.ids for p in encoded]), bw, axis=0)
    mask = np.repeat(np.stack([p.mask for p in encoded]), bw, axis=0)
    segs = np.zeros_like(ids)
    for i, pos in enumerate(positions):
        ids[i * bw : (i + 1) * bw, pos] = MASK_ID
    beam_lp = np.full((n, bw), -np.inf)
    beam_lp[:, 0] = 0.0  # beams start identical; keep one live copy

    max_k = max(ks)
    for step in range(max_k):
        active = [i for i in range(n) if ks[i] > step]
        rows = np.concatenate([np.arange(i * bw, (i + 1) * bw) for i in active])
        cols = np.concatenate([np.full(bw, positions[i][step]) for i in active])
        crop = int(mask[rows].sum(axis=1).max())
        batch = Batch(ids=ids[rows, :crop], mask=mask[rows, :crop], segments=segs[rows, :crop])
        logits = mlm.mlm_logits_at(batch, (np.arange(len(rows)), cols)).astype(np.float64)
        logits[:, :NUM_SPECIALS] = -np.inf  # never fill with reserved ids
        logp = logits - _logsumexp(logits)
        for a_idx, i in enumerate(active):
            lp = logp[a_idx * bw : (a_idx + 1) * bw]  # (bw, V)
            total = beam_lp[i][:, None] + lp
            flat = total.reshape(-1)
            top = np.argpartition(flat, -bw)[-bw:]
            top = top[np.argsort(-flat[top], kind="stable")]
            src_beam, token = np.divmod(top, lp.shape[1])
            block = ids[i * bw : (i + 1) * bw]
            ids[i * bw : (i + 1) * bw] = block[src_beam]
            ids[i * bw : (i + 1) * bw, positions[i][step]] = token
            beam_lp[i] = flat[top]

    out = []
    for i in range(n):
        best = int(np.argmax(beam_lp[i]))
        row = ids[i * bw + best]
        body = row[1 : body_lens[i] + 1]  # strip [CLS] .. [SEP]
        out.append(MaskSubstituteResult(candidate=vocab.decode(body), n_masked=ks[i]))
    return out


def _logsumexp(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


class Translator(Protocol):
    def supports(self, lang: str) -> bool: ...

    def to_pivot(self, sentence: str, lang: str) -> str: ...

    def from_pivot(self, pivot: str, lang: str, rng: np.random.Generator | None = None) -> str: ...


class ConceptPivotTranslator:
    """Toy round-trip translator through a shared concept pivot.

    ``to_pivot`` maps surfaces to concepts, undoes the language's word-order
    rotation, and renders a neutral pivot spelling. ``from_pivot`` renders
    back, sampling one of the language's synonyms with probability
    ``p_noise`` per token. Unknown words pass through untouched.
    """

    PIVOT_PREFIX = "pv"

    def __init__(self, languages: Mapping[str, SyntheticLanguage], p_noise: float = 0.0):
        if not 0.0 <= p_noise <= 1.0:
            raise ValueError(f"p_noise must be in [0, 1], got {p_noise}")
        self.languages = dict(languages)
        self.p_noise = p_noise

    def supports(self, lang: str) -> bool:
        return lang in self.languages

    def _lang(self, lang: str) -> SyntheticLanguage:
        try:
            return self.languages[lang]
        except KeyError:
            raise CapabilityError(f"translator does not cover language {lang!r}") from None

    def to_pivot(self, sentence: str, lang: str) -> str:
        language = self._lang(lang)
        items = language.unrotate(language.parse(sentence))
        return " ".join(
            self.PIVOT_PREFIX + _spell(c) if isinstance(c, int) else str(c) for c in items
        )

    def from_pivot(self, pivot: str, lang: str, rng: np.random.Generator | None = None) -> str:
        language = self._lang(lang)
        concepts: list[int | str] = []
        for word in pivot.split():
            if word.startswith(self.PIVOT_PREFIX):
                idx = _unspell(word[len(self.PIVOT_PREFIX) :])
                if idx is not None and idx < language.concept_space:
                    concepts.append(idx)
                    continue
            concepts.append(word)
        n = len(concepts)
        if n == 0:
            return ""
        k = language.word_order % n
        rotated = [concepts[(i + k) % n] for i in range(n)]
        words = []
        for c in rotated:
            if isinstance(c, str):
                words.append(c)
                continue
            syn = 0
            if self.p_noise > 0.0 and rng is not None and rng.random() < self.p_noise:
                syn = int(rng.integers(0, language.n_synonyms))
            words.append(language.surface(c, syn))
        return " ".join(words)


def _unspell(text: str) -> int | None:
    base = len(_SYLLABLES)
    if len(text) % 2 != 0 or not text:
        return None
    digits = []
    for i in range(0, len(text), 2):
        d = _SYL_LOOKUP.get(text[i : i + 2])
        if d is None:
            return None
        digits.append(d)
    value = 0
    for d in reversed(digits):
        value = value * base + d
    return value


def perturb_backtranslate(
    sentence: str,
    lang: str,
    translator: Translator,
    rng: np.random.Generator | None = None,
) -> str:
    """Round-trip the sentence through the translator's pivot language."""
    if not translator.supports(lang):
        raise CapabilityError(f"translator does not cover language {lang!r}")
    return translator.from_pivot(translator.to_pivot(sentence, lang), lang, rng)


def perturb_word_drop(
    pairs: Sequence[PerturbedPair],
    fraction: float,
    rng: np.random.Generator,
    languages: Mapping[str, SyntheticLanguage],
    drop_prob: float = 0.15,
) -> list[PerturbedPair]:
    """Duplicate floor(fraction * n) pairs with words dropped from the copy.

    Originals are kept; each duplicate's candidate loses every word
    independently with ``drop_prob`` but always retains at least one.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    n_extra = int(fraction * len(pairs))
    return list(pairs) + _word_drop_exact(pairs, n_extra, rng, languages, drop_prob)


def _word_drop_exact(
    pairs: Sequence[PerturbedPair],
    n_extra: int,
    rng: np.random.Generator,
    languages: Mapping[str, SyntheticLanguage],
    drop_prob: float = 0.15,
) -> list[PerturbedPair]:
    if n_extra == 0:
        return []
    chosen = rng.choice(len(pairs), size=n_extra, replace=False)
    out = []
    for idx in chosen:
        src = pairs[int(idx)]
        words = src.candidate.split()
        keep = rng.random(len(words)) >= drop_prob
        if not keep.any():
            keep[int(rng.integers(0, len(words)))] = True
        candidate = " ".join(w for w, k in zip(words, keep) if k)
        lang = languages.get(src.lang)
        if lang is None:
            raise CorpusConfigError(f"unknown language {src.lang!r} in word drop")
        tag = "word-drop" if src.candidate == src.reference else "compound"
        out.append(
            PerturbedPair(
                lang=src.lang,
                reference=src.reference,
                candidate=candidate,
                tag=tag,
                gold=gold_similarity(lang, src.reference, candidate),
            )
        )
    return out


# ---------------------------------------------------------------------------
# distillation corpus
# ---------------------------------------------------------------------------


@dataclass
class PerturberKit:
    """Everything the corpus builder needs to run the perturbation mix."""

    vocab: Vocabulary
    mlm: MetricModel | None = None
    translator: Translator | None = None
    beam_width: int = 8
    max_masks: int = 15
    grammar: GrammarSpec = DEFAULT_GRAMMAR
    drop_prob: float = 0.15


DEFAULT_MIX = {"mask-substitute": 0.5, "back-translate": 0.5}


def build_distill_corpus(
    languages: Mapping[str, SyntheticLanguage],
    per_language_counts: Mapping[str, int],
    mix: Mapping[str, float] | None,
    seed: int,
    kit: PerturberKit,
    drop_fraction: float = 0.3,
    shard_size: int = 5000,
    out_dir: str | Path | None = None,
    corpus_name: str = "distill",
) -> list[PerturbedPair]:
    """Per language, the requested pair count from the perturber mix, plus
    word-drop augmentation; deterministic per (seed, language, shard)."""
    mix = dict(DEFAULT_MIX if mix is None else mix)
    _validate_mix(mix, kit)
    for lang in per_language_counts:
        if lang not in languages:
            raise CorpusConfigError(f"unknown language {lang!r} in corpus request")
    all_pairs: list[PerturbedPair] = []
    for lang in sorted(per_language_counts):
        count = per_language_counts[lang]
        if count < 1:
            raise CorpusConfigError(f"count for {lang!r} must be >= 1, got {count}")
        for shard_idx, (base, extra) in enumerate(_shard_plan(count, drop_fraction, shard_size)):
            pairs = generate_shard(
                languages, lang, shard_idx, base, extra, seed, kit, mix
            )
            if out_dir is not None:
                path = Path(out_dir) / f"{corpus_name}.{lang}.{shard_idx:04d}.jsonl"
                write_pairs(pairs, path)
            all_pairs.extend(pairs)
    return all_pairs


def _validate_mix(mix: Mapping[str, float], kit: PerturberKit) -> None:
    known = {"mask-substitute", "back-translate"}
    unknown = set(mix) - known
    if unknown:
        raise CorpusConfigError(f"unknown perturbers in mix: {sorted(unknown)}")
    if abs(sum(mix.values()) - 1.0) > 1e-9:
        raise CorpusConfigError(f"mix weights must sum to 1, got {sum(mix.values())}")
    if mix.get("mask-substitute", 0) > 0 and kit.mlm is None:
        raise CorpusConfigError("mask-substitute in mix but kit has no masked-LM model")
    if mix.get("back-translate", 0) > 0 and kit.translator is None:
        raise CorpusConfigError("back-translate in mix but kit has no translator")


def _shard_plan(count: int, drop_fraction: float, shard_size: int) -> list[tuple[int, int]]:
    """Base and augmentation counts per shard; augmentation totals exactly
    floor(drop_fraction * count)."""
    bases = []
    left = count
    while left > 0:
        take = min(shard_size, left)
        bases.append(take)
        left -= take
    plan = []
    cum = 0
    prev_aug = 0
    for base in bases:
        cum += base
        aug_target = int(drop_fraction * cum)
        plan.append((base, aug_target - prev_aug))
        prev_aug = aug_target
    return plan


def generate_shard(
    languages: Mapping[str, SyntheticLanguage],
    lang: str,
    shard_index: int,
    base_count: int,
    aug_count: int,
    master_seed: int,
    kit: PerturberKit,
    mix: Mapping[str, float],
) -> list[PerturbedPair]:
    """One shard, reproducible from its coordinates alone."""
    language = languages[lang]
    ss = np.random.SeedSequence((master_seed, _code_seed(lang), shard_index))
    rng = np.random.Generator(np.random.PCG64(ss))
    concepts = _sample_concepts(rng, base_count, language.concept_space, kit.grammar)
    sentences = [language.render(c) for c in concepts]

    tags = list(mix.keys())
    weights = np.asarray([mix[t] for t in tags], dtype=np.float64)
    weights = weights / weights.sum()
    assignment = rng.choice(len(tags), size=base_count, p=weights)

    pairs: list[PerturbedPair | None] = [None] * base_count
    mask_idx = [i for i in range(base_count) if tags[assignment[i]] == "mask-substitute"]
    if mask_idx:
        filled = mask_substitute_batch(
            [sentences[i] for i in mask_idx],
            kit.mlm,
            kit.vocab,
            rng,
            max_masks=kit.max_masks,
            beam_width=kit.beam_width,
        )
        for i, res in zip(mask_idx, filled):
            pairs[i] = PerturbedPair(
                lang=lang,
                reference=sentences[i],
                candidate=res.candidate,
                tag="mask-substitute",
                gold=gold_similarity(language, sentences[i], res.candidate),
            )
    for i in range(base_count):
        if pairs[i] is not None:
            continue
        candidate = perturb_backtranslate(sentences[i], lang, kit.translator, rng)
        pairs[i] = PerturbedPair(
            lang=lang,
            reference=sentences[i],
            candidate=candidate,
            tag="back-translate",
            gold=gold_similarity(language, sentences[i], candidate),
        )
    done: list[PerturbedPair] = list(pairs)  # type: ignore[arg-type]
    done.extend(_word_drop_exact(done, aug_count, rng, languages, kit.drop_prob))
    return done


def write_pairs(pairs: Iterable[PerturbedPair], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps(asdict(p), sort_keys=True) + "\n")


def read_pairs(path: str | Path) -> list[PerturbedPair]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(PerturbedPair(**json.loads(line)))
    return out
