"""
Fact-preserving augmentation and the three contrastive pair samplers.

Sentence views drop random words and one short phrase; document views also
substitute synonyms and reorder sentences. Tokens listed in an annotation's
protected_token_indices are never touched.
"""

from dataclasses import dataclass, field

import numpy as np

from constants import AUG_PROBABILITY, DEFAULT_SYNONYMS, MAX_SPAN_LEN
from corpus import lemmatize
from info_preservation import AnnotatedReport, Factuality, SentenceAnnotation
from utils import ConfigError, DataError


class InsufficientData(DataError):
    pass


def load_synonyms(path: str = DEFAULT_SYNONYMS) -> dict[str, tuple[str, ...]]:
    """Two-way synonym table keyed by lemma, values are replacement surfaces."""
    table: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = [x.strip().lower() for x in line.rstrip("\n").split("\t")]
            if len(fields) != 2 or not all(fields):
                raise DataError(f"{path}:{line_no}: expected word<TAB>synonym")
            a, b = fields
            for src, dst in ((a, b), (b, a)):
                options = table.setdefault(lemmatize(src), [])
                if dst not in options:
                    options.append(dst)
    return {lemma: tuple(options) for lemma, options in table.items()}


@dataclass(frozen=True)
class AugmentationPolicy:
    p_word_delete: float = AUG_PROBABILITY
    p_span_delete: float = AUG_PROBABILITY
    p_reorder: float = AUG_PROBABILITY
    p_synonym: float = AUG_PROBABILITY
    max_span_len: int = MAX_SPAN_LEN
    synonym_table: dict = field(default_factory=dict, compare=False, hash=False, repr=False)
    seed: int = 0

    def __post_init__(self):
        for name in ("p_word_delete", "p_span_delete", "p_reorder", "p_synonym"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if self.max_span_len < 1:
            raise ConfigError(f"max_span_len must be >= 1, got {self.max_span_len}")

    @classmethod
    def default(cls, seed: int = 0, probability: float = AUG_PROBABILITY, synonyms_path: str = DEFAULT_SYNONYMS):
        return cls(
            p_word_delete=probability,
            p_span_delete=probability,
            p_reorder=probability,
            p_synonym=probability,
            synonym_table=load_synonyms(synonyms_path),
            seed=seed,
        )

    @classmethod
    def zero(cls, seed: int = 0):
        return cls(0.0, 0.0, 0.0, 0.0, seed=seed)


@dataclass(frozen=True)
class TextView:
    tokens: tuple[str, ...]
    lemmas: tuple[str, ...]
    source_id: str
    kept: tuple[int, ...] = ()

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def to_record(self) -> dict:
        return {"source_id": self.source_id, "text": self.text}


def _delete_tokens(n: int, protected, policy: AugmentationPolicy, rng: np.random.Generator) -> list[int]:
    """Indices that survive word deletion followed by one span deletion."""
    keep = [i for i in range(n) if i in protected or rng.random() >= policy.p_word_delete]

    if policy.p_span_delete > 0 and rng.random() < policy.p_span_delete:
        starts = [j for j, i in enumerate(keep) if i not in protected]
        if starts:
            j = starts[int(rng.integers(len(starts)))]
            length = int(rng.integers(1, policy.max_span_len + 1))
            end = j
            while end < len(keep) and end - j < length and keep[end] not in protected:
                end += 1
            keep = keep[:j] + keep[end:]

    if not keep and n > 0:
        keep = [int(rng.integers(n))]
    return keep


def _substitute_synonyms(tokens, lemmas, protected, policy, rng):
    tokens, lemmas = list(tokens), list(lemmas)
    if policy.p_synonym <= 0 or not policy.synonym_table:
        return tokens, lemmas
    for i, lemma in enumerate(lemmas):
        if i in protected or lemma not in policy.synonym_table:
            continue
        if rng.random() < policy.p_synonym:
            options = policy.synonym_table[lemma]
            replacement = options[int(rng.integers(len(options)))]
            tokens[i] = replacement
            lemmas[i] = lemmatize(replacement)
    return tokens, lemmas


def augment_sentence(annotation: SentenceAnnotation, policy: AugmentationPolicy, rng: np.random.Generator) -> TextView:
    keep = _delete_tokens(len(annotation.tokens), annotation.protected_token_indices, policy, rng)
    return TextView(
        tokens=tuple(annotation.tokens[i] for i in keep),
        lemmas=tuple(annotation.lemmas[i] for i in keep),
        source_id=annotation.source_id,
        kept=tuple(keep),
    )


def augment_document(report: AnnotatedReport, policy: AugmentationPolicy, rng: np.random.Generator) -> TextView:
    pieces = []
    for sentence in report.sentences:
        protected = sentence.protected_token_indices
        tokens, lemmas = _substitute_synonyms(sentence.tokens, sentence.lemmas, protected, policy, rng)
        keep = _delete_tokens(len(tokens), protected, policy, rng)
        pieces.append(([tokens[i] for i in keep], [lemmas[i] for i in keep]))

    order = list(range(len(pieces)))
    if policy.p_reorder > 0 and len(pieces) > 1 and rng.random() < policy.p_reorder:
        order = [int(i) for i in rng.permutation(len(pieces))]

    tokens = tuple(t for i in order for t in pieces[i][0])
    lemmas = tuple(lemma for i in order for lemma in pieces[i][1])
    return TextView(tokens=tokens, lemmas=lemmas, source_id=report.report_id)


@dataclass(frozen=True)
class ContrastiveBatch:
    queries: tuple[TextView, ...]
    positives: tuple[TextView, ...]
    negatives: tuple[tuple[TextView, ...], ...]
    granularity: str
    k: int
    meta: tuple[dict, ...] = ()

    def __post_init__(self):
        if len(self.positives) != len(self.queries) or len(self.negatives) != len(self.queries):
            raise ValueError("queries, positives and negatives must be parallel")
        for row, (positive, negatives) in enumerate(zip(self.positives, self.negatives)):
            if len(negatives) != self.k:
                raise ValueError(f"row {row} has {len(negatives)} negatives, expected {self.k}")
            if any(n.source_id == positive.source_id for n in negatives):
                raise ValueError(f"row {row}: a negative shares the positive's source")

    def __len__(self):
        return len(self.queries)

    def views(self) -> list[TextView]:
        """Queries, then positives, then negatives row by row."""
        return list(self.queries) + list(self.positives) + [n for row in self.negatives for n in row]

    def to_records(self) -> list[dict]:
        records = []
        for i, (q, p, negs) in enumerate(zip(self.queries, self.positives, self.negatives)):
            records.append(
                {
                    "query": q.text,
                    "positive": p.text,
                    "negatives": [n.text for n in negs],
                    "meta": dict(self.meta[i]) if self.meta else {},
                }
            )
        return records


def _draw(candidates: np.ndarray, size: int, rng: np.random.Generator) -> list[int]:
    if size <= 0:
        return []
    return [int(i) for i in rng.choice(candidates, size=size, replace=False)]


class PairSampler:
    granularity = "sentence"

    def __init__(self, k: int):
        if k < 0:
            raise ConfigError(f"k must be >= 0, got {k}")
        self.k = k

    def anchors(self) -> list[int]:
        return self._anchors

    def positive_ids(self, a: int) -> np.ndarray:
        """Every item that can be drawn as the positive for anchor a."""
        raise NotImplementedError

    def negative_ids(self, a: int) -> np.ndarray:
        """Every item that can be drawn as a negative for anchor a."""
        raise NotImplementedError

    def sample(self, anchor_ids, policy: AugmentationPolicy, rng: np.random.Generator) -> ContrastiveBatch:
        raise NotImplementedError

    def batch(self, batch_size: int, policy: AugmentationPolicy, rng: np.random.Generator) -> ContrastiveBatch:
        anchors = self.anchors()
        picked = rng.choice(len(anchors), size=min(batch_size, len(anchors)), replace=False)
        return self.sample([anchors[int(i)] for i in picked], policy, rng)


class PatientPairSampler(PairSampler):
    """Same-patient report pairs; negatives are reports of other patients."""

    granularity = "document"

    def __init__(self, reports, k: int):
        super().__init__(k)
        self.reports = list(reports)
        if len(self.reports) < k + 2:
            raise InsufficientData(f"need at least {k + 2} reports, got {len(self.reports)}")
        patients = np.array([r.patient_id for r in self.reports])
        self._same: dict[str, np.ndarray] = {}
        self._others: dict[str, np.ndarray] = {}
        for pid in np.unique(patients):
            self._same[pid] = np.flatnonzero(patients == pid)
            self._others[pid] = np.flatnonzero(patients != pid)
        self._anchors = [
            i
            for i, r in enumerate(self.reports)
            if len(self._same[r.patient_id]) >= 2 and len(self._others[r.patient_id]) >= k
        ]
        if not self._anchors:
            raise InsufficientData("no patient has two or more reports")

    def positive_ids(self, a):
        same = self._same[self.reports[a].patient_id]
        return same[same != a]

    def negative_ids(self, a):
        return self._others[self.reports[a].patient_id]

    def sample(self, anchor_ids, policy, rng):
        queries, positives, negatives, meta = [], [], [], []
        for a in anchor_ids:
            pid = self.reports[a].patient_id
            same = self.positive_ids(a)
            p = int(same[int(rng.integers(len(same)))])
            negs = _draw(self.negative_ids(a), self.k, rng)
            queries.append(augment_document(self.reports[a], policy, rng))
            positives.append(augment_document(self.reports[p], policy, rng))
            negatives.append(tuple(augment_document(self.reports[n], policy, rng) for n in negs))
            meta.append({"patient": pid, "concept": None, "factuality": None})
        return ContrastiveBatch(tuple(queries), tuple(positives), tuple(negatives), self.granularity, self.k, tuple(meta))


def _flatten_sentences(items) -> list[SentenceAnnotation]:
    sentences = []
    for item in items:
        if isinstance(item, AnnotatedReport):
            sentences.extend(item.sentences)
        else:
            sentences.append(item)
    return sentences


class _SentencePairSampler(PairSampler):
    def __init__(self, items, k: int, pair_key: str = "concept"):
        super().__init__(k)
        if pair_key not in ("concept", "observation"):
            raise ConfigError(f"unknown pair key {pair_key!r}")
        self.pair_key = pair_key
        self.pool = [s for s in _flatten_sentences(items) if self._eligible(s)]
        self._groups: dict = {}
        for i, s in enumerate(self.pool):
            self._groups.setdefault(self.key(s), []).append(i)
        self._groups = {key: np.array(ids) for key, ids in self._groups.items()}

    def _eligible(self, sentence: SentenceAnnotation) -> bool:
        return sentence.sampleable

    def key(self, sentence: SentenceAnnotation):
        return sentence.primary_key(self.pair_key)

    def positive_ids(self, a):
        group = self._groups[self.key(self.pool[a])]
        return group[group != a]

    def _positive(self, a: int, rng) -> int:
        group = self.positive_ids(a)
        return int(group[int(rng.integers(len(group)))])

    def _view(self, i: int, policy, rng) -> TextView:
        return augment_sentence(self.pool[i], policy, rng)

    def _meta(self, a: int) -> dict:
        s = self.pool[a]
        return {
            "patient": None,
            "report": s.sentence_id[0],
            "concept": s.primary_key(self.pair_key),
            "factuality": s.primary_factuality.value,
        }

    def _negatives(self, a: int, rng) -> list[int]:
        raise NotImplementedError

    def sample(self, anchor_ids, policy, rng):
        queries, positives, negatives, meta = [], [], [], []
        for a in anchor_ids:
            p = self._positive(a, rng)
            negs = self._negatives(a, rng)
            queries.append(self._view(a, policy, rng))
            positives.append(self._view(p, policy, rng))
            negatives.append(tuple(self._view(n, policy, rng) for n in negs))
            meta.append(self._meta(a))
        return ContrastiveBatch(tuple(queries), tuple(positives), tuple(negatives), self.granularity, self.k, tuple(meta))


class DiseasePairSampler(_SentencePairSampler):
    """Affirmed sentences sharing a disease; negatives never mention the anchor's disease."""

    def __init__(self, items, k: int, pair_key: str = "concept"):
        super().__init__(items, k, pair_key)
        self._candidates = {
            key: np.array([j for j, s in enumerate(self.pool) if key not in s.disease_keys(pair_key)], dtype=int)
            for key in self._groups
        }
        self._anchors = [
            i
            for i, s in enumerate(self.pool)
            if len(self._groups[self.key(s)]) >= 2 and len(self._candidates[self.key(s)]) >= k
        ]
        if not self._anchors:
            raise InsufficientData(
                f"no disease has two affirmed sentences with {k} sentences of other diseases available"
            )

    def _eligible(self, sentence):
        return sentence.sampleable and sentence.factuality is Factuality.AFFIRMED

    def negative_ids(self, a):
        return self._candidates[self.key(self.pool[a])]

    def _negatives(self, a, rng):
        return _draw(self.negative_ids(a), self.k, rng)


class DiseaseFactualityPairSampler(_SentencePairSampler):
    """
    Pairs keyed by (disease, affirmed vs negated-or-uncertain). Hard negatives
    mention the same disease with the opposite factuality; when fewer than k
    exist the row is filled from sentences that do not mention the disease.
    """

    def __init__(self, items, k: int, pair_key: str = "concept"):
        super().__init__(items, k, pair_key)
        self._hard: dict = {}
        self._fallback: dict = {}
        for key in self._groups:
            disease, binary = key
            self._hard[key] = np.array(
                [j for j, s in enumerate(self.pool) if self.key(s) == (disease, _flip(binary))], dtype=int
            )
            self._fallback[key] = np.array(
                [j for j, s in enumerate(self.pool) if disease not in s.disease_keys(pair_key)], dtype=int
            )
        self._anchors = [
            i
            for i, s in enumerate(self.pool)
            if len(self._groups[self.key(s)]) >= 2
            and len(self._hard[self.key(s)]) + len(self._fallback[self.key(s)]) >= k
        ]
        if not self._anchors:
            raise InsufficientData(f"no (disease, factuality) group has two sentences and {k} negatives available")

    def key(self, sentence):
        return sentence.primary_key(self.pair_key), sentence.primary_factuality.binary

    def hard_negative_ids(self, a: int) -> np.ndarray:
        return self._hard[self.key(self.pool[a])]

    def negative_ids(self, a):
        key = self.key(self.pool[a])
        return np.concatenate([self._hard[key], self._fallback[key]])

    def _negatives(self, a, rng):
        key = self.key(self.pool[a])
        hard = self._hard[key]
        if len(hard) >= self.k:
            return _draw(hard, self.k, rng)
        return [int(i) for i in rng.permutation(hard)] + _draw(self._fallback[key], self.k - len(hard), rng)


def _flip(binary: str) -> str:
    return "negated_or_uncertain" if binary == "affirmed" else "affirmed"


SAMPLERS = {
    "patient": PatientPairSampler,
    "disease": DiseasePairSampler,
    "disease-factuality": DiseaseFactualityPairSampler,
}


def make_sampler(algorithm: str, annotated_reports, k: int, pair_key: str = "concept") -> PairSampler:
    if algorithm not in SAMPLERS:
        raise ConfigError(f"unknown algorithm {algorithm!r}, expected one of {sorted(SAMPLERS)}")
    if algorithm == "patient":
        return PatientPairSampler(annotated_reports, k)
    return SAMPLERS[algorithm](annotated_reports, k, pair_key)


def sample_patient_pairs(reports, batch_size, k, policy, rng) -> ContrastiveBatch:
    return PatientPairSampler(reports, k).batch(batch_size, policy, rng)


def sample_disease_pairs(annotated_sentences, batch_size, k, policy, rng, pair_key="concept") -> ContrastiveBatch:
    return DiseasePairSampler(annotated_sentences, k, pair_key).batch(batch_size, policy, rng)


def sample_disease_factuality_pairs(
    annotated_sentences, batch_size, k, policy, rng, pair_key="concept"
) -> ContrastiveBatch:
    return DiseaseFactualityPairSampler(annotated_sentences, k, pair_key).batch(batch_size, policy, rng)
