"""
Info-preservation module.

Finds disease/anatomy concepts (greedy longest match over lemmas), negation and
uncertainty cues, and pattern-rule matches in each sentence, and records the
token indices that augmentation must never delete.
"""

import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache, partial

from constants import (
    BODY_SECTION,
    CLASSIFICATION_SECTIONS,
    CLAUSE_BREAKERS,
    DEFAULT_FACTUALITY,
    DEFAULT_LEXICON,
    DEFAULT_RULES,
    MAX_WILDCARD_TOKENS,
    SAMPLING_SECTIONS,
)
from corpus import Report, Sentence, lemmatize_phrase, render_tokens, tokenize
from labels import LabelClass, aggregate_labels
from utils import DataError, read_jsonl, write_jsonl


class LexiconError(DataError):
    pass


class MalformedRule(DataError):
    pass


class Factuality(Enum):
    AFFIRMED = "affirmed"
    NEGATED = "negated"
    UNCERTAIN = "uncertain"

    @property
    def binary(self) -> str:
        return "affirmed" if self is Factuality.AFFIRMED else "negated_or_uncertain"

    @property
    def label_class(self) -> LabelClass:
        return {
            Factuality.AFFIRMED: LabelClass.POSITIVE,
            Factuality.NEGATED: LabelClass.NEGATIVE,
            Factuality.UNCERTAIN: LabelClass.UNCERTAIN,
        }[self]


class Polarity(Enum):
    NEGATION = "negation"
    UNCERTAINTY = "uncertainty"

    @classmethod
    def parse(cls, value: str) -> "Polarity":
        key = value.strip().lower()
        if key in ("neg", "negation"):
            return cls.NEGATION
        if key in ("unc", "uncertainty"):
            return cls.UNCERTAINTY
        raise ValueError(f"unknown polarity {value!r}")


SCOPES = ("pre", "post", "both")


def _lemmas_of(sentence) -> list[str]:
    if isinstance(sentence, (Sentence, SentenceAnnotation)):
        return list(sentence.lemmas)
    return list(sentence)


def _tsv_rows(path: str):
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield line_no, [field.strip() for field in line.split("\t")]


class PhraseIndex:
    """Phrase table bucketed by first lemma, longest phrase first."""

    def __init__(self):
        self._by_first: dict[str, list[tuple[tuple[str, ...], object]]] = {}

    def add(self, phrase: tuple[str, ...], payload):
        bucket = self._by_first.setdefault(phrase[0], [])
        bucket.append((phrase, payload))
        bucket.sort(key=lambda item: -len(item[0]))

    def longest_at(self, lemmas, i: int):
        for phrase, payload in self._by_first.get(lemmas[i], ()):
            if tuple(lemmas[i : i + len(phrase)]) == phrase:
                return phrase, payload
        return None

    def scan(self, lemmas) -> list[tuple[int, int, object]]:
        matches, i = [], 0
        while i < len(lemmas):
            hit = self.longest_at(lemmas, i)
            if hit is None:
                i += 1
                continue
            phrase, payload = hit
            matches.append((i, i + len(phrase), payload))
            i += len(phrase)
        return matches


# ---------------------------------------------------------------------------
# Concept lexicon
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConceptMention:
    concept_id: str
    start: int
    end: int
    observation: str | None = None
    factuality: Factuality = Factuality.AFFIRMED

    @property
    def token_span(self) -> tuple[int, int]:
        return self.start, self.end

    @property
    def is_disease(self) -> bool:
        return self.observation is not None

    def to_record(self) -> dict:
        return {
            "concept_id": self.concept_id,
            "start": self.start,
            "end": self.end,
            "observation": self.observation,
            "factuality": self.factuality.value,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ConceptMention":
        return cls(
            record["concept_id"],
            record["start"],
            record["end"],
            record.get("observation"),
            Factuality(record.get("factuality", "affirmed")),
        )


class ConceptLexicon:
    def __init__(self, entries: dict, source: str = "radlex-subset"):
        """entries: concept_id -> (observation or None, [phrase, ...])."""
        self.source = source
        self._entries: dict[str, tuple[str | None, tuple[tuple[str, ...], ...]]] = {}
        self._index = PhraseIndex()
        owner: dict[tuple[str, ...], str] = {}
        for concept_id, (observation, phrases) in entries.items():
            lemmatized = []
            for phrase in phrases:
                lemmas = phrase if isinstance(phrase, tuple) else lemmatize_phrase(phrase)
                if not lemmas:
                    raise LexiconError(f"empty phrase for concept {concept_id!r}")
                if lemmas in owner:
                    if owner[lemmas] != concept_id:
                        raise LexiconError(
                            f"phrase {' '.join(lemmas)!r} maps to both {owner[lemmas]!r} and {concept_id!r}"
                        )
                    continue
                owner[lemmas] = concept_id
                lemmatized.append(lemmas)
                self._index.add(lemmas, concept_id)
            self._entries[concept_id] = (observation or None, tuple(lemmatized))

    @classmethod
    def from_tsv(cls, path: str, source: str | None = None) -> "ConceptLexicon":
        entries: dict[str, tuple[str | None, list[str]]] = {}
        for line_no, fields in _tsv_rows(path):
            if len(fields) < 2 or not fields[0] or not fields[1]:
                raise LexiconError(f"{path}:{line_no}: expected concept_id<TAB>phrase[<TAB>observation]")
            concept_id, phrase = fields[0], fields[1]
            observation = fields[2] if len(fields) > 2 and fields[2] else None
            if concept_id in entries and entries[concept_id][0] != observation:
                raise LexiconError(f"{path}:{line_no}: concept {concept_id!r} mapped to two observations")
            entries.setdefault(concept_id, (observation, []))[1].append(phrase)
        return cls(entries, source=source or path)

    def with_phrase(self, concept_id: str, phrase, observation: str | None = None) -> "ConceptLexicon":
        entries = {cid: (obs, list(phrases)) for cid, (obs, phrases) in self._entries.items()}
        obs, phrases = entries.get(concept_id, (observation, []))
        phrases.append(phrase if isinstance(phrase, tuple) else lemmatize_phrase(phrase))
        entries[concept_id] = (obs, phrases)
        return ConceptLexicon(entries, source=self.source)

    def __len__(self):
        return len(self._entries)

    def __contains__(self, concept_id):
        return concept_id in self._entries

    @property
    def concept_ids(self) -> list[str]:
        return list(self._entries)

    def phrases(self, concept_id: str) -> tuple[tuple[str, ...], ...]:
        return self._entries[concept_id][1]

    def observation(self, concept_id: str) -> str | None:
        return self._entries[concept_id][0]

    def diseases(self) -> frozenset[str]:
        return frozenset(cid for cid, (obs, _) in self._entries.items() if obs is not None)

    def match(self, lemmas) -> list[ConceptMention]:
        return [
            ConceptMention(concept_id, start, end, self.observation(concept_id))
            for start, end, concept_id in self._index.scan(lemmas)
        ]


def match_concepts(sentence, lexicon: ConceptLexicon) -> list[ConceptMention]:
    return lexicon.match(_lemmas_of(sentence))


# ---------------------------------------------------------------------------
# Negation / uncertainty cues
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cue:
    polarity: Polarity
    phrase: tuple[str, ...]
    source: str = "core"
    scope: str = "both"


@dataclass(frozen=True)
class FactualityTerm:
    polarity: Polarity
    start: int
    end: int
    scope: str = "both"

    @property
    def token_span(self) -> tuple[int, int]:
        return self.start, self.end

    def to_record(self) -> dict:
        return {"polarity": self.polarity.value, "start": self.start, "end": self.end, "scope": self.scope}

    @classmethod
    def from_record(cls, record: dict) -> "FactualityTerm":
        return cls(Polarity(record["polarity"]), record["start"], record["end"], record.get("scope", "both"))


class FactualityLexicon:
    def __init__(self, cues):
        self.cues: tuple[Cue, ...] = tuple(cues)
        self._index = PhraseIndex()
        seen: dict[tuple[str, ...], Polarity] = {}
        for cue in self.cues:
            if not 1 <= len(cue.phrase) <= 4:
                raise LexiconError(f"cue {' '.join(cue.phrase)!r} must have 1-4 tokens")
            if cue.scope not in SCOPES:
                raise LexiconError(f"cue {' '.join(cue.phrase)!r} has unknown scope {cue.scope!r}")
            if cue.phrase in seen:
                if seen[cue.phrase] != cue.polarity:
                    raise LexiconError(f"cue {' '.join(cue.phrase)!r} listed as both negation and uncertainty")
                continue
            seen[cue.phrase] = cue.polarity
            self._index.add(cue.phrase, cue)

    @classmethod
    def from_tsv(cls, path: str) -> "FactualityLexicon":
        cues = []
        for line_no, fields in _tsv_rows(path):
            if len(fields) < 2:
                raise LexiconError(f"{path}:{line_no}: expected polarity<TAB>phrase")
            try:
                polarity = Polarity.parse(fields[0])
            except ValueError as e:
                raise LexiconError(f"{path}:{line_no}: {e}") from e
            source = fields[2] if len(fields) > 2 and fields[2] else "core"
            scope = fields[3] if len(fields) > 3 and fields[3] else "both"
            cues.append(Cue(polarity, lemmatize_phrase(fields[1]), source, scope))
        return cls(cues)

    @property
    def negation_terms(self) -> frozenset[tuple[str, ...]]:
        return frozenset(c.phrase for c in self.cues if c.polarity is Polarity.NEGATION)

    @property
    def uncertainty_terms(self) -> frozenset[tuple[str, ...]]:
        return frozenset(c.phrase for c in self.cues if c.polarity is Polarity.UNCERTAINTY)

    def match(self, lemmas) -> list[FactualityTerm]:
        return [
            FactualityTerm(cue.polarity, start, end, cue.scope)
            for start, end, cue in self._index.scan(lemmas)
        ]


def match_factuality_terms(sentence, factuality_lexicon: FactualityLexicon) -> list[FactualityTerm]:
    return factuality_lexicon.match(_lemmas_of(sentence))


# ---------------------------------------------------------------------------
# Pattern rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Wildcard:
    pass


@dataclass(frozen=True)
class TermClass:
    name: str
    phrases: tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class Prep:
    words: frozenset[str]


@dataclass(frozen=True)
class ConceptSlot:
    pass


@dataclass(frozen=True)
class PatternRule:
    rule_id: str
    polarity: Polarity
    elements: tuple

    def __post_init__(self):
        n_concepts = sum(isinstance(e, ConceptSlot) for e in self.elements)
        if n_concepts != 1:
            raise MalformedRule(f"rule {self.rule_id!r} needs exactly one CONCEPT, found {n_concepts}")
        if not any(isinstance(e, TermClass) for e in self.elements):
            raise MalformedRule(f"rule {self.rule_id!r} has no term class")

    @property
    def _concept_index(self) -> int:
        return next(i for i, e in enumerate(self.elements) if isinstance(e, ConceptSlot))

    @property
    def prefix(self) -> tuple:
        """Elements before CONCEPT, leading wildcards dropped (rule starts are unanchored)."""
        elements = list(self.elements[: self._concept_index])
        while elements and isinstance(elements[0], Wildcard):
            elements.pop(0)
        return tuple(elements)

    @property
    def suffix(self) -> tuple:
        elements = list(self.elements[self._concept_index + 1 :])
        while elements and isinstance(elements[-1], Wildcard):
            elements.pop()
        return tuple(elements)


@dataclass(frozen=True)
class RuleMatch:
    rule_id: str
    polarity: Polarity
    mention_index: int
    start: int
    end: int
    cue_indices: tuple[int, ...]


_RULE_RE = re.compile(r"^\s*(NEG|UNC)(?:\s+([A-Za-z_][\w.-]*))?\s*:=\s*(.+?)\s*$")


def _parse_element(token: str, rule_id: str, position: int):
    if token == "*":
        return Wildcard()
    if token in ("CONCEPT", "DISEASE_CONCEPT"):
        return ConceptSlot()
    if token.startswith("{") and token.endswith("}"):
        phrases = [lemmatize_phrase(p) for p in token[1:-1].split(",")]
        if not phrases or any(not p for p in phrases):
            raise MalformedRule(f"rule {rule_id!r}: empty phrase in {token!r}")
        phrases = sorted(set(phrases), key=lambda p: (-len(p), p))
        return TermClass(f"{rule_id}.{position}", tuple(phrases))
    if token.startswith("<") and token.endswith(">"):
        words = [lemmatize_phrase(w) for w in token[1:-1].split(",")]
        if not words or any(len(w) != 1 for w in words):
            raise MalformedRule(f"rule {rule_id!r}: prepositions must be single words in {token!r}")
        return Prep(frozenset(w[0] for w in words))
    raise MalformedRule(f"rule {rule_id!r}: cannot parse element {token!r}")


def parse_rule(line: str, default_id: str = "rule") -> PatternRule:
    m = _RULE_RE.match(line)
    if not m:
        raise MalformedRule(f"cannot parse rule {line!r}")
    polarity = Polarity.parse(m.group(1))
    rule_id = m.group(2) or default_id
    elements = tuple(
        _parse_element(token.strip(), rule_id, i) for i, token in enumerate(m.group(3).split("+"))
    )
    return PatternRule(rule_id, polarity, elements)


def load_rules(path: str) -> tuple[PatternRule, ...]:
    rules, ids = [], set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                rule = parse_rule(line, default_id=f"rule{line_no}")
            except MalformedRule as e:
                raise MalformedRule(f"{path}:{line_no}: {e}") from e
            if rule.rule_id in ids:
                raise MalformedRule(f"{path}:{line_no}: duplicate rule id {rule.rule_id!r}")
            ids.add(rule.rule_id)
            rules.append(rule)
    return tuple(rules)


def _align(elements, lemmas, pos: int, limit: int, max_gap: int):
    """Yield (end, cue_indices) for every alignment of `elements` starting at `pos`."""
    if not elements:
        yield pos, ()
        return
    head, rest = elements[0], elements[1:]
    if isinstance(head, Wildcard):
        for gap in range(0, min(max_gap, limit - pos) + 1):
            yield from _align(rest, lemmas, pos + gap, limit, max_gap)
    elif isinstance(head, TermClass):
        for phrase in head.phrases:
            n = len(phrase)
            if pos + n <= limit and tuple(lemmas[pos : pos + n]) == phrase:
                for end, cues in _align(rest, lemmas, pos + n, limit, max_gap):
                    yield end, tuple(range(pos, pos + n)) + cues
    elif isinstance(head, Prep):
        if pos < limit and lemmas[pos] in head.words:
            for end, cues in _align(rest, lemmas, pos + 1, limit, max_gap):
                yield end, (pos,) + cues


def _match_rule(rule: PatternRule, lemmas, mention: ConceptMention, max_gap: int):
    prefix_hit = None
    for start in range(0, mention.start + 1):
        for end, cues in _align(rule.prefix, lemmas, start, mention.start, max_gap):
            if end == mention.start:
                prefix_hit = (start, cues)
                break
        if prefix_hit:
            break
    if prefix_hit is None:
        return None
    suffix_hit = next(_align(rule.suffix, lemmas, mention.end, len(lemmas), max_gap), None)
    if suffix_hit is None:
        return None
    return prefix_hit[0], suffix_hit[0], prefix_hit[1] + suffix_hit[1]


def apply_rules(sentence, concept_mentions, rules, max_gap: int = MAX_WILDCARD_TOKENS) -> list[RuleMatch]:
    lemmas = _lemmas_of(sentence)
    matches = []
    for rule in rules:
        for idx, mention in enumerate(concept_mentions):
            # CONCEPT binds disease mentions only; anatomy mentions are protected but carry no factuality
            if not mention.is_disease:
                continue
            hit = _match_rule(rule, lemmas, mention, max_gap)
            if hit is not None:
                start, end, cues = hit
                matches.append(RuleMatch(rule.rule_id, rule.polarity, idx, start, end, cues))
    return matches


# ---------------------------------------------------------------------------
# Annotation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SentenceAnnotation:
    sentence_id: tuple[str, int]
    section: str
    tokens: tuple[str, ...]
    lemmas: tuple[str, ...]
    spans: tuple[tuple[int, int], ...]
    concept_mentions: tuple[ConceptMention, ...]
    factuality: Factuality
    factuality_terms: tuple[FactualityTerm, ...]
    matched_rule_ids: tuple[str, ...]
    protected_token_indices: frozenset[int]
    sampleable: bool

    @property
    def source_id(self) -> str:
        return f"{self.sentence_id[0]}:{self.sentence_id[1]}"

    @property
    def text(self) -> str:
        return render_tokens(self.tokens, self.spans)

    @property
    def disease_mentions(self) -> list[ConceptMention]:
        return [m for m in self.concept_mentions if m.is_disease]

    @property
    def primary_mention(self) -> ConceptMention | None:
        diseases = self.disease_mentions
        return diseases[0] if diseases else None

    @property
    def primary_concept(self) -> str | None:
        mention = self.primary_mention
        return mention.concept_id if mention else None

    @property
    def primary_factuality(self) -> Factuality:
        """Factuality of the primary disease mention; the sentence factuality when there is none."""
        mention = self.primary_mention
        return mention.factuality if mention else self.factuality

    def disease_keys(self, pair_key: str = "concept") -> set[str]:
        if pair_key == "observation":
            return {m.observation for m in self.disease_mentions}
        return {m.concept_id for m in self.disease_mentions}

    def primary_key(self, pair_key: str = "concept") -> str | None:
        mention = self.primary_mention
        if mention is None:
            return None
        return mention.observation if pair_key == "observation" else mention.concept_id

    def to_record(self) -> dict:
        return {
            "sentence_id": list(self.sentence_id),
            "section": self.section,
            "tokens": list(self.tokens),
            "lemmas": list(self.lemmas),
            "spans": [list(s) for s in self.spans],
            "concept_mentions": [m.to_record() for m in self.concept_mentions],
            "factuality": self.factuality.value,
            "factuality_terms": [t.to_record() for t in self.factuality_terms],
            "matched_rule_ids": list(self.matched_rule_ids),
            "protected_token_indices": sorted(self.protected_token_indices),
            "sampleable": self.sampleable,
        }

    @classmethod
    def from_record(cls, record: dict) -> "SentenceAnnotation":
        return cls(
            sentence_id=(str(record["sentence_id"][0]), int(record["sentence_id"][1])),
            section=record["section"],
            tokens=tuple(record["tokens"]),
            lemmas=tuple(record["lemmas"]),
            spans=tuple(tuple(s) for s in record["spans"]),
            concept_mentions=tuple(ConceptMention.from_record(m) for m in record["concept_mentions"]),
            factuality=Factuality(record["factuality"]),
            factuality_terms=tuple(FactualityTerm.from_record(t) for t in record["factuality_terms"]),
            matched_rule_ids=tuple(record["matched_rule_ids"]),
            protected_token_indices=frozenset(record["protected_token_indices"]),
            sampleable=bool(record["sampleable"]),
        )


def _clause_ids(lemmas, breakers) -> list[int]:
    ids, current = [], 0
    for lemma in lemmas:
        ids.append(current)
        if lemma in breakers:
            current += 1
    return ids


def _in_scope(term: FactualityTerm, mention: ConceptMention) -> bool:
    before = term.end <= mention.start
    after = term.start >= mention.end
    if term.scope == "pre":
        return before
    if term.scope == "post":
        return after
    return before or after


def _mention_factuality(index, mention, rule_matches, terms, clause_ids) -> Factuality:
    polarities = {rm.polarity for rm in rule_matches if rm.mention_index == index}
    if Polarity.NEGATION in polarities:
        return Factuality.NEGATED
    if Polarity.UNCERTAINTY in polarities:
        return Factuality.UNCERTAIN
    in_clause = [
        t for t in terms if clause_ids[t.start] == clause_ids[mention.start] and _in_scope(t, mention)
    ]
    if any(t.polarity is Polarity.NEGATION for t in in_clause):
        return Factuality.NEGATED
    if any(t.polarity is Polarity.UNCERTAINTY for t in in_clause):
        return Factuality.UNCERTAIN
    return Factuality.AFFIRMED


def annotate_sentence(
    sentence: Sentence,
    concepts: ConceptLexicon,
    factuality: FactualityLexicon,
    rules,
    sampling_sections=SAMPLING_SECTIONS,
    max_gap: int = MAX_WILDCARD_TOKENS,
    clause_breakers=CLAUSE_BREAKERS,
) -> SentenceAnnotation:
    lemmas = sentence.lemmas
    mentions = match_concepts(lemmas, concepts)
    terms = match_factuality_terms(lemmas, factuality)
    rule_matches = apply_rules(lemmas, mentions, rules, max_gap=max_gap)

    clause_ids = _clause_ids(lemmas, clause_breakers)
    mentions = [
        ConceptMention(
            m.concept_id,
            m.start,
            m.end,
            m.observation,
            _mention_factuality(i, m, rule_matches, terms, clause_ids) if m.is_disease else Factuality.AFFIRMED,
        )
        for i, m in enumerate(mentions)
    ]

    polarities = {rm.polarity for rm in rule_matches} | {t.polarity for t in terms}
    if Polarity.NEGATION in polarities:
        sentence_factuality = Factuality.NEGATED
    elif Polarity.UNCERTAINTY in polarities:
        sentence_factuality = Factuality.UNCERTAIN
    else:
        sentence_factuality = Factuality.AFFIRMED

    protected = set()
    for m in mentions:
        protected.update(range(m.start, m.end))
    for t in terms:
        protected.update(range(t.start, t.end))
    for rm in rule_matches:
        protected.update(rm.cue_indices)

    rule_ids = tuple(dict.fromkeys(rm.rule_id for rm in rule_matches))
    has_disease = any(m.is_disease for m in mentions)
    return SentenceAnnotation(
        sentence_id=sentence.sentence_id,
        section=sentence.section,
        tokens=tuple(t.surface for t in sentence.tokens),
        lemmas=tuple(lemmas),
        spans=tuple(t.char_span for t in sentence.tokens),
        concept_mentions=tuple(mentions),
        factuality=sentence_factuality,
        factuality_terms=tuple(terms),
        matched_rule_ids=rule_ids,
        protected_token_indices=frozenset(protected),
        sampleable=has_disease and sentence.section in sampling_sections,
    )


@dataclass(frozen=True)
class AnnotatedReport:
    report_id: str
    patient_id: str
    sentences: tuple[SentenceAnnotation, ...]
    labels: tuple[str, ...] | None = None
    weak_labels: tuple[str, ...] | None = None

    def classification_sentences(self, sections=CLASSIFICATION_SECTIONS) -> list[SentenceAnnotation]:
        selected = [s for s in self.sentences if s.section in sections]
        if not selected:
            selected = [s for s in self.sentences if s.section == BODY_SECTION]
        return selected or list(self.sentences)

    def body_lemmas(self, sections=CLASSIFICATION_SECTIONS) -> list[str]:
        return [lemma for s in self.classification_sentences(sections) for lemma in s.lemmas]

    def body_text(self, sections=CLASSIFICATION_SECTIONS) -> str:
        return " ".join(s.text for s in self.classification_sentences(sections))

    def gold_labels(self) -> tuple[str, ...] | None:
        return self.labels if self.labels is not None else self.weak_labels

    def to_record(self) -> dict:
        return {
            "report_id": self.report_id,
            "patient_id": self.patient_id,
            "labels": list(self.labels) if self.labels is not None else None,
            "weak_labels": list(self.weak_labels) if self.weak_labels is not None else None,
            "sentences": [s.to_record() for s in self.sentences],
        }

    @classmethod
    def from_record(cls, record: dict) -> "AnnotatedReport":
        try:
            labels = record.get("labels")
            weak = record.get("weak_labels")
            return cls(
                report_id=str(record["report_id"]),
                patient_id=str(record["patient_id"]),
                sentences=tuple(SentenceAnnotation.from_record(s) for s in record["sentences"]),
                labels=tuple(labels) if labels is not None else None,
                weak_labels=tuple(weak) if weak is not None else None,
            )
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise DataError(f"malformed annotation record: {e}") from e


def weak_labels(sentences, sections=CLASSIFICATION_SECTIONS) -> tuple[str, ...]:
    selected = [s for s in sentences if s.section in sections]
    if not selected:
        selected = [s for s in sentences if s.section == BODY_SECTION] or list(sentences)
    mentions = [
        (m.observation, m.factuality.label_class) for s in selected for m in s.disease_mentions
    ]
    return tuple(aggregate_labels(mentions).to_strings())


@dataclass(frozen=True)
class InfoPreservationModule:
    concepts: ConceptLexicon
    factuality: FactualityLexicon
    rules: tuple[PatternRule, ...]
    sampling_sections: tuple[str, ...] = SAMPLING_SECTIONS
    max_gap: int = MAX_WILDCARD_TOKENS

    @classmethod
    def load(
        cls,
        lexicon_path: str = DEFAULT_LEXICON,
        factuality_path: str = DEFAULT_FACTUALITY,
        rules_path: str = DEFAULT_RULES,
        **kwargs,
    ) -> "InfoPreservationModule":
        return cls(
            ConceptLexicon.from_tsv(lexicon_path, source="radlex-subset" if lexicon_path == DEFAULT_LEXICON else None),
            FactualityLexicon.from_tsv(factuality_path),
            load_rules(rules_path),
            **kwargs,
        )

    def annotate(self, sentence: Sentence) -> SentenceAnnotation:
        return annotate_sentence(
            sentence,
            self.concepts,
            self.factuality,
            self.rules,
            sampling_sections=self.sampling_sections,
            max_gap=self.max_gap,
        )

    def annotate_text(self, text: str, section: str = BODY_SECTION) -> SentenceAnnotation:
        sentence = Sentence(("text", 0), section, text, tuple(tokenize(text)))
        return self.annotate(sentence)


@lru_cache(maxsize=1)
def default_module() -> InfoPreservationModule:
    return InfoPreservationModule.load()


def annotate_report(report: Report, module: InfoPreservationModule) -> AnnotatedReport:
    sentences = tuple(module.annotate(s) for s in report.sentences)
    return AnnotatedReport(
        report_id=report.report_id,
        patient_id=report.patient_id,
        sentences=sentences,
        labels=tuple(report.labels) if report.labels is not None else None,
        weak_labels=weak_labels(sentences),
    )


def annotate_reports(reports, module: InfoPreservationModule, threads: int = 1) -> list[AnnotatedReport]:
    reports = list(reports)
    if threads <= 1 or len(reports) < 2:
        return [annotate_report(r, module) for r in reports]
    with ProcessPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(partial(annotate_report, module=module), reports, chunksize=16))


def annotate_corpus(reports, module: InfoPreservationModule | None = None, threads: int = 1) -> dict:
    """report_id -> [SentenceAnnotation]; sentences without disease mentions carry sampleable=False."""
    module = module or default_module()
    return {r.report_id: list(r.sentences) for r in annotate_reports(reports, module, threads)}


def sentence_pool(annotated_reports) -> list[SentenceAnnotation]:
    return [s for r in annotated_reports for s in r.sentences if s.sampleable]


def write_annotations(annotated_reports, path: str):
    write_jsonl((r.to_record() for r in annotated_reports), path)


def read_annotations(path: str) -> list[AnnotatedReport]:
    return [AnnotatedReport.from_record(record) for record in read_jsonl(path)]
