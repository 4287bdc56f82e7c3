"""
Report ingestion: section detection, normalization, sentence splitting,
tokenization and lemmatization.

Every function here is a pure function of its inputs.
"""

import re
from dataclasses import dataclass, field

from constants import (
    ABBREVIATIONS,
    BODY_SECTION,
    CLASSIFICATION_SECTIONS,
    DEID_TOKEN,
    KNOWN_SECTIONS,
    LEMMA_EXCEPTIONS,
    LEMMA_MAX_PASSES,
    LEMMA_SIS_PLURALS,
    LEMMA_VERBS,
    MIN_SENTENCE_TOKENS,
    NUMERAL_ABBREVIATIONS,
)
from utils import DataError, read_jsonl, write_jsonl


class EmptyReport(DataError):
    pass


class CorpusError(DataError):
    pass


_KNOWN_SECTIONS = {name.upper() for name in KNOWN_SECTIONS}
_HEADER_RE = re.compile(r"^\s*([A-Za-z][A-Za-z /&]*?)\s*:(.*)$")
_STANDALONE_HEADER_RE = re.compile(r"^\s*([A-Z][A-Z /&]*?)\s*:\s*$")
_PLACEHOLDER_RE = re.compile(r"(?:\\?_){2,}")
_WHITESPACE_RE = re.compile(r"\s+")
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_BOUNDARY_RE = re.compile(r"[.!?](?=\s|$)")
_TRAILING_WORD_RE = re.compile(r"([A-Za-z][A-Za-z.]*)$")


@dataclass(frozen=True)
class Token:
    surface: str
    lemma: str
    char_span: tuple[int, int]

    @property
    def lower(self) -> str:
        return self.surface.lower()


@dataclass(frozen=True)
class Sentence:
    sentence_id: tuple[str, int]
    section: str
    text: str
    tokens: tuple[Token, ...]

    @property
    def lemmas(self) -> list[str]:
        return [t.lemma for t in self.tokens]


@dataclass
class Report:
    report_id: str
    patient_id: str
    sections: dict[str, str]
    sentences: list[Sentence] = field(default_factory=list)
    labels: list[str] | None = None

    def to_record(self) -> dict:
        record = {
            "report_id": self.report_id,
            "patient_id": self.patient_id,
            "text": render_report(self),
            "sentences": [
                {"index": s.sentence_id[1], "section": s.section, "text": s.text}
                for s in self.sentences
            ],
        }
        if self.labels is not None:
            record["labels"] = list(self.labels)
        return record


def normalize_text(text: str) -> str:
    # the reserved token itself contains underscore runs
    parts = text.split(DEID_TOKEN)
    text = DEID_TOKEN.join(_PLACEHOLDER_RE.sub(DEID_TOKEN, part) for part in parts)
    return _WHITESPACE_RE.sub(" ", text).strip()


def _match_header(line: str):
    m = _HEADER_RE.match(line)
    if m and m.group(1).strip().upper() in _KNOWN_SECTIONS:
        return m.group(1).strip().upper(), m.group(2)
    m = _STANDALONE_HEADER_RE.match(line)
    if m:
        return m.group(1).strip(), ""
    return None


def parse_report(raw: str, report_id: str, patient_id: str) -> Report:
    if not any(c.isalpha() for c in raw):
        raise EmptyReport(f"report {report_id!r} contains no alphabetic characters")
    if not patient_id:
        raise CorpusError(f"report {report_id!r} has an empty patient_id")

    chunks: dict[str, list[str]] = {}
    current = BODY_SECTION
    for line in raw.splitlines():
        header = _match_header(line)
        if header is not None:
            current, line = header
        chunks.setdefault(current, []).append(line)

    sections = {}
    for name, lines in chunks.items():
        text = normalize_text(" ".join(lines))
        if text:
            sections[name] = text

    report = Report(report_id=report_id, patient_id=patient_id, sections=sections)
    report.sentences = split_sentences(report)
    return report


def render_report(report: Report) -> str:
    lines = []
    for i, (name, text) in enumerate(report.sections.items()):
        if name == BODY_SECTION and i == 0:
            lines.append(text)
        elif name.upper() in _KNOWN_SECTIONS:
            lines.append(f"{name}: {text}")
        else:
            lines.append(f"{name}:\n{text}")
    return "\n\n".join(lines)


def _is_abbreviation(text: str, dot: int, abbreviations, numeral_abbreviations) -> bool:
    if text[dot] != ".":
        return False
    m = _TRAILING_WORD_RE.search(text[:dot])
    if not m:
        return False
    word = m.group(1).lower()
    if word in abbreviations:
        return True
    if word in numeral_abbreviations:
        rest = text[dot + 1 :].lstrip()
        return bool(rest) and rest[0].isdigit()
    return False


def split_text(
    text: str,
    abbreviations=ABBREVIATIONS,
    numeral_abbreviations=NUMERAL_ABBREVIATIONS,
) -> list[str]:
    pieces, start = [], 0
    for m in _BOUNDARY_RE.finditer(text):
        if _is_abbreviation(text, m.start(), abbreviations, numeral_abbreviations):
            continue
        pieces.append(text[start : m.end()].strip())
        start = m.end()
    tail = text[start:].strip()
    if tail:
        pieces.append(tail)
    return [p for p in pieces if p]


def split_sentences(
    report: Report,
    abbreviations=ABBREVIATIONS,
    numeral_abbreviations=NUMERAL_ABBREVIATIONS,
    min_tokens: int = MIN_SENTENCE_TOKENS,
) -> list[Sentence]:
    sentences = []
    for section, text in report.sections.items():
        for piece in split_text(text, abbreviations, numeral_abbreviations):
            tokens = tokenize(piece)
            if len(tokens) < min_tokens:
                continue
            sentence_id = (report.report_id, len(sentences))
            sentences.append(Sentence(sentence_id, section, piece, tuple(tokens)))
    return sentences


def tokenize(sentence_text: str) -> list[Token]:
    return [
        Token(m.group(0), lemmatize(m.group(0)), (m.start(), m.end()))
        for m in _TOKEN_RE.finditer(sentence_text)
    ]


def join_tokens(tokens, text: str) -> str:
    """Rebuild `text` from its tokens and the gaps between their spans."""
    out, prev = [], 0
    for token in tokens:
        start, end = token.char_span
        out.append(text[prev:start])
        out.append(token.surface)
        prev = end
    out.append(text[prev:])
    return "".join(out)


def render_tokens(surfaces, spans=None) -> str:
    """Join surfaces with single spaces, gluing tokens that were adjacent in the source."""
    if not surfaces:
        return ""
    out = [surfaces[0]]
    for i in range(1, len(surfaces)):
        if spans is not None and spans[i - 1][1] == spans[i][0]:
            out.append(surfaces[i])
        else:
            out.append(" " + surfaces[i])
    return "".join(out)


def _lemma_step(word: str, exceptions, verbs, sis_plurals=LEMMA_SIS_PLURALS) -> str:
    if word in exceptions:
        return exceptions[word]
    if not word.isalpha():
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word in sis_plurals:
        return word[:-3] + "sis"
    if word.endswith("sses") and len(word) > 5:
        return word[:-2]
    if word.endswith("ing") and len(word) > 5:
        for candidate in (word[:-3], word[:-3] + "e", word[:-4]):
            if candidate in verbs:
                return candidate
    if word.endswith("ed") and len(word) > 4:
        for candidate in (word[:-2], word[:-1], word[:-3]):
            if candidate in verbs:
                return candidate
    if word.endswith("s") and len(word) > 3 and not word.endswith(("ss", "is", "us")):
        return word[:-1]
    return word


def lemmatize(token: str, exceptions=LEMMA_EXCEPTIONS, verbs=LEMMA_VERBS) -> str:
    word = token.lower()
    for _ in range(LEMMA_MAX_PASSES):
        nxt = _lemma_step(word, exceptions, verbs)
        if nxt == word:
            break
        word = nxt
    return word


def lemmatize_phrase(phrase: str) -> tuple[str, ...]:
    return tuple(t.lemma for t in tokenize(phrase))


def report_body(report: Report, sections=CLASSIFICATION_SECTIONS) -> list[Sentence]:
    """Sentences of the selected sections, falling back to BODY, then to every sentence."""
    selected = [s for s in report.sentences if s.section in sections]
    if not selected:
        selected = [s for s in report.sentences if s.section == BODY_SECTION]
    return selected or list(report.sentences)


def report_from_record(record: dict) -> Report:
    for key in ("report_id", "patient_id", "text"):
        if key not in record:
            raise CorpusError(f"corpus record is missing {key!r}")
    report = parse_report(record["text"], str(record["report_id"]), str(record["patient_id"]))
    report.labels = record.get("labels")
    return report


def read_corpus(path: str) -> list[Report]:
    reports, seen = [], set()
    for record in read_jsonl(path):
        report = report_from_record(record)
        if report.report_id in seen:
            raise CorpusError(f"duplicate report_id {report.report_id!r} in {path}")
        seen.add(report.report_id)
        reports.append(report)
    return reports


def write_corpus(reports, path: str):
    write_jsonl((r.to_record() for r in reports), path)
