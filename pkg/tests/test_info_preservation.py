import pytest

from corpus import lemmatize_phrase, parse_report, tokenize
from info_preservation import (
    AnnotatedReport,
    ConceptLexicon,
    Cue,
    Factuality,
    FactualityLexicon,
    InfoPreservationModule,
    LexiconError,
    MalformedRule,
    Polarity,
    SentenceAnnotation,
    annotate_corpus,
    apply_rules,
    load_rules,
    match_concepts,
    match_factuality_terms,
    parse_rule,
    read_annotations,
    sentence_pool,
    write_annotations,
)
from utils import DataError


def lemmas(text):
    return [t.lemma for t in tokenize(text)]


RULE_GOLDENS = [
    ("the left lung is free of consolidations or pneumothorax", Factuality.NEGATED, "clear_of"),
    ("the lungs are clear of any focal consolidation", Factuality.NEGATED, "clear_of"),
    ("pleural sinuses are free of any fluid accumulation", Factuality.NEGATED, "clear_of"),
    (
        "within the remaining well-ventilated lung, there is no evidence of pneumonia",
        Factuality.NEGATED,
        "no_evidence",
    ),
    ("there is not evidence for pulmonary edema", Factuality.NEGATED, "no_evidence"),
    ("there are no evidences of acute pneumothorax", Factuality.NEGATED, "no_evidence"),
    (
        "there are bibasilar opacities which could be due to atelectasis given low lung volumes",
        Factuality.UNCERTAIN,
        "could_be",
    ),
    ("perihilar opacity could be due to asymmetrical edema", Factuality.UNCERTAIN, "could_be"),
    ("left base opacity may be due to atelectasis", Factuality.UNCERTAIN, "could_be"),
    ("signs of parenchymal changes suggesting pneumonia", Factuality.UNCERTAIN, "suggest"),
    (
        "the left heart border is silhouetted, with a suspected left basilar opacity",
        Factuality.UNCERTAIN,
        "suggest",
    ),
    (
        "prominence of the central pulmonary vasculature suggesting mild pulmonary edema",
        Factuality.UNCERTAIN,
        "suggest",
    ),
]


class TestRuleGoldens:
    @pytest.mark.parametrize("text, factuality, rule_id", RULE_GOLDENS)
    def test_polarity_and_rule(self, module, text, factuality, rule_id):
        annotation = module.annotate_text(text)
        assert annotation.factuality is factuality
        assert rule_id in annotation.matched_rule_ids

    def test_anchor_sentence(self, module):
        a = module.annotate_text("definite focal consolidation is seen in left side of lungs")
        assert a.primary_concept == "rl:focal_consolidation"
        assert a.factuality is Factuality.AFFIRMED

    def test_positive_key(self, module):
        a = module.annotate_text(
            "there is a focal consolidation at the left lung base adjacent to the lateral hemidiaphragm"
        )
        assert a.primary_concept == "rl:focal_consolidation"
        assert a.factuality is Factuality.AFFIRMED

    def test_disease_negative_key(self, module):
        a = module.annotate_text("there are low lung volumes and mild bibasilar atelectasis")
        assert a.primary_concept == "rl:bibasilar_atelectasis"
        assert a.primary_mention.observation == "Atelectasis"
        assert a.factuality is Factuality.AFFIRMED

    def test_factuality_negative_key(self, module):
        a = module.annotate_text("the lungs are clear of any focal consolidation")
        assert a.primary_concept == "rl:focal_consolidation"
        assert a.factuality is Factuality.NEGATED

    def test_uncertain_opacity(self, module):
        a = module.annotate_text("subtle opacity at the right base could represent infection")
        assert a.primary_concept == "rl:opacity"
        assert a.factuality is Factuality.UNCERTAIN
        assert all(m.factuality is Factuality.UNCERTAIN for m in a.disease_mentions)


class TestMatchConcepts:
    def test_longest_match_wins(self):
        lexicon = ConceptLexicon(
            {"c:consolidation": ("Consolidation", ["consolidation"]), "c:focal": ("Consolidation", ["focal consolidation"])}
        )
        mentions = match_concepts(lemmas("focal consolidation is seen"), lexicon)
        assert [(m.concept_id, m.start, m.end) for m in mentions] == [("c:focal", 0, 2)]

    def test_distinct_pleural_concepts(self, module):
        mentions = match_concepts(lemmas("pleural effusion and pleural edema"), module.concepts)
        assert [m.concept_id for m in mentions] == ["rl:pleural_effusion", "rl:pleural_edema"]

    def test_no_match(self):
        lexicon = ConceptLexicon({"c:pneumonia": ("Pneumonia", ["pneumonia"])})
        assert match_concepts(lemmas("heart size normal"), lexicon) == []

    def test_no_overlaps_over_corpus(self, synthetic_annotated):
        for report in synthetic_annotated:
            for s in report.sentences:
                spans = sorted(m.token_span for m in s.concept_mentions)
                for (_, end), (start, _) in zip(spans, spans[1:]):
                    assert end <= start

    def test_phrase_owned_by_two_concepts(self):
        with pytest.raises(LexiconError):
            ConceptLexicon({"a": ("Edema", ["edema"]), "b": ("Edema", ["edema"])})

    def test_with_phrase(self, module):
        extended = module.concepts.with_phrase("rl:pneumonia", "lung infiltrate")
        mentions = match_concepts(lemmas("new lung infiltrate"), extended)
        assert [m.concept_id for m in mentions] == ["rl:pneumonia"]


class TestMatchFactualityTerms:
    def test_multiword_negation(self, module):
        terms = match_factuality_terms(lemmas("no evidence of pneumonia"), module.factuality)
        assert [(t.polarity, t.token_span) for t in terms] == [(Polarity.NEGATION, (0, 3))]

    def test_could_be(self, module):
        terms = match_factuality_terms(lemmas("could be due to atelectasis"), module.factuality)
        assert [(t.polarity, t.token_span) for t in terms] == [(Polarity.UNCERTAINTY, (0, 2))]

    def test_phrase_boundary(self):
        lexicon = FactualityLexicon([Cue(Polarity.NEGATION, ("clear", "of"))])
        assert match_factuality_terms(lemmas("lungs are clear."), lexicon) == []

    def test_conflicting_polarity(self):
        with pytest.raises(LexiconError):
            FactualityLexicon([Cue(Polarity.NEGATION, ("rule", "out")), Cue(Polarity.UNCERTAINTY, ("rule", "out"))])

    def test_cue_length(self):
        with pytest.raises(LexiconError):
            FactualityLexicon([Cue(Polarity.NEGATION, ("a", "b", "c", "d", "e"))])

    def test_bundled_lexicon_contents(self, module):
        assert ("no", "evidence", "of") in module.factuality.negation_terms
        assert ("could", "be") in module.factuality.uncertainty_terms
        assert not module.factuality.negation_terms & module.factuality.uncertainty_terms


class TestRules:
    def test_parse(self):
        rule = parse_rule("NEG clear_of := * + {clear,free} + <of> + * + CONCEPT")
        assert rule.rule_id == "clear_of"
        assert rule.polarity is Polarity.NEGATION
        assert len(rule.elements) == 5

    def test_default_id(self):
        assert parse_rule("UNC := {may be} + * + CONCEPT", default_id="r7").rule_id == "r7"

    @pytest.mark.parametrize(
        "line",
        [
            "NEG := * + {clear} + <of> + *",  # no concept
            "NEG := * + CONCEPT + CONCEPT + {no}",  # two concepts
            "NEG := * + <of> + CONCEPT",  # no term class
            "NEG := * + {clear} + <out of> + CONCEPT",  # multi-word preposition
            "MAYBE := {may} + CONCEPT",  # bad polarity
            "NEG := {clear} + ??? + CONCEPT",  # unknown element
        ],
    )
    def test_malformed(self, line):
        with pytest.raises(MalformedRule):
            parse_rule(line)

    def test_duplicate_ids(self, tmp_path):
        path = tmp_path / "rules.txt"
        path.write_text("NEG a := {no} + * + CONCEPT\nUNC a := {may} + * + CONCEPT\n")
        with pytest.raises(MalformedRule):
            load_rules(str(path))

    def test_post_concept_rule(self, module):
        rule = parse_rule("UNC post := * + CONCEPT + * + {cannot be excluded}")
        sentence = lemmas("pneumonia in the left base cannot be excluded")
        mentions = match_concepts(sentence, module.concepts)
        matches = apply_rules(sentence, mentions, [rule])
        assert [(m.rule_id, m.polarity) for m in matches] == [("post", Polarity.UNCERTAINTY)]

    def test_gap_limit(self, module):
        rule = parse_rule("NEG := * + {no} + * + CONCEPT")
        sentence = lemmas("no " + "word " * 12 + "pneumonia")
        mentions = match_concepts(sentence, module.concepts)
        assert apply_rules(sentence, mentions, [rule], max_gap=10) == []
        assert len(apply_rules(sentence, mentions, [rule], max_gap=12)) == 1

    def test_rule_matches_each_mention(self, module):
        sentence = lemmas("no evidence of pneumonia or pneumothorax")
        mentions = match_concepts(sentence, module.concepts)
        matches = apply_rules(sentence, mentions, module.rules)
        assert {m.mention_index for m in matches if m.rule_id == "no_evidence"} == {0, 1}

    def test_concept_slot_skips_anatomy(self, module):
        sentence = lemmas("no evidence of left lung")
        mentions = match_concepts(sentence, module.concepts)
        assert [m.concept_id for m in mentions] == ["rl:lung"]
        assert not mentions[0].is_disease
        assert apply_rules(sentence, mentions, module.rules) == []


class TestAnnotateSentence:
    def test_negation_outranks_uncertainty(self, module):
        a = module.annotate_text("no evidence of pneumonia, possible atelectasis")
        assert a.factuality is Factuality.NEGATED

    def test_mention_level_factuality(self, module):
        a = module.annotate_text("there is pneumonia but no pleural effusion")
        by_concept = {m.concept_id: m.factuality for m in a.disease_mentions}
        assert by_concept["rl:pneumonia"] is Factuality.AFFIRMED
        assert by_concept["rl:pleural_effusion"] is Factuality.NEGATED

    def test_protected_indices(self, module):
        a = module.annotate_text("the lungs are clear of any focal consolidation")
        protected_lemmas = {a.lemmas[i] for i in a.protected_token_indices}
        assert {"clear", "of", "focal", "consolidation"} <= protected_lemmas
        assert "any" not in protected_lemmas

    def test_protected_indices_cover_mentions_and_terms(self, synthetic_annotated):
        for report in synthetic_annotated:
            for s in report.sentences:
                for m in s.concept_mentions:
                    assert set(range(m.start, m.end)) <= s.protected_token_indices
                for t in s.factuality_terms:
                    assert set(range(t.start, t.end)) <= s.protected_token_indices

    def test_no_disease_not_sampleable(self, module):
        a = module.annotate_text("heart size is normal")
        assert not a.sampleable
        assert a.primary_concept is None

    def test_background_not_sampleable(self, module):
        a = module.annotate_text("history of pneumonia", section="BACKGROUND")
        assert a.disease_mentions
        assert not a.sampleable

    def test_deterministic(self, module):
        text = "perihilar opacity could be due to asymmetrical edema"
        assert module.annotate_text(text) == module.annotate_text(text)

    def test_record_roundtrip(self, module):
        a = module.annotate_text("there are no evidences of acute pneumothorax", section="FINDINGS")
        assert SentenceAnnotation.from_record(a.to_record()) == a

    def test_empty_rule_set(self, module):
        bare = InfoPreservationModule(module.concepts, module.factuality, ())
        a = bare.annotate_text("the lungs are clear of any focal consolidation")
        assert a.matched_rule_ids == ()
        assert a.factuality is Factuality.NEGATED


class TestAnnotateCorpus:
    def test_example_impression(self, example_annotated):
        impression = [s for s in example_annotated.sentences if s.section == "IMPRESSION"]
        assert len(impression) == 1
        assert impression[0].primary_concept == "rl:pneumonia"
        assert impression[0].factuality is Factuality.NEGATED

    def test_example_weak_labels(self, example_annotated):
        labels = dict(zip(
            ["Enlarged Cardiomediastinum", "Cardiomegaly", "Lung Opacity", "Lung Lesion", "Edema",
             "Consolidation", "Pneumonia", "Atelectasis", "Pneumothorax", "Pleural Effusion",
             "Pleural Other", "Fracture", "Support Devices", "No Finding"],
            example_annotated.weak_labels,
        ))
        assert labels["Pneumonia"] == "negative"
        assert labels["Pleural Effusion"] == "negative"

    def test_empty(self, module):
        assert annotate_corpus([], module) == {}

    def test_two_reports(self, module):
        reports = [parse_report("Lungs are clear.", "a", "p1"), parse_report("No pneumothorax is seen.", "b", "p2")]
        assert set(annotate_corpus(reports, module)) == {"a", "b"}

    def test_sentence_pool(self, synthetic_annotated):
        pool = sentence_pool(synthetic_annotated)
        assert pool and all(s.sampleable and s.disease_mentions for s in pool)

    def test_annotations_io(self, tmp_path, synthetic_annotated):
        path = str(tmp_path / "annotations.jsonl")
        write_annotations(synthetic_annotated[:5], path)
        assert read_annotations(path) == list(synthetic_annotated[:5])

    def test_malformed_record(self):
        with pytest.raises(DataError):
            AnnotatedReport.from_record({"report_id": "r"})


class TestSyntheticAgreement:
    def test_planted_facts_recovered(self, synthetic_records, module):
        total, agree = 0, 0
        for record in synthetic_records:
            for fact in record["facts"]:
                annotation = module.annotate_text(fact["sentence"], section="FINDINGS")
                total += 1
                expected = {"affirmed": Factuality.AFFIRMED, "negated": Factuality.NEGATED,
                            "uncertain": Factuality.UNCERTAIN}[fact["factuality"]]
                observations = {m.observation for m in annotation.disease_mentions}
                agree += annotation.factuality is expected and fact["observation"] in observations
        assert total > 0
        assert agree / total >= 0.99


def test_lemmatize_phrase_matches_tokens():
    assert lemmatize_phrase("Pleural Effusions") == ("pleural", "effusion")
