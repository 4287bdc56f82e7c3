from dataclasses import dataclass, field, fields

import numpy as np
import typer

from config import parse_config_file
from constants import DISEASE_OBSERVATIONS
from labels import LabelClass, aggregate_labels
from utils import ConfigError, write_jsonl

# Surface phrases per observation; each one is in the bundled lexicon under that observation.
DISEASE_PHRASES = {
    "Enlarged Cardiomediastinum": ["widened mediastinum", "mediastinal widening"],
    "Cardiomegaly": ["cardiomegaly", "cardiac enlargement"],
    "Lung Opacity": ["opacity", "airspace opacity"],
    "Lung Lesion": ["pulmonary nodule", "lung mass"],
    "Edema": ["pulmonary edema", "interstitial edema"],
    "Consolidation": ["focal consolidation", "consolidation"],
    "Pneumonia": ["pneumonia"],
    "Atelectasis": ["atelectasis", "bibasilar atelectasis"],
    "Pneumothorax": ["pneumothorax"],
    "Pleural Effusion": ["pleural effusion"],
    "Pleural Other": ["pleural thickening"],
    "Fracture": ["rib fracture"],
    "Support Devices": ["endotracheal tube", "central line"],
}

LOCATIONS = ["left lung base", "right lung base", "left lower lobe", "right upper lobe", "right lung", "left lung"]

TEMPLATES = {
    "affirmed": (
        "there is {d} in the {loc}.",
        "{d} is seen in the {loc}.",
        "definite {d} is present.",
    ),
    "negated": (
        "no evidence of {d}.",
        "the lungs are clear of any {d}.",
        "there is no {d}.",
        "the {loc} is free of {d}.",
        "negative for {d}.",
    ),
    "uncertain": (
        "{d} could be present in the {loc}.",
        "findings may represent {d}.",
        "possible {d} in the {loc}.",
        "cannot exclude {d}.",
        "findings suggesting {d}.",
    ),
}

FILLERS = (
    "heart size is normal.",
    "the mediastinal contours are unremarkable.",
    "the osseous structures are intact.",
    "the trachea is midline.",
    "comparison is made to the prior study.",
    "there is mild degenerative change of the thoracic spine.",
    "the cardiomediastinal silhouette is within normal limits.",
    "the upper abdomen is unremarkable.",
)

POLARITIES = ("affirmed", "negated", "uncertain")
DEFAULT_MIN_FACTS = 1
DEFAULT_MAX_FACTS = 3
_LABEL_OF = {"affirmed": LabelClass.POSITIVE, "negated": LabelClass.NEGATIVE, "uncertain": LabelClass.UNCERTAIN}


@dataclass
class GeneratorSpec:
    n_patients: int = 100
    min_reports: int = 1
    max_reports: int = 3
    min_facts: int | None = None
    max_facts: int | None = None
    p_affirmed: float = 0.5
    p_negated: float = 0.3
    p_uncertain: float = 0.2
    diseases: tuple = tuple(DISEASE_OBSERVATIONS)
    seed: int = 0
    templates: dict = field(default_factory=lambda: dict(TEMPLATES), repr=False)
    fillers: tuple = field(default=FILLERS, repr=False)

    def __post_init__(self):
        if self.n_patients < 1:
            raise ConfigError(f"n_patients must be >= 1, got {self.n_patients}")
        if not 1 <= self.min_reports <= self.max_reports:
            raise ConfigError("reports per patient must satisfy 1 <= min_reports <= max_reports")
        if isinstance(self.diseases, str):
            self.diseases = tuple(d.strip() for d in self.diseases.split(",") if d.strip())
        unknown = [d for d in self.diseases if d not in DISEASE_PHRASES]
        if unknown:
            raise ConfigError(f"unknown diseases {unknown}")
        if not self.diseases:
            raise ConfigError("at least one disease is required")
        # unset fact counts default to what the disease list can support
        if self.max_facts is None:
            self.max_facts = min(DEFAULT_MAX_FACTS, len(self.diseases))
        if self.min_facts is None:
            self.min_facts = min(DEFAULT_MIN_FACTS, self.max_facts)
        if not 0 <= self.min_facts <= self.max_facts:
            raise ConfigError("facts per report must satisfy 0 <= min_facts <= max_facts")
        if self.max_facts > len(self.diseases):
            raise ConfigError("max_facts cannot exceed the number of diseases")
        probs = self.polarity_distribution
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-9:
            raise ConfigError(f"polarity distribution must be non-negative and sum to 1, got {probs}")
        for polarity, p in zip(POLARITIES, probs):
            if p > 0 and not self.templates.get(polarity):
                raise ConfigError(f"no templates for polarity {polarity!r}")
        if self.max_facts + 1 > 8:
            raise ConfigError("max_facts must leave room for at most 8 sentences per report")

    @property
    def polarity_distribution(self) -> tuple[float, float, float]:
        return self.p_affirmed, self.p_negated, self.p_uncertain

    @classmethod
    def from_file(cls, path: str, **overrides) -> "GeneratorSpec":
        raw = parse_config_file(path)
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, value in raw.items():
            if key not in types or key in ("templates", "fillers"):
                raise ConfigError(f"{path}: unknown generator key {key!r}")
            if key == "diseases":
                values[key] = value
            elif types[key] in (int, "int", int | None, "int | None"):
                values[key] = int(value)
            else:
                values[key] = float(value)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _capitalize(sentence: str) -> str:
    return sentence[:1].upper() + sentence[1:]


def _pick(options, rng):
    return options[int(rng.integers(len(options)))]


def _fact_sentence(observation, polarity, spec, rng, exclude=None):
    phrase = _pick(DISEASE_PHRASES[observation], rng)
    templates = [t for t in spec.templates[polarity] if t != exclude] or list(spec.templates[polarity])
    template = _pick(templates, rng)
    return template, template.format(d=phrase, loc=_pick(LOCATIONS, rng))


def generate_patient(index: int, spec: GeneratorSpec) -> list[dict]:
    rng = np.random.default_rng([spec.seed, index])
    patient_id = f"p{index + 1:05d}"
    n_reports = int(rng.integers(spec.min_reports, spec.max_reports + 1))
    n_patient_diseases = int(rng.integers(max(1, spec.min_facts), max(1, spec.max_facts) + 1))
    patient_diseases = [spec.diseases[int(i)] for i in rng.choice(len(spec.diseases), n_patient_diseases, replace=False)]
    age = int(rng.integers(25, 95))
    sex = _pick(["male", "female"], rng)

    records = []
    for j in range(n_reports):
        n_facts = int(rng.integers(spec.min_facts, spec.max_facts + 1))
        n_facts = min(n_facts, len(patient_diseases))
        observations = [patient_diseases[int(i)] for i in rng.permutation(len(patient_diseases))[:n_facts]]
        facts, findings = [], []
        for obs in observations:
            polarity = POLARITIES[int(rng.choice(3, p=spec.polarity_distribution))]
            template, sentence = _fact_sentence(obs, polarity, spec, rng)
            facts.append({"observation": obs, "factuality": polarity, "template": template, "sentence": sentence})
            findings.append(sentence)

        impression = []
        if facts:
            lead = facts[0]
            _, sentence = _fact_sentence(lead["observation"], lead["factuality"], spec, rng, exclude=lead["template"])
            facts.append({**lead, "sentence": sentence})
            impression.append(sentence)
        else:
            impression.append(_pick(spec.fillers, rng))

        n_used = len(findings) + len(impression)
        n_fill = int(rng.integers(max(0, 3 - n_used), 8 - n_used + 1))
        for _ in range(n_fill):
            findings.insert(int(rng.integers(len(findings) + 1)), _pick(spec.fillers, rng))

        text = (
            f"BACKGROUND: Radiographic examination of the chest. {age} years of age, {sex}.\n\n"
            f"FINDINGS: {' '.join(_capitalize(s) for s in findings)}\n\n"
            f"IMPRESSION: {' '.join(_capitalize(s) for s in impression)}"
        )
        labels = aggregate_labels((f["observation"], _LABEL_OF[f["factuality"]]) for f in facts)
        records.append(
            {
                "report_id": f"{patient_id}-r{j + 1:02d}",
                "patient_id": patient_id,
                "text": text,
                "labels": labels.to_strings(),
                "facts": [{k: f[k] for k in ("observation", "factuality", "sentence")} for f in facts],
            }
        )
    return records


def generate(spec: GeneratorSpec) -> list[dict]:
    return [record for i in range(spec.n_patients) for record in generate_patient(i, spec)]


def main(
    output: str = "data/synthetic.jsonl",
    n_patients: int = None,
    seed: int = None,
    spec_file: str = None,
):
    overrides = {"n_patients": n_patients, "seed": seed}
    if spec_file:
        spec = GeneratorSpec.from_file(spec_file, **overrides)
    else:
        spec = GeneratorSpec(**{k: v for k, v in overrides.items() if v is not None})
    records = generate(spec)
    write_jsonl(records, output)
    print(f"[gen] {len(records)} reports for {spec.n_patients} patients -> {output}")


if __name__ == "__main__":
    typer.run(main)
