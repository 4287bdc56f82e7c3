import pytest

from corpus import parse_report, report_from_record
from generate_reports import GeneratorSpec, generate
from info_preservation import annotate_report, annotate_reports, default_module
from initialization import init_vocabulary
from models import EncoderConfig

EXAMPLE_REPORT = (
    "BACKGROUND: Radiographic examination of the chest. clinical history: 80 years of age, male. "
    "PA AND LATERAL CHEST, ___\n"
    "FINDINGS: Heart size and mediastinal contours are normal. The right hilum is asymmetrically enlarged "
    "compared to the left hilum but has a similar size and configuration compared to a baseline radiograph "
    "___ ___. A chest CT performed in ___ demonstrated no evidence of a right hilum mass, and the observed "
    "asymmetry is probably due to a combination of a slight rotation related to mild scoliosis and a "
    "prominent pulmonary vascularity.\n\n"
    "Lungs are slightly hyperexpanded but grossly clear of pleural effusions.\n"
    "IMPRESSION: No radiographic evidence of pneumonia."
)


@pytest.fixture(scope="session")
def module():
    return default_module()


@pytest.fixture
def example_report():
    return parse_report(EXAMPLE_REPORT, "r1", "p1")


@pytest.fixture
def example_annotated(example_report, module):
    return annotate_report(example_report, module)


@pytest.fixture(scope="session")
def synthetic_records():
    return generate(GeneratorSpec(n_patients=30, seed=3))


@pytest.fixture(scope="session")
def synthetic_annotated(synthetic_records, module):
    return annotate_reports([report_from_record(r) for r in synthetic_records], module)


@pytest.fixture(scope="session")
def synthetic_vocab(synthetic_annotated):
    return init_vocabulary(synthetic_annotated)


@pytest.fixture
def tiny_config(synthetic_vocab):
    return EncoderConfig.from_preset("tiny", len(synthetic_vocab), max_seq_len=48)
