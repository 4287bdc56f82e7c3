import os

# Label schema
OBSERVATIONS = [
    "Enlarged Cardiomediastinum",  # 0
    "Cardiomegaly",  # 1
    "Lung Opacity",  # 2
    "Lung Lesion",  # 3
    "Edema",  # 4
    "Consolidation",  # 5
    "Pneumonia",  # 6
    "Atelectasis",  # 7
    "Pneumothorax",  # 8
    "Pleural Effusion",  # 9
    "Pleural Other",  # 10
    "Fracture",  # 11
    "Support Devices",  # 12
    "No Finding",  # 13
]
DISEASE_OBSERVATIONS = OBSERVATIONS[:13]
NO_FINDING = "No Finding"
LABEL_SCHEMA_VERSION = 1

CLASS_NAMES = ["blank", "positive", "negative", "uncertain"]
NO_FINDING_CLASS_NAMES = ["blank", "positive"]
N_CLASSES = len(CLASS_NAMES)
N_NO_FINDING_CLASSES = len(NO_FINDING_CLASS_NAMES)

# Vocabulary
PAD_TOKEN = "[PAD]"
CLS_TOKEN = "[CLS]"
UNK_TOKEN = "[UNK]"
DEID_TOKEN = "__deid__"
RESERVED_TOKENS = [PAD_TOKEN, CLS_TOKEN, UNK_TOKEN, DEID_TOKEN]
PAD_ID, CLS_ID, UNK_ID, DEID_ID = 0, 1, 2, 3

# Report structure
BODY_SECTION = "BODY"
KNOWN_SECTIONS = [
    "BACKGROUND",
    "FINDINGS",
    "IMPRESSION",
    "INDICATION",
    "HISTORY",
    "CLINICAL HISTORY",
    "COMPARISON",
    "TECHNIQUE",
    "EXAMINATION",
    "EXAM",
]
SAMPLING_SECTIONS = ("FINDINGS", "IMPRESSION", BODY_SECTION)
CLASSIFICATION_SECTIONS = ("FINDINGS", "IMPRESSION")

ABBREVIATIONS = ("dr", "mr", "a.m", "p.m", "e.g", "i.e")
NUMERAL_ABBREVIATIONS = ("no",)  # only when the next token is a digit
MIN_SENTENCE_TOKENS = 2

# Lemmatizer
LEMMA_VERBS = frozenset(
    [
        "suggest",
        "suspect",
        "represent",
        "demonstrate",
        "observe",
        "note",
        "place",
        "increase",
        "decrease",
        "enlarge",
        "improve",
        "worsen",
        "resolve",
        "compare",
        "exclude",
        "concern",
        "rule",
        "visualize",
        "identify",
        "appear",
        "remain",
        "show",
        "persist",
        "develop",
        "reveal",
        "indicate",
        "evaluate",
        "position",
        "insert",
        "remove",
        "project",
        "consist",
        "question",
        "obscure",
    ]
)
LEMMA_EXCEPTIONS = {
    "masses": "mass",
    "diseases": "disease",
    "bases": "base",
    "cases": "case",
    "sinuses": "sinus",
    "doses": "dose",
    "processes": "process",
    "abscesses": "abscess",
    "increases": "increase",
    "decreases": "decrease",
    "causes": "cause",
    "courses": "course",
    "responses": "response",
    "lenses": "lens",
    "uses": "use",
    "phases": "phase",
    "pulses": "pulse",
    "nurses": "nurse",
    "series": "series",
    "species": "species",
    "does": "does",
    "has": "has",
    "was": "was",
    "this": "this",
    "thus": "thus",
    "lungs": "lung",
    "apices": "apex",
    "vertices": "vertex",
    "indices": "index",
    "pleurae": "pleura",
    "vertebrae": "vertebra",
    "seen": "seen",
    "clips": "clip",
}
# plurals of -sis nouns; any other -ses word is a plain -s plural
LEMMA_SIS_PLURALS = frozenset(
    [
        "anastomoses",
        "atelectases",
        "bronchiectases",
        "diagnoses",
        "fibroses",
        "kyphoses",
        "metastases",
        "necroses",
        "prognoses",
        "prostheses",
        "scolioses",
        "stenoses",
        "thromboses",
    ]
)
LEMMA_MAX_PASSES = 8

# Rule engine
MAX_WILDCARD_TOKENS = 10
CLAUSE_BREAKERS = frozenset(["but", "however", "although", "though", "whereas", "except", ";"])

# Bundled resources
RESOURCES_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "resources")
DEFAULT_LEXICON = os.path.join(RESOURCES_DIR, "radlex_subset.tsv")
DEFAULT_FACTUALITY = os.path.join(RESOURCES_DIR, "factuality.tsv")
DEFAULT_RULES = os.path.join(RESOURCES_DIR, "rules.txt")
DEFAULT_SYNONYMS = os.path.join(RESOURCES_DIR, "synonyms.tsv")

# Augmentation
AUG_PROBABILITY = 0.2
MAX_SPAN_LEN = 3

# Contrastive pre-training
ALGORITHMS = ["patient", "disease", "disease-factuality"]
PAIR_KEYS = ["concept", "observation"]
TAU = 0.4
PRETRAIN_LR = 0.1
PRETRAIN_EPOCHS = 100
DESK_PRETRAIN_EPOCHS = 20
PRETRAIN_BATCH_SIZE = 128
DESK_PRETRAIN_BATCH_SIZE = 32
N_NEGATIVES = 8
GRAD_CLIP = 1.0

# Fine-tuning
FINETUNE_MODES = ["linear", "full"]
FINETUNE_LR = 2e-5
DESK_FINETUNE_LR = 1e-3
FINETUNE_EPOCHS = 10
FINETUNE_BATCH_SIZE = 32
ADAM_BETAS = (0.9, 0.99)
ADAM_EPS = 1e-8
VAL_FRACTION = 0.2
LOG_CLAMP = 1e-12

# Encoder sizes: (d_model, n_layers, n_heads, d_ff, proj_dim)
ENCODER_PRESETS = {
    "tiny": (8, 1, 2, 16, 8),
    "small": (32, 1, 4, 64, 32),
    "desk": (64, 2, 4, 256, 64),
    "base": (768, 12, 12, 3072, 768),
}
DEFAULT_PRESET = "desk"
MAX_SEQ_LEN = 128

SEED_ENV_VAR = "RADCL_SEED"
