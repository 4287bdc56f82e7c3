import hashlib
import json
import os
import random

import numpy as np
import torch


class DataError(Exception):
    """Input data that cannot be processed (maps to exit code 2)."""


class NumericError(Exception):
    """Numerical failure during training or loss evaluation (maps to exit code 3)."""


class ConfigError(ValueError):
    """Invalid configuration value (maps to exit code 1)."""


def set_random_seeds(seed: int = 0):
    np.random.seed(seed)
    random.seed(seed)
    torch.manual_seed(seed)
    if torch.cuda.is_available():
        torch.cuda.manual_seed(seed)  # 1 gpu


def set_threads(threads: int | None):
    if threads is None:
        return
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    torch.set_num_threads(threads)
    if threads == 1:
        torch.use_deterministic_algorithms(True)


def batch_rng(seed: int, epoch: int, batch_index: int) -> np.random.Generator:
    """Independent RNG stream for one batch, split from the root seed."""
    return np.random.default_rng([seed, epoch, batch_index])


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def read_jsonl(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: invalid JSON ({e.msg})") from e
    return records


def write_jsonl(records, path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def ensure_parent_dir(path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
