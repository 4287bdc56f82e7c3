from dataclasses import dataclass
from enum import IntEnum

from constants import CLASS_NAMES, DISEASE_OBSERVATIONS, NO_FINDING, OBSERVATIONS
from utils import DataError


class LabelDomainError(DataError):
    pass


class LabelClass(IntEnum):
    BLANK = 0
    POSITIVE = 1
    NEGATIVE = 2
    UNCERTAIN = 3

    @property
    def name_lower(self) -> str:
        return CLASS_NAMES[self.value]

    @classmethod
    def parse(cls, value) -> "LabelClass":
        if isinstance(value, LabelClass):
            return value
        if isinstance(value, int):
            return cls(value)
        key = str(value).strip().lower()
        if key not in CLASS_NAMES:
            raise LabelDomainError(f"unknown label class {value!r}")
        return cls(CLASS_NAMES.index(key))


# When several mentions of one observation disagree, the stronger class wins.
_PRECEDENCE = {
    LabelClass.BLANK: 0,
    LabelClass.NEGATIVE: 1,
    LabelClass.UNCERTAIN: 2,
    LabelClass.POSITIVE: 3,
}


@dataclass(frozen=True)
class LabelVector:
    """Fixed-order 14-slot label vector; the last slot is No Finding."""

    values: tuple[LabelClass, ...]

    def __post_init__(self):
        if len(self.values) != len(OBSERVATIONS):
            raise LabelDomainError(f"expected {len(OBSERVATIONS)} labels, got {len(self.values)}")
        if self.values[-1] not in (LabelClass.BLANK, LabelClass.POSITIVE):
            raise LabelDomainError(f"{NO_FINDING} must be blank or positive, got {self.values[-1].name_lower}")

    @classmethod
    def parse(cls, values) -> "LabelVector":
        return cls(tuple(LabelClass.parse(v) for v in values))

    def __getitem__(self, observation) -> LabelClass:
        if isinstance(observation, str):
            return self.values[OBSERVATIONS.index(observation)]
        return self.values[observation]

    def __len__(self):
        return len(self.values)

    def to_strings(self) -> list[str]:
        return [v.name_lower for v in self.values]

    def to_ints(self) -> list[int]:
        return [int(v) for v in self.values]


def aggregate_labels(mentions) -> LabelVector:
    """Fold (observation, LabelClass) pairs into a report-level label vector."""
    slots = {obs: LabelClass.BLANK for obs in DISEASE_OBSERVATIONS}
    for observation, label in mentions:
        if observation not in slots:
            continue
        label = LabelClass.parse(label)
        if _PRECEDENCE[label] > _PRECEDENCE[slots[observation]]:
            slots[observation] = label
    no_finding = (
        LabelClass.POSITIVE
        if all(v in (LabelClass.BLANK, LabelClass.NEGATIVE) for v in slots.values())
        else LabelClass.BLANK
    )
    return LabelVector(tuple(slots[obs] for obs in DISEASE_OBSERVATIONS) + (no_finding,))
