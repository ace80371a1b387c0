"""Frame-level class labels for the four-way scheme."""

from enum import IntEnum


class ClassLabel(IntEnum):
    HEAD = 0
    ABDOMEN = 1
    FEMUR = 2
    BACKGROUND = 3


CLASS_NAMES = {
    ClassLabel.HEAD: "head",
    ClassLabel.ABDOMEN: "abdomen",
    ClassLabel.FEMUR: "femur",
    ClassLabel.BACKGROUND: "background",
}

NAME_TO_CLASS = {name: label for label, name in CLASS_NAMES.items()}

FOREGROUND_CLASSES = (ClassLabel.HEAD, ClassLabel.ABDOMEN, ClassLabel.FEMUR)

# Per-class cross-entropy weights (head, abdomen, femur, background).
DEFAULT_CLASS_WEIGHTS = (0.25, 0.25, 0.4, 0.1)


def parse_label(value) -> ClassLabel:
    """Accept a ClassLabel, an integer index or a class name string."""
    if isinstance(value, ClassLabel):
        return value
    if isinstance(value, str):
        try:
            return NAME_TO_CLASS[value.lower()]
        except KeyError:
            raise ValueError(f"unknown class name {value!r}") from None
    return ClassLabel(int(value))
