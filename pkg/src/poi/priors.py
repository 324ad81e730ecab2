"""Action-unit / expression prior knowledge and smoothed AU pseudolabels.

The prior table maps each expression class to the set of action units it
strongly correlates with, split by facial region (eye vs mouth). Pseudolabel
vectors replace the hard 0/1 AU indicators with epsilon / 1-epsilon to hedge
against wrong priors when the emotion label itself is noisy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

EYE_AU_ORDER = ("AU1", "AU2", "AU4", "AU5", "AU6", "AU9")
MOUTH_AU_ORDER = ("AU10", "AU12", "AU14", "AU15", "AU17", "AU24", "AU26")

REGIONS = ("eye", "mouth")

# High-correlation AU sets per expression. Classes absent here (Neutral)
# carry no strong AU evidence and get all-epsilon pseudolabels.
_DEFAULT_ACTIVE: dict[str, dict[str, tuple[str, ...]]] = {
    "Happy": {"eye": ("AU6",), "mouth": ("AU12", "AU26")},
    "Fear": {"eye": ("AU1", "AU4", "AU5"), "mouth": ("AU26",)},
    "Anger": {"eye": ("AU4",), "mouth": ("AU24",)},
    "Surprise": {"eye": ("AU1", "AU2", "AU5"), "mouth": ("AU26",)},
    "Sadness": {"eye": ("AU1", "AU4"), "mouth": ("AU15", "AU17")},
    "Disgust": {"eye": ("AU9",), "mouth": ("AU10", "AU17")},
    "Contempt": {"eye": (), "mouth": ("AU14",)},
    "Neutral": {"eye": (), "mouth": ()},
}

SEVEN_CLASSES = ("Surprise", "Fear", "Disgust", "Happy", "Sadness", "Anger", "Neutral")
EIGHT_CLASSES = SEVEN_CLASSES + ("Contempt",)


class UnknownLookupError(KeyError):
    """Expression or region not present in the prior table."""


@dataclass(frozen=True)
class AUPriorTable:
    """Immutable expression -> (region -> active AU set) map with fixed AU orders."""

    expressions: tuple[str, ...]
    eye_au_order: tuple[str, ...] = EYE_AU_ORDER
    mouth_au_order: tuple[str, ...] = MOUTH_AU_ORDER
    active: dict[str, dict[str, tuple[str, ...]]] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.eye_au_order) != 6 or len(self.mouth_au_order) != 7:
            raise ValueError("AU orders must have 6 eye and 7 mouth entries")
        for expr in self.expressions:
            for region in REGIONS:
                order = self.region_order(region)
                for au in self.active.get(expr, {}).get(region, ()):
                    if au not in order:
                        raise ValueError(f"{au} not in the {region} AU order")

    @property
    def num_classes(self) -> int:
        return len(self.expressions)

    def region_order(self, region: str) -> tuple[str, ...]:
        if region == "eye":
            return self.eye_au_order
        if region == "mouth":
            return self.mouth_au_order
        raise UnknownLookupError(f"unknown region {region!r}")

    def active_aus(self, expression: str, region: str) -> tuple[str, ...]:
        if expression not in self.expressions:
            raise UnknownLookupError(f"unknown expression {expression!r}")
        return self.active.get(expression, {}).get(region, ())

    def pseudolabels(self, expression: str, region: str, epsilon: float) -> np.ndarray:
        """Smoothed AU target vector: 1-eps where the AU is active, eps elsewhere."""
        if not 0.0 <= epsilon < 0.5:
            raise ValueError(f"epsilon must be in [0, 0.5), got {epsilon}")
        order = self.region_order(region)
        active = set(self.active_aus(expression, region))
        return np.array([1.0 - epsilon if au in active else epsilon for au in order])

    def pseudolabel_matrix(self, region: str, epsilon: float) -> np.ndarray:
        """[C, M_region] matrix of pseudolabel vectors in class order."""
        return np.stack([self.pseudolabels(expr, region, epsilon) for expr in self.expressions])

    def activation_matrix(self, region: str) -> np.ndarray:
        """[C, M_region] boolean matrix of active AUs in class order."""
        return self.pseudolabel_matrix(region, 0.0).astype(bool)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AUPriorTable":
        raw = json.loads(text)
        return cls(
            expressions=tuple(raw["expressions"]),
            eye_au_order=tuple(raw["eye_au_order"]),
            mouth_au_order=tuple(raw["mouth_au_order"]),
            active={
                expr: {region: tuple(aus) for region, aus in regions.items()}
                for expr, regions in raw["active"].items()
            },
        )


def default_table(classes: tuple[str, ...] = SEVEN_CLASSES) -> AUPriorTable:
    """Prior table for the given class roster (default: 7 classes, no Contempt)."""
    unknown = [c for c in classes if c not in _DEFAULT_ACTIVE]
    if unknown:
        raise ValueError(f"no prior knowledge for classes {unknown}")
    return AUPriorTable(
        expressions=tuple(classes),
        active={c: {r: _DEFAULT_ACTIVE[c][r] for r in REGIONS} for c in classes},
    )
