"""Linear model files: packaged coefficient tables and exported fold models."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from ..dataset import FeatureKey, FeatureMatrix

TABLE_IDS = ("L1", "L2", "L3", "Total")


class MissingFeaturesError(KeyError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"missing features: {', '.join(self.missing)}")


@dataclass
class ModelTable:
    """intercept + sum of coefficient * feature over canonical feature keys."""

    table_id: str
    intercept: float
    terms: list[tuple[FeatureKey, float]]
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ModelTable":
        terms = [(FeatureKey.parse(t["feature_key"]), float(t["coefficient"])) for t in doc["terms"]]
        return cls(str(doc["table_id"]), float(doc["intercept"]), terms, dict(doc.get("meta", {})))

    @classmethod
    def load(cls, path: str | Path) -> "ModelTable":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"table_id": self.table_id, "intercept": self.intercept,
                "terms": [{"feature_key": str(k), "coefficient": c} for k, c in self.terms],
                "meta": self.meta}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @property
    def keys(self) -> list[str]:
        return [str(k) for k, _ in self.terms]

    def predict(self, features: Mapping) -> float:
        """Score one feature vector given as a mapping keyed by FeatureKey or its string."""
        values = {str(k): v for k, v in features.items()}
        missing = [k for k in self.keys if k not in values]
        if missing:
            raise MissingFeaturesError(missing)
        out = self.intercept
        for k, c in self.terms:
            out += c * float(values[str(k)])
        return out

    def predict_matrix(self, fm: FeatureMatrix) -> np.ndarray:
        pos = {str(c): j for j, c in enumerate(fm.columns)}
        missing = [k for k in self.keys if k not in pos]
        if missing:
            raise MissingFeaturesError(missing)
        coef = np.array([c for _, c in self.terms])
        return self.intercept + fm.values[:, [pos[k] for k in self.keys]] @ coef


def load_pretrained(table_id: str) -> ModelTable:
    """One of the packaged tables L1, L2, L3 or Total (case-insensitive)."""
    match = {t.lower(): t for t in TABLE_IDS}.get(str(table_id).lower())
    if match is None:
        raise ValueError(f"unknown model table {table_id!r}; expected one of {TABLE_IDS}")
    ref = resources.files("saphys").joinpath("models", "published", f"{match.lower()}.json")
    return ModelTable.from_dict(json.loads(ref.read_text()))


def pretrained_predict(features: Mapping, table_id: str) -> float:
    return load_pretrained(table_id).predict(features)
