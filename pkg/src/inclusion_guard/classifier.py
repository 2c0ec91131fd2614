"""Benign-vs-malicious decision from a pair of HMMs."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import Label
from .hmm import (CategoricalHmm, HmmConfig, HmmError, ModelFormatError, TrainTrace, fit,
                  log_likelihood_forward, log_likelihood_many)

PAIR_FORMAT = "inclusion-guard/model-pair"
PAIR_VERSION = 1


class ArityMismatch(HmmError):
    pass


@dataclass(frozen=True)
class Decision:
    label: Label
    ll_benign: float
    ll_malicious: float
    margin: float

    @classmethod
    def from_scores(cls, ll_benign: float, ll_malicious: float, bias: float = 0.0) -> "Decision":
        margin = ll_malicious - ll_benign - bias
        # A tie (or two -inf scores) fails open.
        label = Label.MALICIOUS if margin > 0 else Label.BENIGN
        return cls(label, float(ll_benign), float(ll_malicious), float(margin))

    def to_dict(self) -> dict:
        return {"label": self.label.value, "ll_benign": self.ll_benign,
                "ll_malicious": self.ll_malicious, "margin": self.margin}


@dataclass(frozen=True)
class ModelPair:
    benign: CategoricalHmm
    malicious: CategoricalHmm
    bias: float = 0.0

    def __post_init__(self):
        if self.benign.arities != self.malicious.arities:
            raise ArityMismatch(
                f"benign arities {self.benign.arities} != malicious {self.malicious.arities}")

    @property
    def arities(self) -> tuple[int, ...]:
        return self.benign.arities

    def to_dict(self) -> dict:
        return {"format": PAIR_FORMAT, "version": PAIR_VERSION, "bias": self.bias,
                "benign": self.benign.to_dict(), "malicious": self.malicious.to_dict()}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict, expected_arities: Sequence[int] | None = None) -> "ModelPair":
        if d.get("format") != PAIR_FORMAT or d.get("version") != PAIR_VERSION:
            raise ModelFormatError(f"not a model-pair document (format={d.get('format')!r})")
        return cls(CategoricalHmm.from_dict(d["benign"], expected_arities),
                   CategoricalHmm.from_dict(d["malicious"], expected_arities),
                   float(d.get("bias", 0.0)))

    @classmethod
    def load(cls, path: str | Path, expected_arities: Sequence[int] | None = None) -> "ModelPair":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), expected_arities)


def _symbols(obs) -> np.ndarray:
    return getattr(obs, "symbols", obs)


def classify(pair: ModelPair, obs) -> Decision:
    x = np.asarray(_symbols(obs))
    if x.ndim == 2 and x.shape[1] != len(pair.arities):
        raise ArityMismatch(f"sequence has {x.shape[1]} features, models expect {len(pair.arities)}")
    return Decision.from_scores(log_likelihood_forward(pair.benign, x),
                                log_likelihood_forward(pair.malicious, x), pair.bias)


def classify_many(pair: ModelPair, seqs: Sequence) -> list[Decision]:
    """Batched equivalent of calling :func:`classify` on each sequence."""
    xs = [np.asarray(_symbols(s)) for s in seqs]
    for x in xs:
        if x.ndim == 2 and x.shape[1] != len(pair.arities):
            raise ArityMismatch(f"sequence has {x.shape[1]} features, models expect {len(pair.arities)}")
    lb = log_likelihood_many(pair.benign, xs)
    lm = log_likelihood_many(pair.malicious, xs)
    return [Decision.from_scores(b, m, pair.bias) for b, m in zip(lb, lm)]


def train_pair(benign: Sequence, malicious: Sequence, config: HmmConfig,
               bias: float = 0.0) -> tuple[ModelPair, TrainTrace, TrainTrace]:
    """Train one HMM per class from the same config (and seed)."""
    b_model, b_trace = fit(benign, config)
    m_model, m_trace = fit(malicious, config)
    return ModelPair(b_model, m_model, bias), b_trace, m_trace
