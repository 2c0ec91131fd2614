"""JSON run configuration shared by the CLI commands."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .evaluation import LabelingConfig
from .features import DiscretizationConfig, feature_arities
from .hmm import HmmConfig
from .hosts import DEFAULT_GENERIC_TLDS, RankTable, RoleTable, SuffixTable, Tables, default_suffix_table

SECTIONS = ("hmm", "features", "labeling", "tables", "classifier")


@dataclass
class AppConfig:
    hmm: dict = field(default_factory=dict)
    features: dict = field(default_factory=dict)
    labeling: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    classifier: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path | None) -> "AppConfig":
        if path is None:
            return cls()
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        return cls(**{k: dict(data.get(k, {})) for k in SECTIONS})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in SECTIONS}

    def discretization(self) -> DiscretizationConfig:
        return DiscretizationConfig(**self.features)

    def hmm_config(self, arities=None, **overrides) -> HmmConfig:
        params = {**self.hmm, **{k: v for k, v in overrides.items() if v is not None}}
        if arities is None:
            arities = feature_arities(self.discretization())
        params["feature_arities"] = list(arities)
        return HmmConfig.from_dict(params)

    def labeling_config(self) -> LabelingConfig:
        p = dict(self.labeling)
        p["reputable_whitelist"] = frozenset(h.lower() for h in p.get("reputable_whitelist", ()))
        return LabelingConfig(**p)

    def build_tables(self, suffixes=None, ranks=None, roles=None) -> Tables:
        t = self.tables
        include_private = t.get("include_private", True)
        suffixes = suffixes or t.get("suffixes")
        ranks = ranks or t.get("ranks")
        roles = roles or t.get("roles")
        return Tables(
            SuffixTable.load(suffixes, include_private) if suffixes
            else default_suffix_table(include_private),
            RankTable.load(ranks) if ranks else None,
            RoleTable.load_dir(roles) if roles else None,
            frozenset(t.get("generic_tlds", DEFAULT_GENERIC_TLDS)),
        )
