"""Labeling, cross-validation and the other offline experiments."""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .classifier import Decision, ModelPair, classify_many, train_pair
from .features import (FEATURE_NAMES, Category, DiscretizationConfig, Label, ObservationSequence,
                       Vectorizer, category_columns, feature_arities)
from .hmm import CategoricalHmm, HmmConfig, init_model, sample_batch
from .tree import InclusionSequence, InclusionTree

log = logging.getLogger(__name__)

METRICS_FORMAT = "inclusion-guard/metrics"
BUCKETS = ("same-day", "<=1 week", "<=1 month", "later", "never")


class InsufficientData(ValueError):
    pass


class EmptySubset(ValueError):
    pass


class InvalidSpec(ValueError):
    pass


# --- scanner reports and labeling -------------------------------------------

@dataclass(frozen=True)
class ScannerReport:
    host: str
    flagged: int
    total: int = 62
    first_reported: dt.date | None = None

    def __post_init__(self):
        if not 0 <= self.flagged <= self.total:
            raise ValueError(f"{self.host}: flagged={self.flagged} outside [0, {self.total}]")


def load_reports(path: str | Path) -> dict[str, ScannerReport]:
    """CSV ``host,flagged,total,first_reported``; a header row is optional."""
    reports = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#") or row[0].strip() == "host":
                continue
            host = row[0].strip().lower()
            date = row[3].strip() if len(row) > 3 else ""
            reports[host] = ScannerReport(
                host, int(row[1]), int(row[2]) if len(row) > 2 and row[2].strip() else 62,
                dt.date.fromisoformat(date[:10]) if date else None)
    return reports


@dataclass(frozen=True)
class LabelingConfig:
    malicious_threshold: int = 3
    reputable_whitelist: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.malicious_threshold < 1:
            raise ValueError("malicious_threshold must be >= 1")


@dataclass
class LabeledDataset:
    sequences: list[ObservationSequence]
    gray: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sequences)

    def of(self, label: Label) -> list[ObservationSequence]:
        return [s for s in self.sequences if s.label is label]

    @property
    def labels(self) -> list[Label]:
        return [s.label for s in self.sequences]

    def digest(self) -> str:
        h = hashlib.sha256()
        for s in self.sequences:
            h.update(json.dumps(s.to_dict(), sort_keys=True, separators=(",", ":")).encode())
            h.update(b"\n")
        return "sha256:" + h.hexdigest()


def _flag_count(host, reports: Mapping[str, ScannerReport], config: LabelingConfig) -> int:
    wl = config.reputable_whitelist
    if host.raw in wl or (host.registrable is not None and host.registrable in wl):
        return 0
    rep = reports.get(host.raw)
    return rep.flagged if rep is not None else 0


def label_one(hosts, reports: Mapping[str, ScannerReport], config: LabelingConfig) -> Label | None:
    """Class of a host sequence, or None for a gray (excluded) sequence."""
    flags = [_flag_count(h, reports, config) for h in hosts]
    if flags[-1] >= config.malicious_threshold:
        return Label.MALICIOUS
    if not any(flags):
        return Label.BENIGN
    return None


def label_sequences(seqs: Iterable[InclusionSequence], reports: Mapping[str, ScannerReport],
                    config: LabelingConfig = LabelingConfig(),
                    vectorizer: Vectorizer | None = None) -> LabeledDataset:
    vectorizer = vectorizer or Vectorizer()
    out, gray = [], []
    for i, seq in enumerate(seqs):
        hosts = seq.hosts if hasattr(seq, "hosts") else tuple(seq)
        source = getattr(seq, "source", None) or str(i)
        label = label_one(hosts, reports, config)
        if label is None:
            gray.append(source)
            continue
        out.append(vectorizer.vectorize(hosts, label, source))
    log.info("labeled %d sequences, %d gray", len(out), len(gray))
    return LabeledDataset(out, gray)


@dataclass(frozen=True)
class SourcedSequence:
    """An inclusion sequence tagged with ``page:node`` provenance."""
    sequence: InclusionSequence
    source: str

    @property
    def hosts(self):
        return self.sequence.hosts


def unique_sequences(trees: Iterable[InclusionTree]) -> list[SourcedSequence]:
    """Every non-inline sequence across trees, deduplicated by URL path."""
    seen = set()
    out = []
    for tree in trees:
        for node_id in sorted(tree.nodes):
            if tree.nodes[node_id].inline:
                continue
            seq = tree.extract_sequence(node_id)
            key = seq.urls
            if key in seen:
                continue
            seen.add(key)
            out.append(SourcedSequence(seq, f"{tree.page_id}:{node_id}"))
    return out


# --- cross-validation ----------------------------------------------------------

def length_strata(lengths: Sequence[int], n_strata: int = 10) -> np.ndarray:
    lengths = np.asarray(lengths)
    if len(lengths) == 0:
        return lengths
    edges = np.unique(np.quantile(lengths, np.linspace(0, 1, n_strata + 1)[1:-1]))
    return np.digitize(lengths, edges, right=True)


def stratified_folds(labels: Sequence[Label], lengths: Sequence[int], k: int, seed: int) -> np.ndarray:
    """Fold index per item; stratified by class, spread across length deciles."""
    labels = np.asarray([Label(x).value for x in labels])
    strata = length_strata(lengths)
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=np.int64)
    start = 0
    for cls in sorted(set(labels)):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        idx = idx[np.argsort(strata[idx], kind="stable")]
        folds[idx] = (start + np.arange(len(idx))) % k
        # Carry the round-robin position over so total fold sizes stay even.
        start = (start + len(idx)) % k
    return folds


@dataclass
class Metrics:
    false_positive_rate: float
    false_negative_rate: float
    detection_rate: float
    accuracy: float
    confusion: dict
    per_fold: list[dict]
    records: list[dict] = field(default_factory=list)

    def to_dict(self, with_records: bool = True) -> dict:
        d = asdict(self)
        if not with_records:
            d.pop("records")
        return d


def _rate(num: int, den: int) -> float | None:
    return num / den if den else None


def metrics_from_records(records: Sequence[dict], k: int | None = None) -> Metrics:
    """Aggregate per-decision records (fold, true, predicted) into metrics.

    Rates are averages of the per-fold rates over folds where they are
    defined; folds are processed in index order so the result does not depend
    on record order.
    """
    folds = sorted({r["fold"] for r in records}) if k is None else list(range(k))
    per_fold = []
    for f in folds:
        rs = [r for r in records if r["fold"] == f]
        c = _confusion(rs)
        per_fold.append({"fold": f, **c,
                         "false_positive_rate": _rate(c["fp"], c["fp"] + c["tn"]),
                         "false_negative_rate": _rate(c["fn"], c["fn"] + c["tp"])})
    fprs = [p["false_positive_rate"] for p in per_fold if p["false_positive_rate"] is not None]
    fnrs = [p["false_negative_rate"] for p in per_fold if p["false_negative_rate"] is not None]
    fpr = float(sum(fprs) / len(fprs)) if fprs else 0.0
    fnr = float(sum(fnrs) / len(fnrs)) if fnrs else 0.0
    total = _confusion(records)
    n = sum(total.values())
    acc = (total["tp"] + total["tn"]) / n if n else 0.0
    recs = sorted(records, key=lambda r: (r["fold"], r["index"]))
    return Metrics(fpr, fnr, 1.0 - fnr, acc, total, per_fold, list(recs))


def _confusion(records) -> dict:
    c = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for r in records:
        mal_true = r["true"] == Label.MALICIOUS.value
        mal_pred = r["predicted"] == Label.MALICIOUS.value
        c[("t" if mal_true == mal_pred else "f") + ("p" if mal_pred else "n")] += 1
    return c


def _record(fold: int, index: int, obs: ObservationSequence, d: Decision) -> dict:
    return {"fold": fold, "index": index, "source": obs.source, "true": obs.label.value,
            "predicted": d.label.value, "margin": d.margin,
            "ll_benign": d.ll_benign, "ll_malicious": d.ll_malicious}


def kfold_evaluate(dataset: LabeledDataset | Sequence[ObservationSequence], k: int = 10,
                   hmm_config: HmmConfig | None = None, seed: int = 0, bias: float = 0.0) -> Metrics:
    seqs = list(dataset.sequences if isinstance(dataset, LabeledDataset) else dataset)
    if any(s.label is Label.UNLABELED for s in seqs):
        raise InsufficientData("dataset contains unlabeled sequences")
    if not 2 <= k <= len(seqs):
        raise InsufficientData(f"k={k} needs 2 <= k <= {len(seqs)} sequences")
    arities = tuple(int(a) for a in np.max([s.symbols.max(axis=0) for s in seqs], axis=0) + 1)
    if hmm_config is None:
        hmm_config = HmmConfig(feature_arities=arities)
    labels = [s.label for s in seqs]
    folds = stratified_folds(labels, [len(s) for s in seqs], k, seed)

    records = []
    for f in range(k):
        train = [s for s, g in zip(seqs, folds) if g != f]
        test_idx = np.flatnonzero(folds == f)
        benign = [s for s in train if s.label is Label.BENIGN]
        malicious = [s for s in train if s.label is Label.MALICIOUS]
        if not benign or not malicious:
            raise InsufficientData(f"fold {f}: training split lacks a class")
        pair, _, _ = train_pair(benign, malicious, hmm_config, bias)
        decisions = classify_many(pair, [seqs[i] for i in test_idx])
        records += [_record(f, int(i), seqs[i], d) for i, d in zip(test_idx, decisions)]
        log.info("fold %d/%d done", f + 1, k)
    return metrics_from_records(records, k)


def feature_ablation(dataset: LabeledDataset | Sequence[ObservationSequence],
                     category_subsets: Iterable[Iterable[Category | str]], k: int = 10,
                     hmm_config: HmmConfig | None = None, seed: int = 0,
                     names: Sequence[str] = FEATURE_NAMES) -> dict[str, Metrics]:
    """Retrain and evaluate with only the given feature categories kept."""
    seqs = list(dataset.sequences if isinstance(dataset, LabeledDataset) else dataset)
    full_arities = np.max([s.symbols.max(axis=0) for s in seqs], axis=0) + 1
    if hmm_config is not None:
        full_arities = np.asarray(hmm_config.feature_arities)
    out = {}
    for subset in category_subsets:
        subset = list(subset)
        if not subset:
            raise EmptySubset("feature category subset is empty")
        try:
            cats = sorted({Category(c) for c in subset}, key=list(Category).index)
        except ValueError as e:
            raise EmptySubset(str(e)) from e
        cols = category_columns(cats, names)
        masked = [ObservationSequence(s.symbols[:, cols], s.label, s.source) for s in seqs]
        cfg = HmmConfig(**{**(hmm_config.to_dict() if hmm_config else {}),
                           "feature_arities": [int(full_arities[c]) for c in cols]})
        name = "+".join(c.value for c in cats)
        out[name] = kfold_evaluate(masked, k, cfg, seed)
    return out


def metrics_document(metrics: Metrics, config: dict, inputs: dict) -> str:
    doc = {"format": METRICS_FORMAT, "version": 1, "metrics": metrics.to_dict(),
           "config": config, "inputs": inputs}
    return json.dumps(doc, sort_keys=True, indent=1)


# --- early detection -----------------------------------------------------------

def _bucket(delay_days: int | None) -> str:
    if delay_days is None:
        return "never"
    if delay_days <= 0:
        return "same-day"
    if delay_days <= 7:
        return "<=1 week"
    if delay_days <= 30:
        return "<=1 month"
    return "later"


def early_detection_report(detections: Iterable[tuple[str, dt.date]],
                           reports: Mapping[str, ScannerReport]) -> dict:
    """Histogram of how long after our detection each host was first reported.

    A host detected several times counts once, from its earliest detection.
    """
    first: dict[str, dt.date] = {}
    for host, day in detections:
        host = host.lower()
        if host not in first or day < first[host]:
            first[host] = day
    counts = dict.fromkeys(BUCKETS, 0)
    for host, day in first.items():
        rep = reports.get(host)
        if rep is None or rep.first_reported is None:
            counts["never"] += 1
        else:
            counts[_bucket((rep.first_reported - day).days)] += 1
    total = sum(counts.values())
    return {"total": total,
            "buckets": {b: {"count": counts[b], "fraction": counts[b] / total if total else 0.0}
                        for b in BUCKETS}}


def load_detections(path: str | Path) -> list[tuple[str, dt.date]]:
    """CSV ``host,detected`` (ISO dates)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if len(row) < 2 or row[0].strip() in ("", "host") or row[0].startswith("#"):
                continue
            out.append((row[0].strip(), dt.date.fromisoformat(row[1].strip()[:10])))
    return out


# --- synthetic data ------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    benign_count: int = 5000
    malicious_count: int = 5000
    min_length: int = 2
    max_length: int = 8
    # 0: both classes share one generator; 1: disjoint emission supports.
    separation: float = 1.0
    num_states: int = 3
    bins: int = 10
    signal_categories: tuple[str, ...] = ("DNS", "String", "Role")

    def __post_init__(self):
        object.__setattr__(self, "signal_categories", tuple(self.signal_categories))
        if self.benign_count < 0 or self.malicious_count < 0:
            raise InvalidSpec("counts must be non-negative")
        if not 1 <= self.min_length <= self.max_length:
            raise InvalidSpec("need 1 <= min_length <= max_length")
        if not 0.0 <= self.separation <= 1.0:
            raise InvalidSpec("separation must lie in [0, 1]")
        if self.num_states < 1:
            raise InvalidSpec("num_states must be >= 1")
        try:
            [Category(c) for c in self.signal_categories]
        except ValueError as e:
            raise InvalidSpec(str(e)) from e

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidSpec(f"unknown synthetic spec fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise InvalidSpec(str(e)) from e


def synthetic_generators(spec: SyntheticSpec, seed: int) -> ModelPair:
    """Benign/malicious generators that share dynamics and differ in emissions."""
    arities = feature_arities(DiscretizationConfig(bins=spec.bins))
    base = init_model(HmmConfig(feature_arities=arities, num_states=spec.num_states, seed=seed))
    signal = set(category_columns(spec.signal_categories))
    s = spec.separation
    ben, mal = [], []
    for f, b in enumerate(base.emissions):
        if f not in signal:
            ben.append(b)
            mal.append(b)
            continue
        even = np.zeros(b.shape[1])
        even[0::2] = 1.0
        b_ben = b * even
        b_mal = b * (1.0 - even)
        b_ben /= b_ben.sum(axis=1, keepdims=True)
        b_mal /= b_mal.sum(axis=1, keepdims=True)
        ben.append(_renorm((1 - s) * b + s * b_ben))
        mal.append(_renorm((1 - s) * b + s * b_mal))
    return ModelPair(CategoricalHmm(base.initial, base.transition, ben),
                     CategoricalHmm(base.initial, base.transition, mal))


def _renorm(a: np.ndarray) -> np.ndarray:
    a = a / a.sum(axis=1, keepdims=True)
    return a / a.sum(axis=1, keepdims=True)


def _sample_class(model: CategoricalHmm, count: int, spec: SyntheticSpec,
                  rng: np.random.Generator) -> list[np.ndarray]:
    lengths = rng.integers(spec.min_length, spec.max_length + 1, size=count)
    out: list[np.ndarray | None] = [None] * count
    for length in np.unique(lengths):
        idx = np.flatnonzero(lengths == length)
        batch = sample_batch(model, len(idx), int(length), rng)
        for i, x in zip(idx, batch):
            out[i] = x
    return out


def generate_synthetic(spec: SyntheticSpec, seed: int) -> tuple[LabeledDataset, ModelPair]:
    generators = synthetic_generators(spec, seed)
    rng = np.random.default_rng([seed, 1])
    seqs = []
    for label, model, count in ((Label.BENIGN, generators.benign, spec.benign_count),
                                (Label.MALICIOUS, generators.malicious, spec.malicious_count)):
        for i, x in enumerate(_sample_class(model, count, spec, rng)):
            seqs.append(ObservationSequence(x, label, f"syn-{label.value[0]}-{i:06d}"))
    return LabeledDataset(seqs), generators
