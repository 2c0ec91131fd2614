"""Per-resource feature vectors for inclusion sequences.

Every resource gets 12 individual features (depending only on its host) and
12 relative features (comparing it with its predecessor in the sequence, or
with all predecessors for roles). All values are small integer symbols so
that a sequence of vectors can be fed straight to a categorical HMM.
"""
from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .hosts import (MAX_HOST_LENGTH, MAX_RANK, ROLE_ORDER, Host, HostKind, Role, TldCategory,
                    host_level)

OBSERVATIONS_FORMAT = "inclusion-guard/observations"
OBSERVATIONS_VERSION = 1
MAX_UNIQUE_CHARS = 38  # a-z, 0-9, hyphen, dot

TLD_VALUES = tuple(TldCategory)
TYPE_VALUES = tuple(HostKind)
REL_TLD_VALUES = (
    "none", "got-tld", "lost-tld",
    "gen-to-cc", "gen-to-other", "cc-to-gen", "cc-to-other", "other-to-gen", "other-to-cc",
    "same-gen", "same-cc", "same-other", "diff-gen", "diff-cc", "diff-other",
)
REL_TYPE_VALUES = ("none", "same-site", "same-sld", "same-company", "same-eff-tld", "same-tld",
                   "different")
REL_CMP_VALUES = ("none", "less", "equal", "more")
ROLE_VALUES = ("No", "Yes")
REL_ROLE_VALUES = ("none", "Yes", "No")

CONTINUOUS = ("level", "alexa", "non_alpha", "unique_chars", "char_freq", "length", "entropy")
STRING_FEATURES = ("non_alpha", "unique_chars", "char_freq", "length", "entropy")
ROLE_FEATURES = ("role_ad", "role_cdn", "role_short")
INDIVIDUAL_NAMES = ("tld", "type") + CONTINUOUS + ROLE_FEATURES
RELATIVE_NAMES = tuple("rel_" + n for n in INDIVIDUAL_NAMES)
FEATURE_NAMES = INDIVIDUAL_NAMES + RELATIVE_NAMES
NUM_FEATURES = len(FEATURE_NAMES)


class Category(str, enum.Enum):
    DNS = "DNS"
    STRING = "String"
    ROLE = "Role"


FEATURE_TYPE_CATEGORY = {
    "tld": Category.DNS, "type": Category.DNS, "level": Category.DNS, "alexa": Category.DNS,
    **{n: Category.STRING for n in STRING_FEATURES},
    **{n: Category.ROLE for n in ROLE_FEATURES},
}


def feature_category(name: str) -> Category:
    return FEATURE_TYPE_CATEGORY[name.removeprefix("rel_")]


class Label(str, enum.Enum):
    BENIGN = "benign"
    MALICIOUS = "malicious"
    UNLABELED = "unlabeled"


@dataclass(frozen=True)
class DiscretizationConfig:
    bins: int = 10
    # "bin": relative comparisons look at bin indices; "value": at raw values.
    equality: str = "bin"
    # How an unranked host compares against a ranked one for rel_alexa.
    # "rank-last": unranked counts as worse than any rank; "none": emit none.
    alexa_none: str = "rank-last"
    # Optional registrable-domain -> organisation map for same-company.
    company_map: Mapping[str, str] = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError(f"bins must be >= 2, got {self.bins}")
        if self.equality not in ("bin", "value"):
            raise ValueError(f"unknown equality mode {self.equality!r}")
        if self.alexa_none not in ("rank-last", "none"):
            raise ValueError(f"unknown alexa_none policy {self.alexa_none!r}")


def feature_arities(config: DiscretizationConfig = DiscretizationConfig()) -> list[int]:
    b = config.bins
    ind = [len(TLD_VALUES), len(TYPE_VALUES), b, b + 1, b, b, b, b, b, 2, 2, 2]
    rel = [len(REL_TLD_VALUES), len(REL_TYPE_VALUES)] + [len(REL_CMP_VALUES)] * 7 + [3, 3, 3]
    return ind + rel


def feature_schema(config: DiscretizationConfig = DiscretizationConfig()) -> dict:
    """Stable description of the 24-slot vector layout."""
    b = config.bins
    values: dict[str, list[str]] = {
        "tld": [v.value for v in TLD_VALUES],
        "type": [v.value for v in TYPE_VALUES],
        "alexa": [f"bin{i}" for i in range(b)] + ["none"],
        "rel_tld": list(REL_TLD_VALUES),
        "rel_type": list(REL_TYPE_VALUES),
    }
    for name in CONTINUOUS:
        values.setdefault(name, [f"bin{i}" for i in range(b)])
        values["rel_" + name] = list(REL_CMP_VALUES)
    for name in ROLE_FEATURES:
        values[name] = list(ROLE_VALUES)
        values["rel_" + name] = list(REL_ROLE_VALUES)
    arities = feature_arities(config)
    return {
        "format": "inclusion-guard/feature-schema",
        "version": 1,
        "bins": b,
        "features": [
            {"index": i, "name": name, "category": feature_category(name).value,
             "relative": name.startswith("rel_"), "arity": arities[i], "values": values[name]}
            for i, name in enumerate(FEATURE_NAMES)
        ],
    }


class FeatureVector(NamedTuple):
    tld: int
    type: int
    level: int
    alexa: int
    non_alpha: int
    unique_chars: int
    char_freq: int
    length: int
    entropy: int
    role_ad: int
    role_cdn: int
    role_short: int
    rel_tld: int
    rel_type: int
    rel_level: int
    rel_alexa: int
    rel_non_alpha: int
    rel_unique_chars: int
    rel_char_freq: int
    rel_length: int
    rel_entropy: int
    rel_role_ad: int
    rel_role_cdn: int
    rel_role_short: int

    def decode(self, config: DiscretizationConfig = DiscretizationConfig()) -> dict[str, str]:
        schema = feature_schema(config)["features"]
        return {f["name"]: f["values"][v] for f, v in zip(schema, self)}


def discretize(x: float, bins: int) -> int:
    """Equal-width bin of a value in [0, 1]; 1.0 lands in the top bin."""
    if x <= 0.0:
        return 0
    return min(int(x * bins), bins - 1)


def shannon_entropy(s: str) -> float:
    n = len(s)
    if n == 0:
        return 0.0
    return -sum(c / n * math.log2(c / n) for c in Counter(s).values())


def string_stats(s: str) -> dict[str, float]:
    """Normalized string measurements of a host name."""
    n = len(s)
    counts = Counter(s)
    distinct = len(counts)
    non_alpha = sum(1 for ch in s if not ("a" <= ch <= "z" or "A" <= ch <= "Z"))
    return {
        "non_alpha": non_alpha / n,
        "unique_chars": min(1.0, distinct / MAX_UNIQUE_CHARS),
        # Mean count per distinct character, normalized by length.
        "char_freq": (sum(counts.values()) / distinct) / n,
        "length": min(1.0, n / MAX_HOST_LENGTH),
        "entropy": shannon_entropy(s) / math.log2(n) if n >= 2 else 0.0,
    }


@dataclass(frozen=True)
class Individual:
    """Individual features of one host: raw normalized values and symbols."""
    host: Host
    values: dict = field(hash=False, compare=False)
    symbols: tuple[int, ...] = ()


def individual_features(host: Host, config: DiscretizationConfig = DiscretizationConfig()) -> Individual:
    b = config.bins
    if host.is_dns:
        stats = string_stats(host.raw)
    else:
        stats = {name: 1.0 for name in STRING_FEATURES}
    alexa = host.alexa_rank / MAX_RANK if host.alexa_rank is not None and host.is_dns else None
    values = {"level": host_level(host), "alexa": alexa, **stats}

    symbols = [TLD_VALUES.index(host.tld_category), TYPE_VALUES.index(host.kind),
               discretize(values["level"], b), b if alexa is None else discretize(alexa, b)]
    symbols += [discretize(values[name], b) for name in STRING_FEATURES]
    if host.kind is HostKind.EXTENSION:
        symbols += [0, 0, 0]
    else:
        symbols += [int(role in host.roles) for role in ROLE_ORDER]
    return Individual(host, values, tuple(symbols))


def _tld_class(cat: TldCategory) -> str:
    if cat is TldCategory.NONE:
        return "none"
    if cat in (TldCategory.GEN, TldCategory.GEN_SUBDOMAIN):
        return "gen"
    if cat in (TldCategory.CC, TldCategory.CC_SUBDOMAIN, TldCategory.CC_INT):
        return "cc"
    return "other"


def relative_tld(parent: Host, child: Host) -> str:
    p, c = _tld_class(parent.tld_category), _tld_class(child.tld_category)
    if p == "none" and c == "none":
        return "none"
    if p == "none":
        return "got-tld"
    if c == "none":
        return "lost-tld"
    if p != c:
        return f"{p}-to-{c}"
    return f"same-{p}" if parent.tld == child.tld else f"diff-{p}"


def _base(host: Host) -> tuple[str, ...]:
    return host.registrable_domain or host.labels


def relative_type(parent: Host, child: Host, company_map: Mapping[str, str] | None = None) -> str:
    if not parent.is_dns or not child.is_dns:
        same = parent.kind == child.kind and parent.raw == child.raw
        return "same-site" if same else "different"
    pb, cb = _base(parent), _base(child)
    if pb == cb:
        return "same-site"
    if (parent.icann_registrable or parent.labels) == (child.icann_registrable or child.labels):
        return "same-sld"
    if company_map:
        pc, cc = company_map.get(".".join(pb)), company_map.get(".".join(cb))
        if pc is not None and cc is not None:
            if pc == cc:
                return "same-company"
        elif pb[0] == cb[0] and parent.public_suffix != child.public_suffix:
            return "same-company"
    elif pb[0] == cb[0] and parent.public_suffix != child.public_suffix:
        return "same-company"
    if (parent.public_suffix == child.public_suffix and parent.public_suffix is not None
            and len(parent.public_suffix) > 1):
        return "same-eff-tld"
    if parent.tld == child.tld:
        return "same-tld"
    return "different"


def _compare(a, b) -> str:
    if a < b:
        return "less"
    if a > b:
        return "more"
    return "equal"


def relative_features(current: Individual, parent: Individual | None,
                      ancestor_roles: frozenset[Role] = frozenset(),
                      config: DiscretizationConfig = DiscretizationConfig()) -> tuple[int, ...]:
    """The 12 relative symbols; ``ancestor_roles`` is the union over all strict ancestors."""
    if parent is None:
        return (0,) * 12
    out = [REL_TLD_VALUES.index(relative_tld(parent.host, current.host)),
           REL_TYPE_VALUES.index(relative_type(parent.host, current.host, config.company_map))]
    for i, name in enumerate(CONTINUOUS):
        if name == "alexa":
            cur_v, par_v = current.values["alexa"], parent.values["alexa"]
            if cur_v is None or par_v is None:
                if config.alexa_none == "none":
                    rel = "none"
                elif cur_v is None and par_v is None:
                    rel = "equal"
                else:
                    rel = "more" if cur_v is None else "less"
                out.append(REL_CMP_VALUES.index(rel))
                continue
        if config.equality == "bin":
            rel = _compare(current.symbols[2 + i], parent.symbols[2 + i])
        else:
            rel = _compare(current.values[name], parent.values[name])
        out.append(REL_CMP_VALUES.index(rel))
    for role in ROLE_ORDER:
        out.append(1 if role in ancestor_roles else 2)
    return tuple(out)


def effective_roles(host: Host) -> frozenset[Role]:
    return frozenset() if host.kind is HostKind.EXTENSION else host.roles


@dataclass
class ObservationSequence:
    symbols: np.ndarray  # (length, features) int
    label: Label = Label.UNLABELED
    source: str | None = None

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.int64)
        if self.symbols.ndim != 2 or len(self.symbols) == 0:
            raise ValueError("observation sequence must be a non-empty 2-D array")
        self.label = Label(self.label)

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def vectors(self) -> list[FeatureVector]:
        if self.symbols.shape[1] != NUM_FEATURES:
            raise ValueError("vectors are only available for full 24-feature sequences")
        return [FeatureVector(*map(int, row)) for row in self.symbols]

    def to_dict(self) -> dict:
        out = {"label": self.label.value, "features": self.symbols.tolist()}
        if self.source is not None:
            out["source"] = self.source
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationSequence":
        return cls(np.asarray(d["features"], dtype=np.int64), Label(d.get("label", "unlabeled")),
                   d.get("source"))


class Vectorizer:
    """Turns host sequences into observation sequences, caching per-host work."""

    def __init__(self, config: DiscretizationConfig = DiscretizationConfig()):
        self.config = config
        self._cache: dict[Host, Individual] = {}

    def individual(self, host: Host) -> Individual:
        ind = self._cache.get(host)
        if ind is None:
            ind = individual_features(host, self.config)
            if len(self._cache) < 500_000:
                self._cache[host] = ind
        return ind

    def step(self, host: Host, parent: Individual | None,
             ancestor_roles: frozenset[Role]) -> tuple[Individual, tuple[int, ...]]:
        ind = self.individual(host)
        return ind, ind.symbols + relative_features(ind, parent, ancestor_roles, self.config)

    def vectorize(self, hosts: Sequence[Host], label: Label = Label.UNLABELED,
                  source: str | None = None) -> ObservationSequence:
        rows = []
        parent = None
        roles: frozenset[Role] = frozenset()
        for host in hosts:
            ind, row = self.step(host, parent, roles)
            rows.append(row)
            roles = roles | effective_roles(host)
            parent = ind
        return ObservationSequence(np.array(rows, dtype=np.int64), label, source)


def vectorize_sequence(seq, config: DiscretizationConfig = DiscretizationConfig(),
                       label: Label = Label.UNLABELED) -> ObservationSequence:
    """Vectorize an :class:`InclusionSequence` or a plain sequence of hosts."""
    hosts = seq.hosts if hasattr(seq, "hosts") else seq
    return Vectorizer(config).vectorize(list(hosts), label)


def mask_features(obs: ObservationSequence, keep: Sequence[int]) -> ObservationSequence:
    return ObservationSequence(obs.symbols[:, list(keep)], obs.label, obs.source)


def category_columns(categories: Iterable[Category | str],
                     names: Sequence[str] = FEATURE_NAMES) -> list[int]:
    wanted = {Category(c) for c in categories}
    return [i for i, n in enumerate(names) if feature_category(n) in wanted]


def observations_header(arities: Sequence[int], names: Sequence[str] = FEATURE_NAMES,
                        bins: int | None = None) -> dict:
    header = {"format": OBSERVATIONS_FORMAT, "version": OBSERVATIONS_VERSION,
              "arities": list(arities), "features": list(names)}
    if bins is not None:
        header["bins"] = bins
    return header


def write_observations(seqs: Iterable[ObservationSequence], stream: IO[str],
                       arities: Sequence[int], names: Sequence[str] = FEATURE_NAMES,
                       bins: int | None = None) -> None:
    stream.write(json.dumps(observations_header(arities, names, bins), sort_keys=True) + "\n")
    for obs in seqs:
        stream.write(json.dumps(obs.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")


def read_observations(stream: IO[str]) -> tuple[dict, list[ObservationSequence]]:
    lines = (line for line in stream if line.strip())
    try:
        header = json.loads(next(lines))
    except StopIteration:
        raise ValueError("empty observations file")
    if header.get("format") != OBSERVATIONS_FORMAT or header.get("version") != OBSERVATIONS_VERSION:
        raise ValueError(f"not an observations file: {header!r}")
    arities = header["arities"]
    seqs = []
    for line in lines:
        obs = ObservationSequence.from_dict(json.loads(line))
        if obs.symbols.shape[1] != len(arities):
            raise ValueError(f"record has {obs.symbols.shape[1]} features, header says {len(arities)}")
        if (obs.symbols < 0).any() or (obs.symbols >= np.asarray(arities)).any():
            raise ValueError("feature symbol outside its declared arity")
        seqs.append(obs)
    return header, seqs


def iter_observations(stream: IO[str]) -> Iterator[ObservationSequence]:
    yield from read_observations(stream)[1]
