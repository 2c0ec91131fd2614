"""Host parsing and the DNS primitives shared by every feature.

Only the host part of a resource URL matters for classification. A host is
one of: an IP literal, a browser extension (written ``ext:<id>``), or a DNS
name that is resolved against a public-suffix table.
"""
from __future__ import annotations

import csv
import enum
import functools
import ipaddress
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

MAX_LEVEL = 126
MAX_HOST_LENGTH = 253
MAX_LABEL_LENGTH = 63
MAX_RANK = 1_000_000
EXTENSION_PREFIX = "ext:"
DEFAULT_GENERIC_TLDS = frozenset({"com", "org", "net", "edu", "gov", "mil"})

_LABEL_RE = re.compile(r"^[a-z0-9_](?:[a-z0-9_-]*[a-z0-9_])?$")
_EXTENSION_ID_RE = re.compile(r"^[a-z0-9_-]+$")
# Loose IPv6 shape: hex groups and colons, optionally an embedded IPv4 tail.
_IPV6_LOOSE_RE = re.compile(r"^[0-9a-f:]*:[0-9a-f:]*:[0-9a-f:.]*$")


class MalformedHost(ValueError):
    pass


class HostKind(str, enum.Enum):
    IPV6 = "ipv6"
    IPV4_PRIVATE = "ipv4-private"
    IPV4_PUBLIC = "ipv4-public"
    EXTENSION = "extension"
    DNS_SLD = "dns-sld"
    DNS_SLD_SUB = "dns-sld-sub"
    DNS_NON_SLD = "dns-non-sld"
    DNS_NON_SLD_SUB = "dns-non-sld-sub"

    @property
    def is_dns(self) -> bool:
        return self.value.startswith("dns-")


class TldCategory(str, enum.Enum):
    NONE = "none"
    GEN = "gen"
    GEN_SUBDOMAIN = "gen-subdomain"
    CC = "cc"
    CC_SUBDOMAIN = "cc-subdomain"
    CC_INT = "cc-int"
    OTHER = "other"


class Role(str, enum.Enum):
    AD_NETWORK = "ad-network"
    CDN = "cdn"
    URL_SHORTENER = "url-shortener"


ROLE_ORDER = (Role.AD_NETWORK, Role.CDN, Role.URL_SHORTENER)


def _to_ascii(label: str) -> str:
    if label.isascii():
        return label
    try:
        return label.encode("idna").decode("ascii")
    except UnicodeError:
        return label


@dataclass(frozen=True)
class SuffixMatch:
    labels: tuple[str, ...]
    private: bool


class SuffixTable:
    """Public-suffix rules with longest-match lookup.

    Rules from the private section are kept but can be excluded at lookup
    time (``include_private``), which also lets callers ask for the
    ICANN-only suffix of a host.
    """

    def __init__(self, rules: Iterable[tuple[str, bool]] = (), version: str = "",
                 include_private: bool = True):
        normal: dict[str, bool] = {}
        wildcard: dict[str, bool] = {}
        exception: dict[str, bool] = {}
        for rule, private in rules:
            rule = rule.strip().lower()
            if not rule:
                continue
            rule = ".".join(_to_ascii(part) for part in rule.split("."))
            if rule.startswith("!"):
                exception.setdefault(rule[1:], private)
            elif rule.startswith("*."):
                wildcard.setdefault(rule[2:], private)
            else:
                normal.setdefault(rule, private)
        self._normal = normal
        self._wildcard = wildcard
        self._exception = exception
        self.version = version
        self.include_private = include_private

    def __len__(self) -> int:
        return len(self._normal) + len(self._wildcard) + len(self._exception)

    @classmethod
    def parse(cls, text: str, version: str = "", include_private: bool = True) -> "SuffixTable":
        rules = []
        private = False
        for raw in text.splitlines():
            line = raw.strip()
            if line.startswith("//"):
                if "BEGIN PRIVATE DOMAINS" in line:
                    private = True
                elif "BEGIN ICANN DOMAINS" in line:
                    private = False
                if not version and "VERSION:" in line:
                    version = line.split("VERSION:", 1)[1].strip()
                continue
            if not line:
                continue
            # Only the first whitespace-delimited token is the rule.
            rules.append((line.split()[0], private))
        return cls(rules, version=version, include_private=include_private)

    @classmethod
    def load(cls, path: str | Path, include_private: bool = True) -> "SuffixTable":
        return cls.parse(Path(path).read_text(encoding="utf-8"), include_private=include_private)

    def entries(self) -> list[tuple[str, str, bool]]:
        """All rules as ``(kind, rule, private)`` with kind in normal/wildcard/exception."""
        out = [("normal", r, p) for r, p in self._normal.items()]
        out += [("wildcard", r, p) for r, p in self._wildcard.items()]
        out += [("exception", r, p) for r, p in self._exception.items()]
        return sorted(out)

    def _allowed(self, private: bool, icann_only: bool) -> bool:
        if private:
            return self.include_private and not icann_only
        return True

    def lookup(self, labels: tuple[str, ...], icann_only: bool = False) -> SuffixMatch:
        n = len(labels)
        for i in range(n):
            cand = ".".join(labels[i:])
            private = self._exception.get(cand)
            if private is not None and self._allowed(private, icann_only):
                return SuffixMatch(labels[i + 1:], private)
        for i in range(n):
            cand = ".".join(labels[i:])
            private = self._normal.get(cand)
            if private is not None and self._allowed(private, icann_only):
                return SuffixMatch(labels[i:], private)
            if i + 1 < n:
                private = self._wildcard.get(".".join(labels[i + 1:]))
                if private is not None and self._allowed(private, icann_only):
                    return SuffixMatch(labels[i:], private)
        # Implicit "*" rule: the last label is the suffix.
        return SuffixMatch(labels[-1:], False)


@functools.lru_cache(maxsize=None)
def default_suffix_table(include_private: bool = True) -> SuffixTable:
    """The bundled public-suffix snapshot."""
    text = resources.files("inclusion_guard").joinpath("data/public_suffix_list.dat").read_text(
        encoding="utf-8")
    return SuffixTable.parse(text, include_private=include_private)


class RankTable:
    """Popularity ranks keyed by host, 1 is the most popular."""

    def __init__(self, ranks: Mapping[str, int] | None = None):
        self._ranks: dict[str, int] = {}
        for host, rank in (ranks or {}).items():
            rank = int(rank)
            if not 1 <= rank <= MAX_RANK:
                raise ValueError(f"rank out of range for {host!r}: {rank}")
            # First (best) rank wins on duplicate hosts.
            self._ranks.setdefault(host.strip().lower().rstrip("."), rank)

    def __len__(self) -> int:
        return len(self._ranks)

    def get(self, host: str) -> int | None:
        return self._ranks.get(host)

    @classmethod
    def load(cls, path: str | Path) -> "RankTable":
        ranks: dict[str, int] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if len(row) < 2 or not row[0].strip().isdigit():
                    continue
                host = row[1].strip().lower().rstrip(".")
                ranks.setdefault(host, int(row[0]))
        return cls(ranks)


def _read_host_list(path: str | Path) -> set[str]:
    hosts = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip().lower().rstrip(".")
        if line:
            hosts.add(line)
    return hosts


@dataclass(frozen=True)
class RoleTable:
    ad_networks: frozenset[str] = frozenset()
    cdns: frozenset[str] = frozenset()
    shorteners: frozenset[str] = frozenset()

    @classmethod
    def from_sets(cls, ad_networks=(), cdns=(), shorteners=()) -> "RoleTable":
        norm = lambda xs: frozenset(x.strip().lower().rstrip(".") for x in xs)  # noqa: E731
        return cls(norm(ad_networks), norm(cdns), norm(shorteners))

    @classmethod
    def load(cls, ad_networks: str | Path | None = None, cdns: str | Path | None = None,
             shorteners: str | Path | None = None) -> "RoleTable":
        read = lambda p: frozenset(_read_host_list(p)) if p else frozenset()  # noqa: E731
        return cls(read(ad_networks), read(cdns), read(shorteners))

    @classmethod
    def load_dir(cls, directory: str | Path) -> "RoleTable":
        """Load ``ad_networks.txt``, ``cdns.txt`` and ``shorteners.txt`` from a directory."""
        d = Path(directory)
        pick = lambda name: d / name if (d / name).exists() else None  # noqa: E731
        return cls.load(pick("ad_networks.txt"), pick("cdns.txt"), pick("shorteners.txt"))

    def roles_for(self, host: str, registrable: str | None = None) -> frozenset[Role]:
        keys = {host} if registrable is None else {host, registrable}
        roles = set()
        if keys & self.ad_networks:
            roles.add(Role.AD_NETWORK)
        if keys & self.cdns:
            roles.add(Role.CDN)
        if keys & self.shorteners:
            roles.add(Role.URL_SHORTENER)
        return frozenset(roles)


EMPTY_RANKS = RankTable()
EMPTY_ROLES = RoleTable()


@dataclass(frozen=True)
class Host:
    raw: str
    kind: HostKind
    labels: tuple[str, ...] = ()
    public_suffix: tuple[str, ...] | None = None
    registrable_domain: tuple[str, ...] | None = None
    # Registrable domain computed against ICANN rules only; distinguishes
    # hosts living under a private suffix such as dyndns.org.
    icann_registrable: tuple[str, ...] | None = None
    tld_category: TldCategory = TldCategory.NONE
    level: int = 1
    alexa_rank: int | None = None
    roles: frozenset[Role] = field(default_factory=frozenset)

    @property
    def is_dns(self) -> bool:
        return self.kind.is_dns

    @property
    def tld(self) -> str | None:
        return self.labels[-1] if self.labels else None

    @property
    def registrable(self) -> str | None:
        return ".".join(self.registrable_domain) if self.registrable_domain else None

    @property
    def suffix(self) -> str | None:
        return ".".join(self.public_suffix) if self.public_suffix else None

    def has_role(self, role: Role) -> bool:
        return role in self.roles


def tld_category(host: Host, generic_tlds: frozenset[str] = DEFAULT_GENERIC_TLDS) -> TldCategory:
    if not host.is_dns:
        return TldCategory.NONE
    tld = host.labels[-1]
    if tld.startswith("xn--"):
        return TldCategory.CC_INT
    is_gen = tld in generic_tlds
    is_cc = len(tld) == 2 and tld.isalpha()
    if host.public_suffix is not None and len(host.public_suffix) > 1:
        if is_gen:
            return TldCategory.GEN_SUBDOMAIN
        if is_cc:
            return TldCategory.CC_SUBDOMAIN
    if is_gen:
        return TldCategory.GEN
    if is_cc:
        return TldCategory.CC
    return TldCategory.OTHER


def host_level(host: Host) -> float:
    """Level scaled into (0, 1]; levels past the maximum clamp to 1."""
    return min(host.level, MAX_LEVEL) / MAX_LEVEL


def _ip_kind(raw: str) -> HostKind | None:
    text = raw[1:-1] if raw.startswith("[") and raw.endswith("]") else raw
    try:
        addr = ipaddress.ip_address(text)
    except ValueError:
        # Table-style shorthand like "2607:f0d0::::4" is not strictly valid
        # but is still clearly an IPv6 literal.
        if _IPV6_LOOSE_RE.match(text):
            return HostKind.IPV6
        return None
    if addr.version == 6:
        return HostKind.IPV6
    if addr.is_private or addr.is_loopback or addr.is_link_local:
        return HostKind.IPV4_PRIVATE
    return HostKind.IPV4_PUBLIC


def split_labels(raw: str) -> tuple[str, ...]:
    if len(raw) > MAX_HOST_LENGTH:
        raise MalformedHost(f"host longer than {MAX_HOST_LENGTH} characters: {raw[:40]}...")
    labels = tuple(raw.split("."))
    for label in labels:
        if not label:
            raise MalformedHost(f"empty label in {raw!r}")
        if len(label) > MAX_LABEL_LENGTH:
            raise MalformedHost(f"label longer than {MAX_LABEL_LENGTH} characters in {raw!r}")
        if not _LABEL_RE.match(label):
            raise MalformedHost(f"illegal character in {raw!r}")
    return labels


def parse_host(raw: str, suffixes: SuffixTable | None = None, ranks: RankTable | None = None,
               roles: RoleTable | None = None,
               generic_tlds: frozenset[str] = DEFAULT_GENERIC_TLDS) -> Host:
    if raw is None or not raw.strip():
        raise MalformedHost("empty host")
    raw = raw.strip().lower()
    if raw.endswith(".") and not raw.startswith(EXTENSION_PREFIX):
        raw = raw[:-1]
    if not raw:
        raise MalformedHost("empty host")

    if raw.startswith(EXTENSION_PREFIX):
        ext_id = raw[len(EXTENSION_PREFIX):]
        if not ext_id or not _EXTENSION_ID_RE.match(ext_id):
            raise MalformedHost(f"bad extension id in {raw!r}")
        return Host(raw=raw, kind=HostKind.EXTENSION)

    ip_kind = _ip_kind(raw)
    if ip_kind is not None:
        return Host(raw=raw, kind=ip_kind)

    if not raw.isascii():
        raw = ".".join(_to_ascii(part) for part in raw.split("."))
    labels = split_labels(raw)
    suffixes = suffixes if suffixes is not None else default_suffix_table()
    ranks = ranks if ranks is not None else EMPTY_RANKS
    roles = roles if roles is not None else EMPTY_ROLES

    match = suffixes.lookup(labels)
    suffix = match.labels
    registrable = labels[-(len(suffix) + 1):] if len(labels) > len(suffix) else None
    icann = suffixes.lookup(labels, icann_only=True).labels
    icann_registrable = labels[-(len(icann) + 1):] if len(labels) > len(icann) else None

    # A host that is itself a public suffix is treated as its own base name.
    base = registrable or labels
    icann_base = icann_registrable or labels
    is_sub = labels != base
    if base != icann_base:
        kind = HostKind.DNS_NON_SLD_SUB if is_sub else HostKind.DNS_NON_SLD
    else:
        kind = HostKind.DNS_SLD_SUB if is_sub else HostKind.DNS_SLD

    reg_str = ".".join(registrable) if registrable else None
    rank = ranks.get(raw)
    if rank is None and reg_str is not None:
        rank = ranks.get(reg_str)

    host = Host(
        raw=raw,
        kind=kind,
        labels=labels,
        public_suffix=suffix,
        registrable_domain=registrable,
        icann_registrable=icann_registrable,
        level=max(1, len(labels) - 1),
        alexa_rank=rank,
        roles=roles.roles_for(raw, reg_str),
    )
    return replace(host, tld_category=tld_category(host, generic_tlds))


class Tables:
    """Lookup tables bundled together, with memoized host parsing."""

    def __init__(self, suffixes: SuffixTable | None = None, ranks: RankTable | None = None,
                 roles: RoleTable | None = None,
                 generic_tlds: frozenset[str] = DEFAULT_GENERIC_TLDS):
        self.suffixes = suffixes if suffixes is not None else default_suffix_table()
        self.ranks = ranks if ranks is not None else EMPTY_RANKS
        self.roles = roles if roles is not None else EMPTY_ROLES
        self.generic_tlds = frozenset(generic_tlds)
        self._cache: dict[str, Host] = {}

    def host(self, raw: str) -> Host:
        host = self._cache.get(raw)
        if host is None:
            host = parse_host(raw, self.suffixes, self.ranks, self.roles, self.generic_tlds)
            if len(self._cache) < 1_000_000:
                self._cache[raw] = host
        return host
