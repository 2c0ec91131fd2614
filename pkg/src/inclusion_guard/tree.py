"""Inclusion trees built from resource-load events.

Each page gets one tree. A node records which resource caused it to load:
the parsing document, an executing script (also for timers and event
callbacks it registered), a redirect source, or an extension. Inline scripts
are kept as nodes so their dynamic inclusions are attributed correctly, but
they never show up in an inclusion sequence.
"""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator
from urllib.parse import urlsplit

from .hosts import EXTENSION_PREFIX, Host, MalformedHost, Tables

EVENTS_FORMAT = "inclusion-guard/load-events"
EVENTS_VERSION = 1


class TreeError(ValueError):
    pass


class UnknownInitiator(TreeError):
    pass


class DuplicateRoot(TreeError):
    pass


class MissingRoot(TreeError):
    pass


class InlineTerminal(TreeError):
    pass


class MalformedEvent(TreeError):
    pass


class ResourceKind(str, enum.Enum):
    DOCUMENT = "document"
    SCRIPT = "script"
    INLINE_SCRIPT = "inline-script"
    FRAME = "frame"
    IMAGE = "image"
    STYLESHEET = "stylesheet"
    OBJECT = "object"
    XHR = "xhr"
    OTHER = "other"


class InitiatorType(str, enum.Enum):
    ROOT = "root"
    PARSER = "parser"
    SCRIPT = "script"
    EXTENSION = "extension"
    REDIRECT = "redirect"
    TIMER_OR_EVENT = "timer-or-event"


@dataclass(frozen=True)
class Initiator:
    type: InitiatorType
    node: int | None = None
    extension: str | None = None

    @classmethod
    def root(cls) -> "Initiator":
        return cls(InitiatorType.ROOT)

    @classmethod
    def parser(cls, node: int) -> "Initiator":
        return cls(InitiatorType.PARSER, node=node)

    @classmethod
    def script(cls, node: int) -> "Initiator":
        return cls(InitiatorType.SCRIPT, node=node)

    @classmethod
    def redirect(cls, node: int) -> "Initiator":
        return cls(InitiatorType.REDIRECT, node=node)

    @classmethod
    def timer_or_event(cls, node: int) -> "Initiator":
        return cls(InitiatorType.TIMER_OR_EVENT, node=node)

    @classmethod
    def from_extension(cls, extension_id: str) -> "Initiator":
        return cls(InitiatorType.EXTENSION, extension=extension_id)

    def to_dict(self) -> dict:
        out: dict = {"type": self.type.value}
        if self.node is not None:
            out["node"] = self.node
        if self.extension is not None:
            out["extension"] = self.extension
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Initiator":
        try:
            kind = InitiatorType(d["type"])
        except (KeyError, ValueError, TypeError) as e:
            raise MalformedEvent(f"bad initiator: {d!r}") from e
        if kind is InitiatorType.ROOT:
            return cls(kind)
        if kind is InitiatorType.EXTENSION:
            ext = d.get("extension")
            if not isinstance(ext, str) or not ext:
                raise MalformedEvent(f"extension initiator without id: {d!r}")
            return cls(kind, extension=ext)
        node = d.get("node")
        if not isinstance(node, int) or isinstance(node, bool):
            raise MalformedEvent(f"initiator {kind.value} needs an integer node: {d!r}")
        return cls(kind, node=node)


@dataclass(frozen=True)
class LoadEvent:
    seq: int
    page: str
    url: str
    kind: ResourceKind
    initiator: Initiator
    ts: float = 0

    def to_dict(self) -> dict:
        return {"seq": self.seq, "page": self.page, "url": self.url, "kind": self.kind.value,
                "initiator": self.initiator.to_dict(), "ts": self.ts}

    @classmethod
    def from_dict(cls, d: dict) -> "LoadEvent":
        try:
            seq, page, url = d["seq"], d["page"], d["url"]
            kind = ResourceKind(d["kind"])
            initiator = Initiator.from_dict(d["initiator"])
        except (KeyError, ValueError, TypeError) as e:
            if isinstance(e, MalformedEvent):
                raise
            raise MalformedEvent(f"bad load event: {e}") from e
        if not isinstance(seq, int) or isinstance(seq, bool):
            raise MalformedEvent(f"seq must be an integer: {seq!r}")
        if not isinstance(url, str):
            raise MalformedEvent(f"url must be a string: {url!r}")
        return cls(seq=seq, page=str(page), url=url, kind=kind, initiator=initiator,
                   ts=d.get("ts", 0))


# http(s) URL whose authority is a bare host name (no port, userinfo or brackets).
_PLAIN_HTTP = re.compile(r"https?://([^/?#@:\[\]%\\\s]+)(?:[/?#]|$)")


def _plain_http_host(url: str) -> str | None:
    m = _PLAIN_HTTP.match(url)
    return m.group(1).lower() if m else None


def host_of_url(url: str) -> str:
    """Host part of a resource URL; extension resources map to ``ext:<id>``."""
    url = url.strip()
    if url.startswith(EXTENSION_PREFIX):
        rest = url[len(EXTENSION_PREFIX):].lstrip("/")
        return EXTENSION_PREFIX + rest.split("/", 1)[0]
    fast = _plain_http_host(url)
    if fast is not None:
        return fast
    if "://" not in url:
        url = "http://" + url
    parts = urlsplit(url)
    if parts.scheme.endswith("-extension"):
        return EXTENSION_PREFIX + (parts.hostname or "")
    host = parts.hostname
    if not host:
        raise MalformedHost(f"no host in url {url!r}")
    return host


@dataclass
class ResourceNode:
    node_id: int
    url: str
    kind: ResourceKind
    host: Host | None
    parent: int | None
    depth: int
    children: list[int] = field(default_factory=list)
    extension: str | None = None

    @property
    def inline(self) -> bool:
        return self.kind is ResourceKind.INLINE_SCRIPT


@dataclass(frozen=True)
class InclusionSequence:
    resources: tuple[ResourceNode, ...]

    def __len__(self) -> int:
        return len(self.resources)

    @property
    def hosts(self) -> tuple[Host, ...]:
        return tuple(r.host for r in self.resources)

    @property
    def urls(self) -> tuple[str, ...]:
        return tuple(r.url for r in self.resources)

    @property
    def terminal(self) -> ResourceNode:
        return self.resources[-1]


class InclusionTree:
    """Single-writer tree for one page. Node ids are event sequence numbers."""

    def __init__(self, page_id: str, tables: Tables | None = None):
        self.page_id = page_id
        self.tables = tables if tables is not None else Tables()
        self.nodes: dict[int, ResourceNode] = {}
        self.root_id: int | None = None
        self.last_seq: int | None = None
        self.quarantined: list[tuple[LoadEvent, TreeError | MalformedHost]] = []

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def root(self) -> ResourceNode:
        if self.root_id is None:
            raise MissingRoot(f"page {self.page_id} has no root")
        return self.nodes[self.root_id]

    def _parent_for(self, event: LoadEvent) -> int:
        init = event.initiator
        if init.type in (InitiatorType.ROOT, InitiatorType.EXTENSION):
            return self.root_id
        if init.node not in self.nodes:
            raise UnknownInitiator(
                f"event {event.seq}: {init.type.value} initiator {init.node} not in tree")
        return init.node

    def apply_event(self, event: LoadEvent) -> int:
        """Insert the event as a node and return its id. The tree is unchanged on error."""
        if event.page != self.page_id:
            raise TreeError(f"event {event.seq} belongs to page {event.page}, not {self.page_id}")
        if self.last_seq is not None and event.seq <= self.last_seq:
            raise TreeError(f"event seq {event.seq} not increasing (last {self.last_seq})")
        if event.seq in self.nodes:
            raise TreeError(f"duplicate node id {event.seq}")

        is_root_event = (event.initiator.type is InitiatorType.ROOT
                         and event.kind is ResourceKind.DOCUMENT)
        if self.root_id is None:
            if not is_root_event:
                raise MissingRoot(f"event {event.seq}: first event must be a root document")
            parent = None
        elif is_root_event:
            raise DuplicateRoot(f"event {event.seq}: page {self.page_id} already has a root")
        else:
            parent = self._parent_for(event)

        if event.kind is ResourceKind.INLINE_SCRIPT:
            host = None
        else:
            host = self.tables.host(host_of_url(event.url))

        node = ResourceNode(
            node_id=event.seq,
            url=event.url,
            kind=event.kind,
            host=host,
            parent=parent,
            depth=0 if parent is None else self.nodes[parent].depth + 1,
            extension=event.initiator.extension,
        )
        self.nodes[node.node_id] = node
        if parent is None:
            self.root_id = node.node_id
        else:
            self.nodes[parent].children.append(node.node_id)
        self.last_seq = event.seq
        return node.node_id

    def try_apply(self, event: LoadEvent) -> int | None:
        """Like :meth:`apply_event` but quarantines failing events instead of raising."""
        try:
            return self.apply_event(event)
        except (TreeError, MalformedHost) as e:
            self.quarantined.append((event, e))
            return None

    def path(self, node_id: int) -> list[ResourceNode]:
        if node_id not in self.nodes:
            raise KeyError(node_id)
        out = []
        cur: int | None = node_id
        while cur is not None:
            node = self.nodes[cur]
            out.append(node)
            cur = node.parent
        out.reverse()
        return out

    def extract_sequence(self, node_id: int) -> InclusionSequence:
        node = self.nodes[node_id]
        if node.inline:
            raise InlineTerminal(f"node {node_id} is an inline resource")
        return InclusionSequence(tuple(n for n in self.path(node_id) if not n.inline))

    def sequences(self) -> Iterator[InclusionSequence]:
        """Sequences for every non-inline node, in node-id order."""
        for node_id in sorted(self.nodes):
            if not self.nodes[node_id].inline:
                yield self.extract_sequence(node_id)

    def to_dict(self) -> dict:
        return {
            "page": self.page_id,
            "root": self.root_id,
            "nodes": [
                {"id": n.node_id, "parent": n.parent, "url": n.url, "kind": n.kind.value,
                 "host": n.host.raw if n.host else None, "inline": n.inline,
                 "extension": n.extension, "children": list(n.children)}
                for _, n in sorted(self.nodes.items())
            ],
            "quarantined": [{"seq": ev.seq, "error": type(err).__name__}
                            for ev, err in self.quarantined],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def build_trees(events: Iterable[LoadEvent], tables: Tables | None = None) -> dict[str, InclusionTree]:
    """Replay an event stream into one tree per page, quarantining bad events."""
    tables = tables if tables is not None else Tables()
    trees: dict[str, InclusionTree] = {}
    for event in events:
        tree = trees.get(event.page)
        if tree is None:
            tree = trees[event.page] = InclusionTree(event.page, tables)
        tree.try_apply(event)
    return trees


def events_header() -> dict:
    return {"format": EVENTS_FORMAT, "version": EVENTS_VERSION}


def check_header(record: dict, fmt: str, version: int) -> None:
    if not isinstance(record, dict) or record.get("format") != fmt:
        raise MalformedEvent(f"expected a {fmt!r} header record, got {record!r}")
    if record.get("version") != version:
        raise MalformedEvent(f"unsupported {fmt} version {record.get('version')!r}")


def iter_event_records(stream: IO[str]) -> Iterator[LoadEvent | MalformedEvent]:
    """Parse an event stream. Bad lines come back as exceptions, not raised."""
    lines = (line for line in stream if line.strip())
    try:
        first = next(lines)
    except StopIteration:
        raise MalformedEvent("empty event stream: header record required")
    try:
        check_header(json.loads(first), EVENTS_FORMAT, EVENTS_VERSION)
    except json.JSONDecodeError as e:
        raise MalformedEvent(f"unreadable header: {e}") from e
    for line in lines:
        try:
            yield LoadEvent.from_dict(json.loads(line))
        except json.JSONDecodeError as e:
            yield MalformedEvent(f"unreadable record: {e}")
        except MalformedEvent as e:
            yield e


def read_events(stream: IO[str]) -> list[LoadEvent]:
    """Strict reader: raises on the first malformed record."""
    out = []
    for rec in iter_event_records(stream):
        if isinstance(rec, Exception):
            raise rec
        out.append(rec)
    return out


def write_events(events: Iterable[LoadEvent], stream: IO[str]) -> None:
    stream.write(json.dumps(events_header(), sort_keys=True) + "\n")
    for ev in events:
        stream.write(json.dumps(ev.to_dict(), sort_keys=True) + "\n")
