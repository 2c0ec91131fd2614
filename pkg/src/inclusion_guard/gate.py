"""Streaming allow/block gate over resource-load events.

For every load: whitelisted origin+kind is allowed without scoring;
otherwise the inclusion sequence is scored by the model pair and blocked if
classified malicious. Anything loaded by a blocked resource is blocked too,
since a browser that discards a resource never runs what it would include.

Scoring is incremental: a node's forward-pass state is its parent's state
advanced by one step, so each event costs one stacked step for both models
instead of a full pass over the sequence.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

import numpy as np

from .classifier import Decision, ModelPair
from .features import DiscretizationConfig, Individual, Vectorizer, effective_roles
from .hosts import Host, MalformedHost, Role, Tables
from .tree import InclusionTree, LoadEvent, MalformedEvent, ResourceKind, TreeError

log = logging.getLogger(__name__)

ALLOW = "allow"
BLOCK = "block"
ALLOW_WHITELISTED = "allow-whitelisted"


@dataclass(frozen=True)
class WhitelistRule:
    pattern: str
    kinds: frozenset[ResourceKind] = frozenset(ResourceKind)

    def __post_init__(self):
        if not self.pattern:
            raise ValueError("whitelist pattern must be non-empty")

    def matches(self, host: Host, kind: ResourceKind) -> bool:
        if kind not in self.kinds:
            return False
        return host.raw == self.pattern or host.registrable == self.pattern


def parse_whitelist(text: str) -> list[WhitelistRule]:
    """One rule per line: ``<host-or-registrable> [kind,kind,...|*]``; ``#`` comments."""
    rules = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        pattern = parts[0].lower()
        if len(parts) == 1 or parts[1] == "*":
            kinds = frozenset(ResourceKind)
        else:
            kinds = frozenset(ResourceKind(k.strip()) for k in parts[1].split(",") if k.strip())
        rules.append(WhitelistRule(pattern, kinds))
    return rules


def load_whitelist(path: str | Path) -> list[WhitelistRule]:
    return parse_whitelist(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class GateDecisionRecord:
    page: str
    node: int
    url: str
    action: str
    reason: str
    decision: Decision | None = None

    def __post_init__(self):
        if self.action == BLOCK and self.decision is not None and self.decision.label.value != "malicious":
            raise ValueError("a classifier block needs a malicious decision")

    def to_dict(self) -> dict:
        out = {"type": "decision", "page": self.page, "node": self.node, "url": self.url,
               "action": self.action, "reason": self.reason}
        if self.decision is not None:
            out.update(self.decision.to_dict())
        return out


@dataclass
class _NodeState:
    parent: "_NodeState | None"
    host: Host | None
    # Roles of this node and every ancestor (what its children see).
    roles: frozenset[Role]
    blocked: bool = False
    individual: Individual | None = None
    row: tuple[int, ...] | None = None
    fwd: tuple | None = field(default=None, repr=False)


class _PairStepper:
    """One forward step for both models of a pair as a single stacked update.

    The state is (alpha, ll_benign, ll_malicious) where alpha holds the benign
    then the malicious scaled forward variables.
    """

    def __init__(self, pair: ModelPair):
        b, m = pair.benign, pair.malicious
        self.split = b.num_states
        self.rows = np.ascontiguousarray(np.hstack([b._log_emission_rows, m._log_emission_rows]))
        self.offsets = b.offsets
        self.initial = np.concatenate([b.initial, m.initial])
        n = b.num_states + m.num_states
        self.transition = np.zeros((n, n))
        self.transition[:self.split, :self.split] = b.transition
        self.transition[self.split:, self.split:] = m.transition

    def step(self, state: tuple[np.ndarray, float, float] | None,
             row: np.ndarray) -> tuple[np.ndarray, float, float]:
        k = self.split
        le = self.rows[row + self.offsets].sum(axis=0)
        s_b, s_m = float(le[:k].max()), float(le[k:].max())
        if s_b == -math.inf or s_m == -math.inf:
            return self._slow_step(state, le)
        le[:k] -= s_b
        le[k:] -= s_m
        e = np.exp(le, out=le)
        if state is None:
            a, ll_b, ll_m = self.initial * e, 0.0, 0.0
        else:
            a, ll_b, ll_m = state
            a = (a @ self.transition) * e
        c_b, c_m = float(a[:k].sum()), float(a[k:].sum())
        if not (c_b > 0.0 and c_m > 0.0):
            return self._slow_step(state, self.rows[row + self.offsets].sum(axis=0))
        a[:k] /= c_b
        a[k:] /= c_m
        return a, ll_b + math.log(c_b) + s_b, ll_m + math.log(c_m) + s_m

    def _slow_step(self, state, le: np.ndarray) -> tuple[np.ndarray, float, float]:
        # Some emission or path has zero probability; handle each half separately.
        k = self.split
        prev = state[0] if state is not None else None
        out, lls = [], []
        for part, ll in ((slice(0, k), state[1] if state else 0.0),
                         (slice(k, len(le)), state[2] if state else 0.0)):
            part_le = le[part]
            shift = float(part_le.max())
            if ll == -math.inf or shift == -math.inf:
                out.append(np.zeros(part.stop - part.start))
                lls.append(-math.inf)
                continue
            e = np.exp(part_le - shift)
            if prev is None:
                a = self.initial[part] * e
            else:
                a = (prev[part] @ self.transition[part, part]) * e
            c = float(a.sum())
            if not c > 0.0:
                out.append(np.zeros_like(a))
                lls.append(-math.inf)
                continue
            out.append(a / c)
            lls.append(ll + math.log(c) + shift)
        return np.concatenate(out), lls[0], lls[1]


class Gate:
    """One gate per event stream. Pages are independent trees."""

    def __init__(self, pair: ModelPair, whitelist: Iterable[WhitelistRule] = (),
                 tables: Tables | None = None,
                 config: DiscretizationConfig = DiscretizationConfig()):
        self.pair = pair
        self.whitelist = list(whitelist)
        self.tables = tables if tables is not None else Tables()
        self.vectorizer = Vectorizer(config)
        self.trees: dict[str, InclusionTree] = {}
        self._states: dict[tuple[str, int], _NodeState] = {}
        self._stepper = _PairStepper(pair)
        self.classified = 0
        self.quarantined = 0

    def _whitelisted(self, host: Host, kind: ResourceKind) -> bool:
        return any(rule.matches(host, kind) for rule in self.whitelist)

    def _scoring_parent(self, state: _NodeState) -> _NodeState | None:
        # Inline nodes are skipped in sequences, so they are transparent here.
        p = state.parent
        while p is not None and p.host is None:
            p = p.parent
        return p

    def _forward(self, state: _NodeState) -> tuple:
        """Stacked forward state for ``state``, filling in any unscored ancestors."""
        chain = []
        cur: _NodeState | None = state
        while cur is not None and cur.fwd is None:
            chain.append(cur)
            cur = self._scoring_parent(cur)
        for st in reversed(chain):
            parent = self._scoring_parent(st)
            ind, row = self.vectorizer.step(st.host, parent.individual if parent else None,
                                            parent.roles if parent else frozenset())
            st.individual, st.row = ind, np.asarray(row)
            st.fwd = self._stepper.step(parent.fwd if parent is not None else None, st.row)
        return state.fwd

    def _quarantine(self, event: LoadEvent | None, err: Exception) -> dict:
        self.quarantined += 1
        rec = {"type": "quarantine", "error": type(err).__name__, "message": str(err)}
        if event is not None:
            rec.update({"page": event.page, "seq": event.seq, "url": event.url})
        return rec

    def process(self, event: LoadEvent | Exception) -> dict:
        if isinstance(event, Exception):
            return self._quarantine(None, event)
        tree = self.trees.get(event.page)
        if tree is None:
            tree = self.trees[event.page] = InclusionTree(event.page, self.tables)
        try:
            node_id = tree.apply_event(event)
        except (TreeError, MalformedHost) as e:
            tree.quarantined.append((event, e))
            return self._quarantine(event, e)

        node = tree.nodes[node_id]
        parent = self._states.get((event.page, node.parent)) if node.parent is not None else None

        def record(action, reason, decision=None):
            return GateDecisionRecord(event.page, node_id, event.url, action, reason, decision).to_dict()

        if parent is not None and parent.blocked:
            # Everything below a blocked node is blocked, so the parent's state is reused.
            self._states[(event.page, node_id)] = parent
            return record(BLOCK, "ancestor-blocked")
        host = node.host
        roles = parent.roles if parent else frozenset()
        if host is not None:
            roles = roles | effective_roles(host)
        state = _NodeState(parent, host, roles)
        self._states[(event.page, node_id)] = state
        if host is None:
            return record(ALLOW, "inline")
        if self._whitelisted(host, node.kind):
            return record(ALLOW_WHITELISTED, "whitelist")

        _, ll_b, ll_m = self._forward(state)
        self.classified += 1
        decision = Decision.from_scores(ll_b, ll_m, self.pair.bias)
        if decision.label.value == "malicious":
            state.blocked = True
            return record(BLOCK, "classifier", decision)
        return record(ALLOW, "classifier", decision)

    def run(self, events: Iterable[LoadEvent | Exception]) -> Iterator[dict]:
        for event in events:
            yield self.process(event)


def gate_stream(events: Iterable[LoadEvent | Exception], pair: ModelPair,
                whitelist: Iterable[WhitelistRule] = (), tables: Tables | None = None,
                config: DiscretizationConfig = DiscretizationConfig()) -> Iterator[dict]:
    return Gate(pair, whitelist, tables, config).run(events)


def write_records(records: Iterable[dict], stream: IO[str]) -> None:
    for rec in records:
        stream.write(json.dumps(rec, sort_keys=True) + "\n")
