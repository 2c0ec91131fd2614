"""Random but reproducible load-event streams for benchmarks and gate tests."""
from __future__ import annotations

import numpy as np

from .tree import Initiator, LoadEvent, ResourceKind

BENIGN_SITES = ("google.com", "facebook.com", "cdn.example.net", "static.news.co.uk",
                "img.shop.de", "api.weather.org", "bbc.co.uk", "fonts.gstatic.com")
SHADY_SITES = ("kq3zv8x1.info", "free-prizes.biz", "x9-track.ru", "185.12.4.77", "adserve.click")

_CHILD_KINDS = (ResourceKind.SCRIPT, ResourceKind.IMAGE, ResourceKind.FRAME,
                ResourceKind.STYLESHEET, ResourceKind.XHR, ResourceKind.OBJECT,
                ResourceKind.INLINE_SCRIPT)
_KIND_P = (0.35, 0.25, 0.08, 0.08, 0.1, 0.04, 0.1)


def synthetic_events(count: int, seed: int = 0, events_per_page: int = 40,
                     max_depth: int = 9, shady_fraction: float = 0.1) -> list[LoadEvent]:
    """``count`` events over ``ceil(count / events_per_page)`` pages.

    Every page starts with a root document; later events attach to a random
    earlier node of the same page no deeper than ``max_depth``, so sequences
    have at most ``max_depth + 1`` resources.
    """
    rng = np.random.default_rng(seed)
    events: list[LoadEvent] = []
    page = 0
    while len(events) < count:
        pid = f"page{page:05d}"
        site = BENIGN_SITES[page % len(BENIGN_SITES)]
        seq = 1
        events.append(LoadEvent(seq, pid, f"https://{site}/", ResourceKind.DOCUMENT,
                                Initiator.root(), float(len(events))))
        depth = {1: 0}
        script_like = [1]
        n = min(events_per_page, count - len(events) + 1)
        for _ in range(n - 1):
            seq += 1
            parent = int(rng.choice(script_like))
            if depth[parent] >= max_depth:
                parent = 1
            kind = _CHILD_KINDS[rng.choice(len(_CHILD_KINDS), p=_KIND_P)]
            if kind is ResourceKind.INLINE_SCRIPT:
                url = f"inline:{seq}"
            else:
                pool = SHADY_SITES if rng.random() < shady_fraction else BENIGN_SITES
                url = f"https://{pool[rng.integers(len(pool))]}/r{seq}"
            initiator = Initiator.parser(parent) if parent == 1 else Initiator.script(parent)
            events.append(LoadEvent(seq, pid, url, kind, initiator, float(len(events))))
            depth[seq] = depth[parent] + 1
            if kind in (ResourceKind.SCRIPT, ResourceKind.FRAME, ResourceKind.INLINE_SCRIPT):
                script_like.append(seq)
        page += 1
    return events[:count]
