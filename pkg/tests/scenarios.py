"""Shared event streams for tree and gate tests."""
from inclusion_guard.tree import Initiator, LoadEvent, ResourceKind as K


def ev(seq, url, kind, initiator, page="p1"):
    return LoadEvent(seq=seq, page=page, url=url, kind=kind, initiator=initiator, ts=1000 + seq)


def reference_page(page="p1"):
    """A page whose flash object is injected by an inline script inside a
    third-party frame, plus an extension-injected script chain."""
    return [
        ev(1, "http://a.com/index.html", K.DOCUMENT, Initiator.root(), page),
        ev(2, "http://b.com/img.jpg", K.IMAGE, Initiator.parser(1), page),
        ev(3, "http://c.com/frame.html", K.FRAME, Initiator.parser(1), page),
        ev(4, "http://d.net/script.js", K.SCRIPT, Initiator.parser(3), page),
        ev(5, "inline:4", K.INLINE_SCRIPT, Initiator.script(4), page),
        ev(6, "http://f.org/flash.swf", K.OBJECT, Initiator.script(5), page),
        ev(7, "ext:abcdefgh/script.js", K.SCRIPT, Initiator.from_extension("abcdefgh"), page),
        ev(8, "http://g.com/script.js", K.SCRIPT, Initiator.script(7), page),
        ev(9, "http://h.org/img.jpg", K.IMAGE, Initiator.script(8), page),
    ]


# parent of each node in reference_page()
REFERENCE_PARENTS = {1: None, 2: 1, 3: 1, 4: 3, 5: 4, 6: 5, 7: 1, 8: 7, 9: 8}


def other_tld_pair(num_states=1, bias=0.0):
    """A pair that agrees everywhere except on the 'other' TLD category.

    Sequences without such a host tie (margin 0, allowed); each one adds
    log(99) to the margin.
    """
    import numpy as np

    from inclusion_guard.classifier import ModelPair
    from inclusion_guard.features import TLD_VALUES, feature_arities
    from inclusion_guard.hmm import CategoricalHmm
    from inclusion_guard.hosts import TldCategory

    arities = feature_arities()
    uniform = [np.full((num_states, k), 1.0 / k) for k in arities]
    tld_b = np.full(len(TLD_VALUES), 0.8 / (len(TLD_VALUES) - 2))
    tld_m = tld_b.copy()
    other, spare = TLD_VALUES.index(TldCategory.OTHER), TLD_VALUES.index(TldCategory.CC_INT)
    tld_b[other], tld_b[spare] = 0.002, 0.198
    tld_m[other], tld_m[spare] = 0.198, 0.002
    pi = np.full(num_states, 1.0 / num_states)
    a = np.full((num_states, num_states), 1.0 / num_states)
    benign = CategoricalHmm(pi, a, [np.tile(tld_b, (num_states, 1))] + uniform[1:])
    malicious = CategoricalHmm(pi, a, [np.tile(tld_m, (num_states, 1))] + uniform[1:])
    return ModelPair(benign, malicious, bias)
