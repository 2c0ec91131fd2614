"""Gate throughput on a seeded synthetic event stream.

Trains a model pair on one workload (the shady hosts count as scanner-flagged),
then streams a second workload through the gate and reports classified
sequences per second, best of ``--repeats`` runs.

    python scripts/gate_benchmark.py --events 10000 --states 20
"""
import collections
import json
import time

import click

from inclusion_guard.classifier import train_pair
from inclusion_guard.evaluation import LabelingConfig, ScannerReport, label_sequences, unique_sequences
from inclusion_guard.features import Label, Vectorizer, feature_arities
from inclusion_guard.gate import Gate
from inclusion_guard.hmm import HmmConfig
from inclusion_guard.hosts import Tables
from inclusion_guard.tree import build_trees
from inclusion_guard.workload import SHADY_SITES, synthetic_events


@click.command()
@click.option("--events", default=10_000, show_default=True)
@click.option("--states", default=20, show_default=True)
@click.option("--iterations", default=15, show_default=True)
@click.option("--repeats", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
def main(events, states, iterations, repeats, seed):
    tables = Tables()
    trees = build_trees(synthetic_events(events, seed=seed + 1), tables)
    seqs = unique_sequences(trees[p] for p in sorted(trees))
    reports = {h: ScannerReport(h, 10) for h in SHADY_SITES}
    data = label_sequences(seqs, reports, LabelingConfig(), Vectorizer())
    cfg = HmmConfig(feature_arities(), num_states=states, max_iterations=iterations, seed=seed)
    pair, _, _ = train_pair(data.of(Label.BENIGN), data.of(Label.MALICIOUS), cfg)

    stream = synthetic_events(events, seed=seed + 2)
    rates = []
    for _ in range(repeats):
        gate = Gate(pair, tables=Tables())
        start = time.perf_counter()
        records = list(gate.run(stream))
        rates.append(gate.classified / (time.perf_counter() - start))
    actions = collections.Counter(f"{r['action']}/{r['reason']}" for r in records)
    click.echo(json.dumps({"events": events, "states": states, "classified": gate.classified,
                           "classified_per_second": round(max(rates)), "actions": actions},
                          indent=2))


if __name__ == "__main__":
    main()
