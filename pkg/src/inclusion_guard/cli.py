"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import itertools
import json
import logging
import sys
from pathlib import Path

import click

from . import evaluation as ev
from .classifier import ModelPair, classify_many, train_pair
from .config import AppConfig
from .features import (FEATURE_NAMES, Category, DiscretizationConfig, Label, Vectorizer,
                       feature_arities, read_observations, write_observations)
from .gate import Gate, load_whitelist
from .hmm import HmmError
from .hosts import MalformedHost
from .tree import TreeError, build_trees, iter_event_records, read_events

log = logging.getLogger("inclusion_guard")

EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 1, 2, 3


class DataError(click.ClickException):
    exit_code = EXIT_DATA


def _open_out(path):
    return open(path, "w", encoding="utf-8") if path and path != "-" else None


def _emit(text: str, out: str | None) -> None:
    if out and out != "-":
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        click.echo(text)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON run configuration.")
@click.option("--log-level", default="WARNING", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.pass_context
def cli(ctx, config_path, log_level):
    """Inclusion-sequence classification toolkit."""
    logging.basicConfig(level=log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = AppConfig.load(config_path)


def _load_labeled(cfg: AppConfig, observations, events, reports, suffixes, ranks, roles):
    if observations:
        with open(observations, encoding="utf-8") as fh:
            header, seqs = read_observations(fh)
        return header["arities"], header.get("features", FEATURE_NAMES), ev.LabeledDataset(seqs)
    if not (events and reports):
        raise click.UsageError("give --observations, or both --events and --reports")
    tables = cfg.build_tables(suffixes, ranks, roles)
    with open(events, encoding="utf-8") as fh:
        trees = build_trees(read_events(fh), tables)
    quarantined = sum(len(t.quarantined) for t in trees.values())
    if quarantined:
        log.warning("%d events quarantined while building trees", quarantined)
    seqs = ev.unique_sequences(trees[p] for p in sorted(trees))
    dc = cfg.discretization()
    data = ev.label_sequences(seqs, ev.load_reports(reports), cfg.labeling_config(), Vectorizer(dc))
    return feature_arities(dc), FEATURE_NAMES, data


@cli.command()
@click.option("--observations", type=click.Path(exists=True, dir_okay=False),
              help="Labeled observations file.")
@click.option("--events", type=click.Path(exists=True, dir_okay=False), help="Load-event stream.")
@click.option("--reports", type=click.Path(exists=True, dir_okay=False), help="Scanner report CSV.")
@click.option("--suffixes", type=click.Path(exists=True, dir_okay=False))
@click.option("--ranks", type=click.Path(exists=True, dir_okay=False))
@click.option("--roles", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out", required=True, type=click.Path(dir_okay=False), help="Model-pair file.")
@click.option("--dataset-out", type=click.Path(dir_okay=False),
              help="Also write the labeled observations used for training.")
@click.option("--states", type=int)
@click.option("--iterations", type=int)
@click.option("--seed", type=int)
@click.option("--bias", type=float)
@click.pass_obj
def train(cfg: AppConfig, observations, events, reports, suffixes, ranks, roles, out, dataset_out,
          states, iterations, seed, bias):
    """Train the benign and malicious models."""
    arities, names, data = _load_labeled(cfg, observations, events, reports, suffixes, ranks, roles)
    if dataset_out:
        with open(dataset_out, "w", encoding="utf-8") as fh:
            write_observations(data.sequences, fh, arities, names)
    benign, malicious = data.of(Label.BENIGN), data.of(Label.MALICIOUS)
    if not benign or not malicious:
        raise DataError(f"need both classes: {len(benign)} benign, {len(malicious)} malicious")
    hc = cfg.hmm_config(arities, num_states=states, max_iterations=iterations, seed=seed)
    bias = bias if bias is not None else cfg.classifier.get("bias", 0.0)
    pair, tb, tm = train_pair(benign, malicious, hc, bias)
    pair.save(out)
    click.echo(json.dumps({"benign": {"sequences": len(benign), "iterations": tb.iterations,
                                      "log_likelihood": tb.log_likelihoods[-1]},
                           "malicious": {"sequences": len(malicious), "iterations": tm.iterations,
                                         "log_likelihood": tm.log_likelihoods[-1]},
                           "gray": len(data.gray)}, sort_keys=True), err=True)


@cli.command()
@click.option("--models", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--observations", type=click.Path(exists=True, dir_okay=False))
@click.option("--events", type=click.Path(exists=True, dir_okay=False),
              help="Classify every inclusion sequence found in an event stream.")
@click.option("--suffixes", type=click.Path(exists=True, dir_okay=False))
@click.option("--ranks", type=click.Path(exists=True, dir_okay=False))
@click.option("--roles", type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default="-")
@click.pass_obj
def classify(cfg: AppConfig, models, observations, events, suffixes, ranks, roles, out):
    """Score sequences with a trained model pair."""
    pair = ModelPair.load(models)
    if observations:
        with open(observations, encoding="utf-8") as fh:
            header, seqs = read_observations(fh)
        if tuple(header["arities"]) != pair.arities:
            raise DataError("observation arities do not match the model pair")
        urls = [s.source for s in seqs]
    elif events:
        tables = cfg.build_tables(suffixes, ranks, roles)
        with open(events, encoding="utf-8") as fh:
            trees = build_trees(read_events(fh), tables)
        vec = Vectorizer(cfg.discretization())
        found = ev.unique_sequences(trees[p] for p in sorted(trees))
        seqs = [vec.vectorize(s.hosts, source=s.source) for s in found]
        urls = [s.sequence.terminal.url for s in found]
    else:
        raise click.UsageError("give --observations or --events")
    decisions = classify_many(pair, seqs)
    fh = _open_out(out)
    try:
        for url, d in zip(urls, decisions):
            (fh or sys.stdout).write(json.dumps({"url": url, **d.to_dict()}, sort_keys=True) + "\n")
    finally:
        if fh:
            fh.close()


def _parse_ablation(values) -> list[list[str]]:
    subsets = []
    for v in values:
        if v == "all":
            cats = [c.value for c in Category]
            for r in range(1, len(cats) + 1):
                subsets += [list(c) for c in itertools.combinations(cats, r)]
        else:
            subsets.append([x.strip() for x in v.split(",") if x.strip()])
    return subsets


@cli.command()
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--folds", default=10, show_default=True, type=int)
@click.option("--ablate", multiple=True,
              help="Category subset like 'DNS,Role'; 'all' runs every combination. Repeatable.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--states", type=int)
@click.option("--iterations", type=int)
@click.option("--out", type=click.Path(dir_okay=False), default="-")
@click.pass_obj
def evaluate(cfg: AppConfig, dataset, folds, ablate, seed, states, iterations, out):
    """Stratified k-fold evaluation of a labeled observations file."""
    with open(dataset, encoding="utf-8") as fh:
        header, seqs = read_observations(fh)
    data = ev.LabeledDataset(seqs)
    hc = cfg.hmm_config(header["arities"], num_states=states, max_iterations=iterations)
    echo = {**cfg.to_dict(), "hmm": hc.to_dict(), "folds": folds, "seed": seed}
    inputs = {"dataset": Path(dataset).name, "dataset_digest": data.digest(),
              "sequences": len(data), "benign": len(data.of(Label.BENIGN)),
              "malicious": len(data.of(Label.MALICIOUS))}
    if ablate:
        results = ev.feature_ablation(data, _parse_ablation(ablate), folds, hc, seed,
                                      header.get("features", FEATURE_NAMES))
        doc = {"format": ev.METRICS_FORMAT, "version": 1, "config": echo, "inputs": inputs,
               "ablation": {k: m.to_dict(with_records=False) for k, m in results.items()}}
        _emit(json.dumps(doc, sort_keys=True, indent=1), out)
        return
    metrics = ev.kfold_evaluate(data, folds, hc, seed)
    _emit(ev.metrics_document(metrics, echo, inputs), out)


@cli.command()
@click.option("--models", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--whitelist", type=click.Path(exists=True, dir_okay=False))
@click.option("--suffixes", type=click.Path(exists=True, dir_okay=False))
@click.option("--ranks", type=click.Path(exists=True, dir_okay=False))
@click.option("--roles", type=click.Path(exists=True, file_okay=False))
@click.pass_obj
def gate(cfg: AppConfig, models, whitelist, suffixes, ranks, roles):
    """Allow/block each load event read from stdin; records go to stdout."""
    dc = cfg.discretization()
    pair = ModelPair.load(models, expected_arities=feature_arities(dc))
    g = Gate(pair, load_whitelist(whitelist) if whitelist else (),
             cfg.build_tables(suffixes, ranks, roles), dc)
    out = sys.stdout
    for rec in g.run(iter_event_records(sys.stdin)):
        out.write(json.dumps(rec, sort_keys=True) + "\n")
        out.flush()
    log.info("gate: %d classified, %d quarantined", g.classified, g.quarantined)


@cli.command("gen-synthetic")
@click.argument("spec", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--generators-out", type=click.Path(dir_okay=False),
              help="Write the generating model pair too.")
def gen_synthetic(spec, seed, out, generators_out):
    """Sample a labeled synthetic dataset from two generator HMMs."""
    sspec = ev.SyntheticSpec.from_dict(json.loads(Path(spec).read_text(encoding="utf-8")))
    data, generators = ev.generate_synthetic(sspec, seed)
    with open(out, "w", encoding="utf-8") as fh:
        write_observations(data.sequences, fh, feature_arities(DiscretizationConfig(bins=sspec.bins)),
                           FEATURE_NAMES, sspec.bins)
    if generators_out:
        generators.save(generators_out)


@cli.command("early-report")
@click.option("--detections", required=True, type=click.Path(exists=True, dir_okay=False),
              help="CSV host,detected")
@click.option("--reports", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default="-")
def early_report(detections, reports, out):
    """Bucket detected hosts by how long scanners took to report them."""
    report = ev.early_detection_report(ev.load_detections(detections), ev.load_reports(reports))
    _emit(json.dumps(report, sort_keys=True, indent=1), out)


DATA_ERRORS = (ValueError, KeyError, OSError, HmmError, TreeError, MalformedHost)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="inclusion-guard", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.Abort:
        return EXIT_USAGE
    except DataError as e:
        e.show()
        return EXIT_DATA
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_DATA
    except DATA_ERRORS as e:
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        click.echo(f"internal error: {e}", err=True)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
