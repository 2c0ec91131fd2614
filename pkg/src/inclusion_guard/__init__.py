"""Detect malicious third-party inclusions from resource inclusion sequences."""
from .classifier import Decision, ModelPair, classify, classify_many, train_pair
from .features import (DiscretizationConfig, FeatureVector, Label, ObservationSequence, Vectorizer,
                       vectorize_sequence)
from .gate import Gate, WhitelistRule, gate_stream
from .hmm import (CategoricalHmm, HmmConfig, TrainTrace, init_model, log_likelihood_backward,
                  log_likelihood_forward, sample, train_baum_welch)
from .hosts import Host, HostKind, RankTable, RoleTable, SuffixTable, Tables, TldCategory, parse_host
from .tree import InclusionSequence, InclusionTree, Initiator, LoadEvent, ResourceKind

__version__ = "0.1.0"
