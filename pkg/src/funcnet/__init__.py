"""funcnet: neuroevolution of graph-encoded feed-forward networks.

Genomes describe layered topologies with dense intra-layer wiring and
virtual-input pseudo-recurrence; weights are trained by gradient descent
between generations while structure evolves by mutation and selection, with
full phylogenetic lineage tracking.
"""

__version__ = "0.1.0"

from .genome import (Genome, LayerGene, ConnectorGene, NodeRef, Violation,
                     random_genome, validate, to_adjacency, serialize,
                     deserialize, digest)
from .mutations import mutate, MutationResult
from .config import ExperimentConfig, ConfigError, load_config, validate_config
from .netexec import (CompiledNetwork, compile, init_params, forward,
                      train_step, make_optimizer, save_params, load_params)
from .evolution import run_experiment, ExperimentResult
from .phylogeny import PhyloTree, tree_from_text

__all__ = [
    "Genome", "LayerGene", "ConnectorGene", "NodeRef", "Violation",
    "random_genome", "validate", "to_adjacency", "serialize", "deserialize",
    "digest", "mutate", "MutationResult",
    "ExperimentConfig", "ConfigError", "load_config", "validate_config",
    "CompiledNetwork", "compile", "init_params", "forward", "train_step",
    "make_optimizer", "save_params", "load_params",
    "run_experiment", "ExperimentResult",
    "PhyloTree", "tree_from_text",
]
