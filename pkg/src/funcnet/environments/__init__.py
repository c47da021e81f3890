"""Evaluation tasks: pursuit gridworld, cart-pole control, MNIST data."""

from .cartpole import (CartPoleParams, CartPoleState, cartpole_derivatives,
                       cartpole_observe, cartpole_reset, cartpole_step)
from .mnist import (BadMagic, CountMismatch, MnistError, MnistSet,
                    TruncatedPayload, mnist_batches, mnist_load, read_idx,
                    write_idx)
from .tag import (ACTIONS, OBS_SIZE, PREDATOR, PREY, StepRecord,
                  TagRewards, TagState, cycle_outcomes, format_record,
                  octant_index, parse_log, tag_calibrate,
                  tag_calibrate_samples, tag_observe,
                  tag_reset, tag_score, tag_step)

__all__ = [
    "ACTIONS", "OBS_SIZE", "PREDATOR", "PREY", "StepRecord", "TagRewards",
    "TagState",
    "cycle_outcomes", "format_record", "octant_index", "parse_log",
    "tag_calibrate", "tag_calibrate_samples", "tag_observe", "tag_reset", "tag_score", "tag_step",
    "CartPoleParams", "CartPoleState", "cartpole_derivatives", "cartpole_observe",
    "cartpole_reset", "cartpole_step",
    "BadMagic", "CountMismatch", "MnistError", "MnistSet", "TruncatedPayload",
    "mnist_batches", "mnist_load", "read_idx", "write_idx",
]
