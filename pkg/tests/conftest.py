"""Shared fixtures: a tiny generated dataset and a fast training setup.

The tiny dataset is generated once per session; tests that mutate nothing
share it to keep the suite quick.
"""

import pytest

from samhead.forest import TrainConfig
from samhead.pipeline import TrainSettings
from samhead.pooling import PoolGrid
from samhead.routing import default_routing_table
from samhead.synth import SynthConfig, generate_dataset


def tiny_synth_config(**overrides) -> SynthConfig:
    """A dataset small enough to train against in a couple of seconds."""
    base = dict(
        num_images=10,
        peds_per_image=(2, 3),
        background_proposals=30,
    )
    base.update(overrides)
    return SynthConfig(**base)


def fast_train_settings(**forest_overrides) -> TrainSettings:
    forest = dict(
        stage_tree_counts=(4, 8),
        initial_negatives=80,
        hard_negatives_per_stage=40,
        max_depth=2,
        max_bins=32,
        prior_weight=2.0,
        seed=5,
    )
    forest.update(forest_overrides)
    return TrainSettings(
        routing=default_routing_table(grid=PoolGrid(4, 2)),
        forest=TrainConfig(**forest),
    )


@pytest.fixture(scope="session")
def tiny_train_set():
    return generate_dataset(tiny_synth_config(), seed=3)


@pytest.fixture(scope="session")
def tiny_test_set():
    return generate_dataset(tiny_synth_config(num_images=8), seed=4)
