"""Canonical desk-scale configurations shared by tests, scripts, and docs.

One small synthetic dataset and one training recipe, referenced everywhere
so results stay comparable across entry points.
"""

import dataclasses

from .data import SceneSpec
from .train import TrainConfig

FIXTURE_IMAGE_COUNT = 32


def fixture_scene_spec(**overrides):
    base = SceneSpec(image_size=(64, 64), num_objects=3, num_classes=2, seed=42)
    return dataclasses.replace(base, **overrides) if overrides else base


def fixture_train_config(**overrides):
    base = TrainConfig(
        epochs=200,
        batch_size=8,
        learning_rate=2e-3,
        loss_kind="focaler_siou",
        seed=7,
    )
    return dataclasses.replace(base, **overrides) if overrides else base
