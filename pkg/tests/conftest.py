import numpy as np
import pytest

from smalldet.harness.data import generate_dataset
from smalldet.harness.evaluate import evaluate_model
from smalldet.harness.presets import (FIXTURE_IMAGE_COUNT, fixture_scene_spec,
                                      fixture_train_config)
from smalldet.harness.train import train
from smalldet.tensor import get_precision, set_precision


@pytest.fixture(autouse=True)
def _restore_precision():
    mode = get_precision()
    yield
    set_precision(mode)


@pytest.fixture(scope="session")
def fixture_dataset():
    return generate_dataset(fixture_scene_spec(), FIXTURE_IMAGE_COUNT)


@pytest.fixture(scope="session")
def convergence_run(fixture_dataset):
    """The canonical 200-epoch training run, shared by every test that
    needs a trained model. Takes about two minutes."""
    result = train(fixture_train_config(), fixture_dataset)
    report = evaluate_model(result.model, fixture_dataset)
    return result, report


@pytest.fixture(scope="session")
def ablation_map50(fixture_dataset, convergence_run):
    """Final train-set mAP50 for both box-loss kinds across three seeds.

    The seed-7 focaler entry reuses the convergence run; the other five
    configurations train here (about ten minutes total).
    """
    result, report = convergence_run
    scores = {("focaler_siou", 7): report.map50}
    for seed in (7, 8, 9):
        for kind, d, u in (("focaler_siou", 0.0, 0.95), ("siou", 0.0, 1.0)):
            if (kind, seed) in scores:
                continue
            cfg = fixture_train_config(loss_kind=kind, focaler_d=d,
                                       focaler_u=u, seed=seed)
            res = train(cfg, fixture_dataset)
            scores[(kind, seed)] = evaluate_model(res.model,
                                                  fixture_dataset).map50
    return scores
