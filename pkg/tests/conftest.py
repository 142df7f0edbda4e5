"""
Fixtures para tests de d4am. Los tests empíricos lentos (matriz completa) solo
corren con D4AM_RUN_SLOW=1; sin ella se marcan como skip.
"""

import numpy as np
import pytest

from d4am.config import build_config, slow_tests_enabled

SMALL_VALUES = {
    "FEATURE_DIM": "4",
    "NUM_CLASSES": "3",
    "TRAIN_SIZE": "240",
    "VAL_SIZE": "60",
    "TEST_SIZE": "120",
    "ENHANCER_HIDDEN": "8",
    "PROXY_DIMS": "8",
    "EVALUATOR_DIMS": "8;",
    "EVALUATOR_ACTIVATIONS": "relu,identity",
    "ACCURACY_FLOOR": "0.9",
    "PRETRAIN_STEPS": "60",
    "TOTAL_STEPS": "40",
    "EVAL_EVERY": "20",
    "UPDATE_PERIOD": "4",
    "SEEDS": "0,1",
    "GRID_WEIGHTS": "0,1,10",
    "JOBS": "1",
}


def pytest_collection_modifyitems(config, items):
    if slow_tests_enabled():
        return
    skip = pytest.mark.skip(reason="Test lento: definir D4AM_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def small_config(tmp_path):
    """Tiny task: trains in seconds, still separable enough for a 0.9 floor."""
    values = dict(SMALL_VALUES, OUTPUT_DIR=str(tmp_path / "out"))
    return build_config(values, source="<test>")


@pytest.fixture(scope="session")
def small_bundle():
    """Session-wide bundle for trainer/harness tests (proxy + 2 evaluators)."""
    from d4am.tasks import build_bundle

    cfg = build_config(dict(SMALL_VALUES), source="<test>")
    return build_bundle(
        cfg.task,
        cfg.enhancer_spec,
        cfg.proxy_spec,
        list(cfg.evaluator_specs),
        cfg.test_conditions,
        floor=cfg.accuracy_floor,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
