import numpy as np
import pytest

from tempohier.data import FeatureBatch, FeatureSchema, build_features, synth_generate
from tempohier.hierarchy import HierarchySpec

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_ds():
    return synth_generate(3, n_series=24, n_days=200)


@pytest.fixture(scope="session")
def small_fs(small_ds):
    return build_features(small_ds)


TINY_SPEC = HierarchySpec(c=6, h=4, w=2, k=2)
TINY_CARD = (4, 3, 3, 3, 2, 7, 12, 2, 3, 2, 2, 2)


def random_batch(schema: FeatureSchema, spec: HierarchySpec, batch: int, rng: np.random.Generator,
                 scale_range=(1.0, 5.0)) -> FeatureBatch:
    """Random categorical codes / continuous inputs / targets matching ``schema``."""
    L = spec.c + spec.h
    card = np.asarray(schema.cardinalities)
    cat = (rng.random((batch, L, len(card))) * card).astype(np.int64)
    cont = rng.standard_normal((batch, L, len(schema.cont_names)))
    y = rng.poisson(3.0, size=(batch, L)).astype(np.float64)
    return FeatureBatch(
        cat=cat, cont=cont, y_hist=y[:, :spec.c], y_future=y[:, spec.c:],
        series=np.arange(batch), scale=rng.uniform(*scale_range, size=batch),
        origin=np.full(batch, spec.c),
    )


@pytest.fixture
def tiny_schema():
    return FeatureSchema(TINY_CARD)
