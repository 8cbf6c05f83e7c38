import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempohier.errors import ContractError, TrainingError
from tempohier.optim import AdamState, adam_step, clip_gradients, global_norm
from tempohier.trainer import (
    DEFAULTS,
    GRID_LRS,
    GridRun,
    TrainConfig,
    grid_search,
    select_winner,
    train,
    validation_rmsed,
    worker_count,
)


def test_adam_zero_gradient_keeps_params():
    p = {"x": np.array([1.0, -2.0])}
    new, _ = adam_step(p, {"x": np.zeros(2)}, AdamState(lr=0.1))
    np.testing.assert_array_equal(new["x"], p["x"])


def test_adam_first_step_moves_by_lr():
    new, st_ = adam_step({"x": np.array(0.0)}, {"x": np.array(1.0)}, AdamState(lr=0.1))
    assert new["x"] == pytest.approx(-0.1, rel=1e-6)
    assert st_.step == 1


def test_adam_on_quadratic_matches_scalar_recurrence():
    state = AdamState(lr=0.1)
    p = {"x": np.array(1.0)}
    x, m, v = 1.0, 0.0, 0.0
    for t in range(1, 51):
        p, state = adam_step(p, {"x": 2 * p["x"]}, state)
        g = 2 * x
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert abs(p["x"]) < 0.5
    assert p["x"] == pytest.approx(x, abs=1e-12)


def test_adam_rejects_non_finite():
    with pytest.raises(TrainingError):
        adam_step({"x": np.zeros(2)}, {"x": np.array([1.0, np.nan])}, AdamState())


def test_clip_examples():
    g = {"a": np.array([0.3, 0.4])}
    assert clip_gradients(g) is g
    np.testing.assert_allclose(clip_gradients({"a": np.array([3.0, 4.0])})["a"], [0.6, 0.8])
    with pytest.raises(ContractError):
        clip_gradients(g, 0.0)


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1), st.floats(1.0, 1e6))
def test_clip_bounds_norm_and_keeps_direction(seed, size):
    rng = np.random.default_rng(seed)
    g = {"a": rng.normal(size=(3, 2)) * size, "b": rng.normal(size=4) * size}
    out = clip_gradients(g, 1.0)
    assert global_norm(out) <= 1.0 + 1e-12
    assert global_norm(out) <= global_norm(g) + 1e-12
    flat_in = np.concatenate([v.ravel() for v in g.values()])
    flat_out = np.concatenate([v.ravel() for v in out.values()])
    cos = flat_in @ flat_out / (np.linalg.norm(flat_in) * np.linalg.norm(flat_out))
    assert cos == pytest.approx(1.0, abs=1e-12)


def test_defaults_cover_table_rows():
    assert DEFAULTS[("encdec", "mse")] == (False, 1e-4)
    assert DEFAULTS[("mono", "nbnll")] == (True, 1e-3)
    assert set(GRID_LRS) == {1e-4, 1e-3, 4e-3}


def test_train_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(batch_size=0)


def test_training_improves_on_untrained_model(small_fs):
    res = train("encdec", TrainConfig(lr=4e-3, epochs=30, seed=0), small_fs)
    assert len(res.history) <= 30
    assert res.best_val_rmsed < res.initial_val_rmsed
    assert res.best_val_rmsed == min(r["val_rmsed"] for r in res.history)
    assert validation_rmsed(res.config, res.params, small_fs) == pytest.approx(res.best_val_rmsed, rel=1e-12)


@pytest.mark.parametrize("kind,loss", [("encdec", "mse"), ("mono", "nbnll")])
def test_training_is_deterministic(small_fs, kind, loss, tmp_path):
    cfg = TrainConfig(loss=loss, lr=1e-3, epochs=3, seed=11, steps_per_epoch=4)
    a, b = train(kind, cfg, small_fs), train(kind, cfg, small_fs)
    assert a.history == b.history
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    path = a.write_history(tmp_path / "h.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,l_enc,l_dec,val_rmsed" and len(lines) == 4
    if kind == "mono":
        assert lines[1].split(",")[1] == ""


def test_training_abort_keeps_last_good_checkpoint(small_fs, monkeypatch):
    import tempohier.trainer as tr

    real, calls = tr.training_step, {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] > 8:
            raise TrainingError("non-finite loss")
        return real(*args, **kw)

    monkeypatch.setattr(tr, "training_step", flaky)
    res = train("encdec", TrainConfig(lr=1e-3, epochs=5, seed=0, steps_per_epoch=4), small_fs)
    assert res.aborted and len(res.history) == 2
    assert all(np.isfinite(v).all() for v in res.params.values())
    assert res.best_val_rmsed == min(r["val_rmsed"] for r in res.history)


def test_winner_selection_rule():
    runs = [GridRun(1e-3, True, 2.0, 1), GridRun(1e-4, False, 2.0, 3), GridRun(4e-3, False, 2.5, 2)]
    assert select_winner(runs) is runs[1]


def test_grid_search_runs_every_cell_once(small_fs, monkeypatch):
    monkeypatch.setenv("TEMPOHIER_THREADS", "2")
    assert worker_count() == 2
    runs, winner = grid_search("mono", small_fs, base=TrainConfig(epochs=1, steps_per_epoch=1))
    cells = [(r.lr, r.rescale) for r in runs]
    assert len(runs) == 6 and len(set(cells)) == 6
    assert winner == select_winner(runs)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("TEMPOHIER_THREADS", "bogus")
    assert worker_count() == 1
    monkeypatch.delenv("TEMPOHIER_THREADS")
    assert worker_count() == 1
