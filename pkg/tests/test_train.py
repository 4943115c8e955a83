import csv
import json

import numpy as np
import pytest
from scipy import stats

from dgt.graph import SbmConfig, generate_sbm, make_split
from dgt.model import ModelConfig
from dgt.train import (
    GridSpec,
    NumericFailure,
    TrainConfig,
    accuracy,
    build_model,
    confidence_interval,
    evaluate,
    prepare,
    run_ablation_grid,
    train,
)

SMALL_MODEL = ModelConfig(hidden=8, heads=2, keys=2)


def _prep(seed=0, n=60, model=SMALL_MODEL, criteria="bfs,ppr", ordering="relative"):
    g = generate_sbm(SbmConfig(n, 2, 0.3, 0.03, feature_dim=4, seed=seed))
    split = make_split(g, seed=seed)
    prep = prepare(g, split, criteria, 6, ordering, model, seed)
    return prep, build_model(model, prep)


class TestAccuracy:
    def test_perfect(self):
        labels = np.array([0, 1, 2, 1])
        assert accuracy(np.eye(3)[labels] * 5, labels, np.arange(4)) == 1.0

    def test_uniform_logits_pick_class_zero(self):
        labels = np.array([0, 1, 0, 2, 0])
        assert accuracy(np.zeros((5, 3)), labels, np.arange(5)) == pytest.approx(0.6)

    def test_hand_count(self):
        logits = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [0.0, 3.0]])
        labels = np.array([0, 0, 0, 1])
        assert accuracy(logits, labels, [0, 1, 2]) == pytest.approx(2 / 3)
        assert accuracy(logits, labels, [3]) == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy(np.zeros((2, 2)), np.zeros(2, dtype=int), [])

    def test_evaluate_matches_accuracy(self):
        prep, model = _prep()
        acc = evaluate(model, prep.graph, prep.seqs, prep.katz, prep.split.test_ids)
        assert 0.0 <= acc <= 1.0


def test_early_stop_at_patience_plus_one():
    prep, model = _prep()
    # a vanishing learning rate leaves validation accuracy flat from epoch 1
    res = train(model, prep.graph, prep.seqs, prep.katz, prep.split, TrainConfig(lr=1e-14, weight_decay=0.0, max_epochs=100, patience=7))
    assert res.best_epoch == 1
    assert res.epochs_run == 8


def test_max_epochs_cap():
    prep, model = _prep()
    res = train(model, prep.graph, prep.seqs, prep.katz, prep.split, TrainConfig(max_epochs=5, patience=5))
    assert res.epochs_run <= 5 and len(res.train_loss) == res.epochs_run


def test_deterministic_and_best_epoch_reported():
    runs = []
    for _ in range(2):
        prep, model = _prep(seed=3, model=ModelConfig(hidden=8, heads=2, keys=2, dropout=0.2))
        runs.append(train(model, prep.graph, prep.seqs, prep.katz, prep.split, TrainConfig(max_epochs=30, patience=10, seed=3)))
    a, b = runs
    assert a.train_loss == b.train_loss and a.val_acc == b.val_acc
    assert a.test_acc == a.test_acc_trace[a.best_epoch - 1]
    assert a.best_val_acc == max(a.val_acc)


def test_best_state_restored():
    prep, model = _prep(seed=1)
    res = train(model, prep.graph, prep.seqs, prep.katz, prep.split, TrainConfig(max_epochs=40, patience=10))
    assert evaluate(model, prep.graph, prep.seqs, prep.katz, prep.split.val_ids) == res.best_val_acc
    assert evaluate(model, prep.graph, prep.seqs, prep.katz, prep.split.test_ids) == res.test_acc


def test_loss_decreases_early():
    ok = 0
    for seed in range(5):
        prep, model = _prep(seed=seed)
        res = train(model, prep.graph, prep.seqs, prep.katz, prep.split, TrainConfig(lr=0.005, max_epochs=10, patience=10, seed=seed))
        ok += all(b <= a + 1e-12 for a, b in zip(res.train_loss, res.train_loss[1:]))
    assert ok >= 3


def test_monitor_loss():
    prep, model = _prep()
    res = train(model, prep.graph, prep.seqs, prep.katz, prep.split, TrainConfig(max_epochs=20, patience=5, monitor="loss"))
    assert res.best_epoch == int(np.argmin(res.val_loss)) + 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_raises():
    prep, model = _prep()
    model.params["encoder.w"].data[0, 0] = np.inf
    with pytest.raises(NumericFailure):
        train(model, prep.graph, prep.seqs, prep.katz, prep.split, TrainConfig(max_epochs=3, patience=3))


@pytest.mark.parametrize("kw", [dict(lr=0.0), dict(patience=10, max_epochs=5), dict(monitor="f1")])
def test_bad_train_config(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


class TestConfidenceInterval:
    def test_constant(self):
        assert confidence_interval([0.8] * 5) == (0.8, 0.0)

    def test_single(self):
        mean, half = confidence_interval([0.5])
        assert mean == 0.5 and np.isnan(half)

    def test_t_multiplier(self):
        v = [0.70, 0.72, 0.75, 0.71, 0.74]
        mean, half = confidence_interval(v)
        expected = stats.t.ppf(0.975, 4) * np.std(v, ddof=1) / np.sqrt(5)
        assert mean == pytest.approx(np.mean(v))
        assert half == pytest.approx(expected, rel=1e-12)
        assert stats.t.ppf(0.975, 4) == pytest.approx(2.776, abs=1e-3)


class TestGrid:
    def _spec(self, **kw):
        base = dict(
            axes={"variant": ["RB"]},
            repeats=3,
            seed=10,
            seq_len=6,
            data={"num_nodes": 40, "num_classes": 2, "intra_edge_prob": 0.3, "inter_edge_prob": 0.05, "feature_dim": 4},
            model={"hidden": 8, "heads": 2, "keys": 2},
            train={"max_epochs": 5, "patience": 5},
        )
        base.update(kw)
        return GridSpec(**base)

    def test_one_cell_three_repeats(self, tmp_path):
        rows = run_ablation_grid(self._spec(), tmp_path)
        assert len(rows) == 3
        assert [r["seed"] for r in rows] == [10, 11, 12]
        with open(tmp_path / "results.csv", newline="") as fh:
            got = list(csv.DictReader(fh))
        assert list(got[0]) == ["cell_id", "variant", "repeat", "seed", "best_val_acc", "test_acc", "epochs", "wall_ms"]
        assert len(got) == 3
        assert (tmp_path / "summary.txt").read_text().count("\n") == 2

    def test_paired_seeds_across_cells(self):
        rows = run_ablation_grid(self._spec(axes={"variant": ["AB", "RB"]}, repeats=2))
        by_cell = {}
        for r in rows:
            by_cell.setdefault(r["variant"], []).append(r["seed"])
        assert by_cell["AB"] == by_cell["RB"] == [10, 11]

    @pytest.mark.parametrize(
        "axes",
        [
            {"colour": ["red"]},
            {"variant": ["XX"]},
            {"ordering": ["sideways"]},
            {"epsilon": [0.5]},
            {"variant": []},
            {"lr": [0.1]},
            {"weight_decay": [0.0]},
            {"layers": [3]},
            {"gamma": [3.0]},
        ],
    )
    def test_invalid_axis(self, axes):
        with pytest.raises(ValueError):
            self._spec(axes=axes).cells()

    def test_search_grid_values_accepted(self):
        spec = self._spec(axes={"lr": [0.05, 0.01, 0.005], "weight_decay": [1e-3, 5e-4, 5e-5], "gamma": [1, 256]})
        assert len(spec.cells()) == 18

    def test_cells_cartesian(self):
        spec = self._spec(axes={"epsilon": [1.0, 2.0], "interp": ["kernel", "bilinear"]})
        assert len(spec.cells()) == 4

    def test_from_json(self, tmp_path):
        path = tmp_path / "g.json"
        path.write_text(json.dumps({"axes": {"variant": ["AR"]}, "repeats": 2}))
        assert GridSpec.from_json(path).repeats == 2
        path.write_text(json.dumps({"axes": {}}))
        with pytest.raises(ValueError):
            GridSpec.from_json(path)
