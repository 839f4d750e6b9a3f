"""Continual-learning strategies: reductions, limits, and bookkeeping."""

import numpy as np
import pytest

from gnncl.continual.strategies import (
    ConfigError,
    StrategyConfig,
    TaskView,
    make_strategy,
)
from gnncl.harness.runner import build_dataset, build_model
from gnncl.nn.model import ModelConfig


TOY_DS = {"kind": "sbm", "num_classes": 4, "classes_per_task": 2,
          "nodes_per_class": 10, "p_in": 0.3, "p_out": 0.05,
          "feature_dim": 6, "noise_sigma": 0.3, "train_fraction": 0.6}


def _toy(seed=3, backbone="gcn", hidden=8):
    seq = build_dataset(TOY_DS, seed)
    view = TaskView(seq)
    mc = ModelConfig(backbone=backbone, hidden_dim=hidden)
    return seq, view, mc


def _train(view, mc, seq, scfg, seed=3, tasks=2):
    model = build_model(seq, mc, seed)
    strat = make_strategy(scfg, model, view, seed)
    for k in range(tasks):
        strat.train_task(k)
    return model, strat


def _params(model):
    return {n: p.data.copy() for n, p in model.named_parameters()}


class TestReductions:
    """Degenerate hyperparameters collapse onto plain fine-tuning,
    bitwise, because the extra terms contribute exact zeros."""

    def test_twp_all_zero_coefficients_is_finetune(self):
        seq, view, mc = _toy()
        base, _ = _train(view, mc, seq,
                         StrategyConfig(kind="FINETUNE", epochs=25))
        twp, _ = _train(view, mc, seq,
                        StrategyConfig(kind="TWP", lambda_l=0.0,
                                       lambda_t=0.0, beta=0.0, epochs=25))
        for n, arr in _params(base).items():
            assert np.array_equal(arr, _params(twp)[n]), n

    def test_ewc_zero_lambda_is_finetune(self):
        seq, view, mc = _toy()
        base, _ = _train(view, mc, seq,
                         StrategyConfig(kind="FINETUNE", epochs=25))
        ewc, _ = _train(view, mc, seq,
                        StrategyConfig(kind="EWC", lambda_reg=0.0,
                                       epochs=25))
        for n, arr in _params(base).items():
            assert np.array_equal(arr, _params(ewc)[n]), n

    def test_mas_zero_lambda_is_finetune(self):
        seq, view, mc = _toy()
        base, _ = _train(view, mc, seq,
                         StrategyConfig(kind="FINETUNE", epochs=25))
        mas, _ = _train(view, mc, seq,
                        StrategyConfig(kind="MAS", lambda_reg=0.0,
                                       epochs=25))
        for n, arr in _params(base).items():
            assert np.array_equal(arr, _params(mas)[n]), n


class TestEwcFreezeLimit:
    def test_minimizer_displacement_vanishes(self):
        # for loss (w-a)^2 anchored by lambda*F*(w-w*)^2 the minimizer
        # sits at distance |a-w*|/(1+lambda*F) from the anchor; with
        # lambda=1e12 and order-one a, w*, F that is < 1e-6
        lam, f = 1e12, 1.0
        a, w_star = 1.0, 0.0
        w_hat = (a + lam * f * w_star) / (1.0 + lam * f)
        assert abs(w_hat - w_star) == abs(a - w_star) / (1.0 + lam * f)
        assert abs(w_hat - w_star) < 1e-6

    def test_huge_lambda_near_freezes_fisher_weighted_params(self):
        seq, view, mc = _toy()

        def drift(scfg):
            model = build_model(seq, mc, 3)
            strat = make_strategy(scfg, model, view, 3)
            strat.train_task(0)
            snap = _params(model)
            strat.train_task(1)
            return model, strat, snap

        model, strat, snap = drift(
            StrategyConfig(kind="EWC", lambda_reg=1e12, epochs=120))
        fisher = strat.records[0].importance
        fmax = max(a.max() for a in fisher.values())
        worst = 0.0
        for n, p in model.named_parameters():
            mask = fisher[n] > 1e-8 * fmax
            if mask.any():
                worst = max(worst,
                            float(np.abs(p.data - snap[n])[mask].max()))
        assert worst < 1e-4

        model, _, snap = drift(StrategyConfig(kind="FINETUNE", epochs=120))
        free = max(float(np.abs(p.data - snap[n]).max())
                   for n, p in model.named_parameters())
        assert free > 0.1  # same budget without the anchor drifts far


class TestLwf:
    def test_teacher_frozen_while_student_moves(self):
        seq, view, mc = _toy()
        model = build_model(seq, mc, 3)
        strat = make_strategy(StrategyConfig(kind="LWF", epochs=25),
                              model, view, 3)
        strat.train_task(0)
        teacher0 = strat.teacher
        teacher_snap = _params(teacher0.model)
        assert teacher0.tasks_seen == 1
        strat.train_task(1)
        # the teacher that guided task 1 was never itself trained
        for n, arr in _params(teacher0.model).items():
            assert np.array_equal(arr, teacher_snap[n]), n
        # and a fresh teacher replaced it afterwards
        assert strat.teacher is not teacher0
        moved = any(not np.array_equal(p.data, teacher_snap[n])
                    for n, p in model.named_parameters())
        assert moved

    def test_teacher_updates_after_each_task(self):
        seq, view, mc = _toy()
        model = build_model(seq, mc, 3)
        strat = make_strategy(StrategyConfig(kind="LWF", epochs=10),
                              model, view, 3)
        strat.train_task(0)
        strat.train_task(1)
        assert strat.teacher.tasks_seen == 2
        for n, p in model.named_parameters():
            assert np.array_equal(p.data, _params(strat.teacher.model)[n])


class TestJoint:
    def test_separable_union_is_learned(self):
        # cleanly separated blocks: joint training fits every task seen
        ds = dict(TOY_DS, p_out=0.0, noise_sigma=0.1)
        seq = build_dataset(ds, 5)
        view = TaskView(seq)
        model, _ = _train(view, ModelConfig(backbone="gcn", hidden_dim=8),
                          seq, StrategyConfig(kind="JOINT", epochs=120),
                          seed=5)
        from gnncl.harness.metrics import evaluate
        for k in range(2):
            assert evaluate(model, view, k, "accuracy") >= 0.9


class TestGemBookkeeping:
    def test_memory_sampled_deterministically(self):
        seq, view, mc = _toy()
        mems = []
        for _ in range(2):
            model = build_model(seq, mc, 3)
            strat = make_strategy(
                StrategyConfig(kind="GEM", memory_per_task=5, epochs=5),
                model, view, 3)
            strat.train_task(0)
            mems.append(strat.memory[0])
        assert np.array_equal(mems[0].indices, mems[1].indices)
        assert np.array_equal(mems[0].labels, mems[1].labels)

    def test_memory_size_capped_by_train_set(self):
        seq, view, mc = _toy()
        model = build_model(seq, mc, 3)
        strat = make_strategy(
            StrategyConfig(kind="GEM", memory_per_task=10 ** 6, epochs=3),
            model, view, 3)
        strat.train_task(0)
        assert len(strat.memory[0].indices) == len(
            seq.tasks[0].train_nodes())

    def test_memory_indices_come_from_task_train_nodes(self):
        seq, view, mc = _toy()
        model = build_model(seq, mc, 3)
        strat = make_strategy(
            StrategyConfig(kind="GEM", memory_per_task=4, epochs=3),
            model, view, 3)
        strat.train_task(0)
        strat.train_task(1)
        for k, mem in enumerate(strat.memory):
            assert set(mem.indices) <= set(seq.tasks[k].train_nodes())


class TestTrainingLoop:
    def test_curve_length_equals_epochs(self):
        seq, view, mc = _toy()
        model = build_model(seq, mc, 3)
        strat = make_strategy(StrategyConfig(kind="FINETUNE", epochs=17),
                              model, view, 3)
        curve = strat.train_task(0)
        assert len(curve) == 17
        assert all(np.isfinite(v) for v in curve)

    def test_early_stopping_fires_on_plateau(self):
        # lr=0 freezes the loss, so patience elapses immediately
        seq, view, mc = _toy()
        model = build_model(seq, mc, 3)
        strat = make_strategy(
            StrategyConfig(kind="FINETUNE", epochs=500, lr=0.0,
                           early_stop_patience=5), model, view, 3)
        curve = strat.train_task(0)
        assert len(curve) == 6  # 1 improving epoch + 5 patience epochs

    def test_losses_decrease_overall(self):
        seq, view, mc = _toy()
        model = build_model(seq, mc, 3)
        strat = make_strategy(StrategyConfig(kind="FINETUNE", epochs=60),
                              model, view, 3)
        curve = strat.train_task(0)
        assert curve[-1] < curve[0] * 0.5


class TestConfigValidation:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            StrategyConfig(kind="SGD")

    def test_negative_coefficients(self):
        for field_name in ("lambda_l", "lambda_t", "beta", "lambda_reg"):
            with pytest.raises(ConfigError):
                StrategyConfig(**{field_name: -1.0})

    def test_bad_capacity_mode(self):
        with pytest.raises(ConfigError):
            StrategyConfig(capacity_mode="sometimes")

    def test_bad_epochs_temperature_memory(self):
        with pytest.raises(ConfigError):
            StrategyConfig(epochs=0)
        with pytest.raises(ConfigError):
            StrategyConfig(distill_temperature=0.0)
        with pytest.raises(ConfigError):
            StrategyConfig(memory_per_task=0)


class TestTwpCapacityModes:
    def test_exact_capacity_rejected_for_graph_tasks(self):
        ds = {"kind": "graphs", "num_tasks": 2, "graphs_per_task": 8,
              "nodes_min": 5, "nodes_max": 8, "feature_dim": 4,
              "train_fraction": 0.6}
        seq = build_dataset(ds, 0)
        view = TaskView(seq)
        mc = ModelConfig(backbone="gcn", hidden_dim=8)
        model = build_model(seq, mc, 0)
        strat = make_strategy(
            StrategyConfig(kind="TWP", beta=0.01, capacity_mode="exact",
                           epochs=2), model, view, 0)
        with pytest.raises(ConfigError):
            strat.train_task(0)

    def test_frozen_capacity_trains_graph_tasks(self):
        ds = {"kind": "graphs", "num_tasks": 2, "graphs_per_task": 8,
              "nodes_min": 5, "nodes_max": 8, "feature_dim": 4,
              "train_fraction": 0.6}
        seq = build_dataset(ds, 0)
        view = TaskView(seq)
        mc = ModelConfig(backbone="gcn", hidden_dim=8)
        model = build_model(seq, mc, 0)
        strat = make_strategy(
            StrategyConfig(kind="TWP", beta=0.01, capacity_mode="frozen",
                           epochs=3), model, view, 0)
        for k in range(2):
            curve = strat.train_task(k)
            assert all(np.isfinite(v) for v in curve)
        assert len(strat.records) == 2

    def test_records_accumulate_per_task(self):
        seq, view, mc = _toy()
        model = build_model(seq, mc, 3)
        strat = make_strategy(
            StrategyConfig(kind="TWP", beta=0.0, epochs=5), model, view, 3)
        strat.train_task(0)
        assert len(strat.records) == 1
        strat.train_task(1)
        assert len(strat.records) == 2
        assert strat.records[0].task_index == 0
        assert strat.records[1].task_index == 1
