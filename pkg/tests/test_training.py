"""Training loop behavior, evaluation reports, ablation sweeps, gradient harness."""

import dataclasses

import numpy as np
import pytest

from maria import datagen, training
from maria.autodiff import Graph
from maria.config import build_run_config
from maria.model import build_model
from maria.training import TrainingDiverged, ablate, evaluate, gradient_check, train


def learnable_overrides(**extra):
    base = {
        "vocab.users": "24", "vocab.items": "36", "vocab.user_attrs": "12",
        "vocab.item_attrs": "12", "vocab.trigger_attrs": "8", "vocab.context_attrs": "8",
        "vocab.scenarios": "2",
        "schema.user_attrs": "2", "schema.item_attrs": "2", "schema.trigger_attrs": "1",
        "schema.context_attrs": "2", "schema.max_behavior": "3", "schema.image_dim": "4",
        "dim.user": "4", "dim.item": "4", "dim.attr": "2", "dim.context": "2",
        "dim.scenario": "3", "dim.trigger": "4",
        "model.experts": "2", "model.expert_hidden": "16", "model.tower_dims": "16,8",
        "model.correlation_dim": "3", "model.scale_hidden": "8",
        "model.gumbel_temperature": "1.0",
        "scenario.0.noise_std": "0", "scenario.1.noise_std": "0",
        "train.batch_size": "64", "train.epochs": "6", "train.learning_rate": "0.02",
        "train.seed": "1", "gen.count": "2000", "gen.seed": "5",
    }
    base.update(extra)
    return build_run_config(base)


def make_run(cfg):
    dataset, _ = datagen.generate(cfg)
    graph = Graph(seed=cfg.train.seed)
    model = build_model(graph, cfg)
    return dataset, graph, model


def test_model_learns_a_noise_free_task():
    weights = ",".join(["5", "-5"] * 5 + ["5"])  # 11 elements, strongly separable
    cfg = learnable_overrides(**{
        "train.learning_rate": "0.02", "train.epochs": "14", "train.batch_size": "128",
        "scenario.0.label_weights": weights, "scenario.1.label_weights": weights,
    })
    dataset, graph, model = make_run(cfg)
    report = train(graph, model, dataset.instances, cfg.train)
    assert report.steps == 14 * int(np.ceil(2000 / 128))
    assert report.epoch_losses[-1] < report.epoch_losses[0] * 0.9
    result = evaluate(model, dataset.instances, cfg.train.batch_size)
    assert result.auc is not None and result.auc >= 0.95
    for scenario_eval in result.per_scenario.values():
        assert scenario_eval.auc >= 0.9
    assert dataset.manifest.bayes_auc["overall"] >= result.auc - 0.05


def test_training_is_deterministic():
    cfg = learnable_overrides(**{"train.epochs": "2", "gen.count": "400"})
    ds1, g1, m1 = make_run(cfg)
    r1 = train(g1, m1, ds1.instances, cfg.train)
    ds2, g2, m2 = make_run(cfg)
    r2 = train(g2, m2, ds2.instances, cfg.train)
    assert r1.epoch_losses == r2.epoch_losses
    for (n1, v1), (n2, v2) in zip(m1.named_parameters(), m2.named_parameters()):
        assert n1 == n2
        assert np.array_equal(v1.data, v2.data)


def test_zero_epochs_is_a_no_op():
    cfg = learnable_overrides(**{"train.epochs": "0", "gen.count": "100"})
    dataset, graph, model = make_run(cfg)
    before = [v.data.copy() for v in model.parameter_values()]
    report = train(graph, model, dataset.instances, cfg.train)
    assert report.steps == 0 and report.epoch_losses == []
    for old, value in zip(before, model.parameter_values()):
        assert np.array_equal(old, value.data)
    with pytest.raises(ValueError, match="no instances"):
        train(graph, model, [], cfg.train)


def test_weight_decay_shrinks_parameters():
    cfg_plain = learnable_overrides(**{
        "train.epochs": "1", "gen.count": "300", "train.weight_decay": "0",
        "train.learning_rate": "0.001",
    })
    cfg_decay = learnable_overrides(**{
        "train.epochs": "1", "gen.count": "300", "train.weight_decay": "0.2",
        "train.learning_rate": "0.001",
    })
    ds, g1, m1 = make_run(cfg_plain)
    train(g1, m1, ds.instances, cfg_plain.train)
    _, g2, m2 = make_run(cfg_decay)
    train(g2, m2, ds.instances, cfg_decay.train)
    norm_plain = sum(float(np.sum(v.data**2)) for v in m1.parameter_values())
    norm_decay = sum(float(np.sum(v.data**2)) for v in m2.parameter_values())
    assert norm_decay < norm_plain


def test_divergence_guard_names_the_step():
    cfg = learnable_overrides(**{"gen.count": "100"})
    dataset, graph, model = make_run(cfg)
    model.parameter_values()[0].data[...] = np.inf
    with np.errstate(invalid="ignore"), pytest.raises(TrainingDiverged, match="step 0"):
        train(graph, model, dataset.instances, cfg.train)


def test_early_stop_on_flat_eval():
    cfg = learnable_overrides(**{
        "train.epochs": "5", "train.eval_every": "1", "train.early_stop_patience": "1",
        "gen.count": "200",
    })
    dataset, graph, model = make_run(cfg)
    all_positive = [dataclasses.replace(i, label=1) for i in dataset.instances[:50]]
    report = train(graph, model, dataset.instances, cfg.train, eval_instances=all_positive)
    assert report.stopped_early
    assert len(report.epoch_losses) == 1  # stopped after the first epoch's eval
    assert report.eval_history[0][1] is None  # single-class eval has no auc


def test_evaluate_is_side_effect_free_and_reports_scenarios():
    cfg = learnable_overrides(**{"train.epochs": "1", "gen.count": "500"})
    dataset, graph, model = make_run(cfg)
    train(graph, model, dataset.instances, cfg.train)

    params_before = [v.data.copy() for v in model.parameter_values()]
    arena_before = len(graph)
    rng_before = graph.rng.bit_generator.state
    clamp_before = graph.clamp_events

    report = evaluate(model, dataset.instances, batch_size=64)

    assert len(graph) == arena_before
    assert graph.rng.bit_generator.state == rng_before
    assert graph.clamp_events == clamp_before
    for old, value in zip(params_before, model.parameter_values()):
        assert np.array_equal(old, value.data)

    assert report.count == 500
    assert set(report.per_scenario) == {0, 1}
    assert sum(e.count for e in report.per_scenario.values()) == 500
    for fname, hist in report.refiner_hist.items():
        assert hist.shape[0] == cfg.vocab.scenarios
        assert hist.sum() == 500  # one pick per instance per field
    assert report.to_dict()["count"] == 500


def test_evaluate_workers_match_serial():
    cfg = learnable_overrides(**{"train.epochs": "1", "gen.count": "300"})
    dataset, graph, model = make_run(cfg)
    train(graph, model, dataset.instances, cfg.train)
    serial = evaluate(model, dataset.instances, batch_size=32, workers=1)
    threaded = evaluate(model, dataset.instances, batch_size=32, workers=4)
    assert serial.auc == threaded.auc
    assert serial.loss == threaded.loss
    assert serial.pcoc == threaded.pcoc
    for fname in serial.refiner_hist:
        assert np.array_equal(serial.refiner_hist[fname], threaded.refiner_hist[fname])
    with pytest.raises(ValueError, match="workers"):
        evaluate(model, dataset.instances, batch_size=32, workers=0)


def test_single_class_eval_warns():
    cfg = learnable_overrides(**{"train.epochs": "1", "gen.count": "120"})
    dataset, graph, model = make_run(cfg)
    train(graph, model, dataset.instances, cfg.train)
    forced = [dataclasses.replace(i, label=1) for i in dataset.instances]
    report = evaluate(model, forced, batch_size=64)
    assert report.auc is None
    assert any("only one label class" in w for w in report.warnings)


def test_ablation_bookkeeping():
    cfg = learnable_overrides(**{"train.epochs": "1", "gen.count": "300"})
    dataset, _ = datagen.generate(cfg)
    split = 200
    report = ablate(cfg, dataset.instances[:split], dataset.instances[split:],
                    variants=("full", "wo_st", "wo_nl"))
    assert set(report.results) == {"full", "wo_st", "wo_nl"}
    gains = report.gains()
    assert set(gains) == {"wo_st", "wo_nl"}
    for row in gains.values():
        assert "total_gain" in row

    full_model = build_model(Graph(seed=0), cfg)
    summary = full_model.parameter_summary()
    assert report.results["full"].parameters == summary["total"]
    assert report.results["wo_st"].parameters == summary["total"] - summary["shared_tower"]
    table = report.to_table()
    assert "wo_st" in table and "total_gain" in table


def test_gradient_check_harness_passes_and_can_fail():
    cfg = learnable_overrides(**{"gen.count": "4", "model.gumbel_temperature": "1.0"})
    dataset, graph, model = make_run(cfg)
    report = gradient_check(graph, model, dataset.instances, coords_per_tensor=1)
    assert report.overall <= 1e-4
    from maria.model import _SUMMARY_GROUPS
    assert set(report.per_group) <= {g for g, _ in _SUMMARY_GROUPS}
    assert report.coords > 0 and report.seconds > 0

    corrupted = gradient_check(graph, model, dataset.instances, coords_per_tensor=1, corrupt_group="mixture")
    assert corrupted.per_group["mixture"] > 1e-2
    clean_groups = {g: e for g, e in corrupted.per_group.items() if g != "mixture"}
    assert max(clean_groups.values()) <= 1e-4

    with pytest.raises(ValueError, match="corrupt_group"):
        gradient_check(graph, model, dataset.instances, corrupt_group="nonexistent")
