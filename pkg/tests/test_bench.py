import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from fspll.bench import (METHODS, BenchSpec, Cell, method_variant, run_benchmark,
                         sweep, write_report)
from fspll.embedding import NetworkSpec
from fspll.episodes import make_world
from fspll.pll_core import RectifyConfig
from fspll.trainer import TrainConfig


def tiny_spec(**overrides):
    world = make_world(1, classes=12, dim=4, sigma=0.5)
    train = TrainConfig(network=NetworkSpec(4, (), 4), max_epoch=2,
                        tasks_per_epoch=3, n_way=3, k_support=3, k_query=4,
                        train_classes=8, init_seed=2, task_seed=3)
    defaults = dict(world=world, train=train, train_classes=8,
                    n_way=[3], k_shot=[3], r=[1], p=1.0, rounds=3,
                    methods=["fspll", "pn"], k_query=5, eval_seed=4)
    defaults.update(overrides)
    return BenchSpec(**defaults)


# -- method variants --------------------------------------------------------------

def test_variant_fspll_nm_only_differs_in_lambda():
    base = RectifyConfig(iterations=10, lam=0.5, k=4)
    full = method_variant("fspll", base)
    nm = method_variant("fspll-nm", base)
    assert nm.train_rectify == replace(base, lam=0.0)
    assert nm.test_rectify == replace(base, lam=0.0)
    assert (nm.clean_meta_train, full.clean_meta_train) == (False, False)
    assert full.train_rectify == base


def test_variant_pn_disables_rectification():
    pn = method_variant("pn")
    assert pn.train_rectify.iterations == 0
    assert pn.test_rectify.iterations == 0


def test_variant_plus_only_differs_in_meta_train_corruption():
    pn = method_variant("pn")
    pn_plus = method_variant("pn-plus")
    assert pn.train_rectify == pn_plus.train_rectify
    assert pn.test_rectify == pn_plus.test_rectify
    assert (pn.clean_meta_train, pn_plus.clean_meta_train) == (False, True)


def test_variant_unknown_name_lists_valid():
    with pytest.raises(ValueError) as err:
        method_variant("protonet")
    for name in METHODS:
        assert name in str(err.value)


# -- run_benchmark -----------------------------------------------------------------

def test_single_round_single_method():
    res = run_benchmark(tiny_spec(rounds=1, methods=["fspll"]))
    label = res.cells[0].label()
    assert len(res.accuracies[(label, "fspll")]) == 1
    assert 0.0 <= res.accuracies[(label, "fspll")][0] <= 1.0


def test_methods_share_episode_streams():
    res = run_benchmark(tiny_spec())
    label = res.cells[0].label()
    assert len(res.episode_hashes[label]) == 3
    # rerunning reproduces the identical stream
    res2 = run_benchmark(tiny_spec())
    assert res.episode_hashes == res2.episode_hashes
    assert res.accuracies == res2.accuracies


def test_fspll_equals_pn_on_clean_episodes():
    # singleton candidate sets: rectified confidences never leave one-hot, so
    # the full pipeline and the no-rectification baseline coincide per round
    res = run_benchmark(tiny_spec(r=[0], rounds=4, methods=["fspll", "pn"]))
    label = res.cells[0].label()
    assert res.accuracies[(label, "fspll")] == res.accuracies[(label, "pn")]


def test_fspll_with_zero_iterations_reduces_to_pn():
    spec = tiny_spec(r=[0], base_rectify=RectifyConfig(iterations=0), rounds=4)
    res = run_benchmark(spec)
    label = res.cells[0].label()
    assert res.accuracies[(label, "fspll")] == res.accuracies[(label, "pn")]


def test_grid_covers_all_cells():
    res = run_benchmark(tiny_spec(n_way=[3, 4], k_shot=[3], r=[0, 1], rounds=2))
    assert len(res.cells) == 4
    assert len(res.accuracies) == 4 * 2


def test_spec_validation():
    with pytest.raises(ValueError, match="held-out"):
        tiny_spec(n_way=[10])
    with pytest.raises(ValueError, match="methods"):
        tiny_spec(methods=[])
    with pytest.raises(ValueError, match="unknown method"):
        tiny_spec(methods=["nope"])
    with pytest.raises(ValueError, match="rounds"):
        tiny_spec(rounds=0)


# -- sweep -------------------------------------------------------------------------

def test_sweep_lambda_with_retrain_reproduces_ablation():
    spec = tiny_spec(methods=["fspll"], rounds=3)
    swept = sweep(spec, "lambda", [0.0, 0.5], retrain=True)
    bench = run_benchmark(tiny_spec(methods=["fspll", "fspll-nm"], rounds=3))
    base_label = bench.cells[0].label()
    lam0 = [c for c in swept.cells if c.axis_value == 0.0][0]
    lam5 = [c for c in swept.cells if c.axis_value == 0.5][0]
    assert swept.accuracies[(lam0.label(), "fspll")] == \
        bench.accuracies[(base_label, "fspll-nm")]
    assert swept.accuracies[(lam5.label(), "fspll")] == \
        bench.accuracies[(base_label, "fspll")]


def test_sweep_values_share_episode_streams():
    spec = tiny_spec(methods=["fspll"])
    swept = sweep(spec, "lambda", [0.0, 1.0])
    h0 = swept.episode_hashes[swept.cells[0].label()]
    h1 = swept.episode_hashes[swept.cells[1].label()]
    assert h0 == h1


def test_sweep_k_axis_validates_range():
    spec = tiny_spec(methods=["fspll"])
    with pytest.raises(ValueError, match="k=9"):
        sweep(spec, "k", [9])  # n_s = 3*3 = 9
    swept = sweep(spec, "k", [1, 2])
    assert len(swept.cells) == 2


def test_sweep_rejects_bad_axis():
    with pytest.raises(ValueError, match="axis"):
        sweep(tiny_spec(), "temperature", [1.0])


# -- reports -----------------------------------------------------------------------

def test_write_report_files_and_recomputation(tmp_path):
    res = run_benchmark(tiny_spec(rounds=4))
    paths = write_report(res, tmp_path / "run")

    with open(paths["rounds.csv"]) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(res.cells) * len(res.methods) * 4

    with open(paths["summary.csv"]) as fh:
        summary = list(csv.DictReader(fh))
    assert len(summary) == len(res.cells) * len(res.methods)

    for row in summary:
        accs = [float(r["accuracy"]) for r in rows
                if r["cell"] == row["cell"] and r["method"] == row["method"]]
        assert abs(float(row["mean"]) - np.mean(accs)) < 1e-6
        assert abs(float(row["std"]) - np.std(accs)) < 1e-6

    meta = json.loads((tmp_path / "run" / "meta.json").read_text())
    assert meta["std"] == "population"
    assert len(meta["config_hash"]) == 64


def test_write_report_is_byte_deterministic(tmp_path):
    res = run_benchmark(tiny_spec(rounds=2))
    write_report(res, tmp_path / "a")
    write_report(res, tmp_path / "b")
    for name in ("rounds.csv", "summary.csv", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_aggregation_matches_recomputation():
    res = run_benchmark(tiny_spec(rounds=5, methods=["fspll"]))
    label = res.cells[0].label()
    accs = res.accuracies[(label, "fspll")]
    assert abs(res.mean(label, "fspll") - np.mean(accs)) < 1e-12
    assert abs(res.std(label, "fspll") - np.std(accs)) < 1e-12


def test_cell_labels():
    assert Cell(5, 5, 2, 1.0).label() == "N5-K5-r2-p1"
    assert Cell(5, 5, 2, 1.0, "lambda", 0.5).label() == "N5-K5-r2-p1-lambda0.5"


def test_retrain_per_round_mode_runs():
    res_a = run_benchmark(tiny_spec(rounds=2, retrain_per_round=True))
    res_b = run_benchmark(tiny_spec(rounds=2, retrain_per_round=False))
    label = res_a.cells[0].label()
    assert len(res_a.accuracies[(label, "fspll")]) == 2
    # identical episode streams either way
    assert res_a.episode_hashes == res_b.episode_hashes
