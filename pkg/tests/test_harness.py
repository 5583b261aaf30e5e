import json
import os

import pytest

from gnnsl.corpus import generate_synthetic, write_conll
from gnnsl.encoder import EncoderConfig
from gnnsl.gnn import GnnConfig
from gnnsl.harness import ExperimentPlan, run_cells, run_plan


@pytest.fixture(scope="module")
def splits():
    ds, ls = generate_synthetic(5, 60, 0.2)
    return ds.split("train"), ds.split("dev"), ds.split("test"), ls


def small_plan(out_dir, **kw):
    base = dict(
        out_dir=str(out_dir),
        encoder=EncoderConfig(d=8, d_emb=4, heads=2, epochs=2),
        gnn=GnnConfig(heads=2, d=8, epochs=1),
        k_values=(4,),
        c_values=(1,),
        lambda_grid=(0.3, 0.7),
        temperature_grid=(1.0, 10.0),
    )
    base.update(kw)
    return ExperimentPlan(**base)


def cells(result):
    return [r for r in result.rows if r["kind"] == "cell"]


def test_plan_validation(tmp_path):
    for kw in ({"seeds": ()}, {"k_values": (0,)}, {"c_values": (-1,)}, {"setups": ("bogus",)},
               {"include_labels": ()}, {"lambda_grid": ()}):
        with pytest.raises(ValueError):
            small_plan(tmp_path, **kw)


def test_vanilla_only_one_row_per_seed(tmp_path, splits):
    res = run_cells(small_plan(tmp_path, setups=("vanilla",), seeds=(0, 1, 2)), *splits)
    assert len(res.rows) == 3
    assert [r["seed"] for r in res.rows] == [0, 1, 2]
    assert all(r["error"] is None and r["f1"] is not None for r in res.rows)


def test_every_row_has_a_distinct_digest(tmp_path, splits):
    res = run_cells(small_plan(tmp_path, setups=("vanilla", "vanilla+knn"), k_values=(1, 4)), *splits)
    digests = [r["digest"] for r in cells(res)]
    assert all(len(d) == 64 for d in digests)
    assert len(set(digests)) == len(digests)


def test_lambda_one_knn_row_matches_vanilla(tmp_path, splits):
    res = run_cells(small_plan(tmp_path, setups=("vanilla", "vanilla+knn"), lambda_grid=(1.0,)), *splits)
    van, knn = cells(res)
    for col in ("precision", "recall", "f1", "long_tail_f1", "token_accuracy"):
        assert van[col] == knn[col]
    assert knn["lambda"] == 1.0


def test_rerun_is_identical_and_hits_cache(tmp_path, splits):
    plan = small_plan(tmp_path, setups=("vanilla", "vanilla+knn", "vanilla+gnn", "vanilla+gnn+knn"))
    first = run_cells(plan, *splits)
    assert first.stages["encoder"] == 1 and first.stages["datastore"] == 1 and first.stages["gnn"] == 1
    with open(first.json_path, "rb") as fh:
        a = fh.read()
    with open(first.tsv_path, "rb") as fh:
        ta = fh.read()
    second = run_cells(plan, *splits)
    assert sum(second.stages.values()) == 0
    with open(second.json_path, "rb") as fh:
        assert fh.read() == a
    with open(second.tsv_path, "rb") as fh:
        assert fh.read() == ta
    # a fresh output directory retrains and still lands on the same table
    third = run_cells(small_plan(tmp_path / "other", setups=plan.setups), *splits)
    assert third.rows == first.rows
    assert plan.digest() in os.path.basename(first.json_path)


def test_sweeps_emit_best_k_and_label_delta(tmp_path, splits):
    plan = small_plan(tmp_path, setups=("vanilla+gnn",), k_values=(1, 4), include_labels=(True, False))
    res = run_cells(plan, *splits)
    assert len(cells(res)) == 4
    best = [r for r in res.rows if r["kind"] == "argmax-k"]
    assert len(best) == 2
    for b in best:
        peers = [r["f1"] for r in cells(res) if r["include_labels"] == b["include_labels"]]
        assert b["f1"] == max(peers)
    assert len(res.deltas) == 2
    doc = json.loads(open(res.json_path).read())
    assert doc["label_node_deltas"] == res.deltas


def test_untrained_keys_are_labelled(tmp_path, splits):
    res = run_cells(small_plan(tmp_path, setups=("vanilla+knn",), use_finetuned_keys=(True, False)), *splits)
    assert [r["keys"] for r in cells(res)] == ["finetuned", "untrained-analogue"]
    assert res.stages["untrained_encoder"] == 1 and res.stages["datastore"] == 2


def test_failed_cell_is_recorded_and_others_continue(tmp_path, splits, monkeypatch):
    from gnnsl import harness

    def boom(*a, **k):
        raise RuntimeError("graph stage exploded")

    monkeypatch.setattr(harness.gnn_mod, "train_gnn", boom)
    res = run_cells(small_plan(tmp_path, setups=("vanilla", "vanilla+gnn")), *splits)
    van, bad = cells(res)
    assert van["error"] is None and van["f1"] is not None
    assert bad["f1"] is None and "graph stage exploded" in bad["error"]
    assert "graph stage exploded" in open(res.tsv_path).read()


def test_run_plan_reads_files(tmp_path, splits):
    train, dev, test, ls = splits
    paths = {}
    for name, data in (("train", train), ("dev", dev), ("test", test)):
        paths[name] = str(tmp_path / f"{name}.conll")
        write_conll(paths[name], data, ls)
    res = run_plan(small_plan(tmp_path / "out", setups=("vanilla",)), paths)
    direct = run_cells(small_plan(tmp_path / "out2", setups=("vanilla",)), *splits)
    assert res.rows[0]["f1"] == direct.rows[0]["f1"]
