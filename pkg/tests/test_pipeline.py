import json

import numpy as np
import pytest

from gscl.encoder import init_params, load_matrix, load_params
from gscl.pipeline import (ConfigError, NumericalError, RunConfig, _seeds, expand_grid, load_dataset,
                           run_sweep, run_train)

SMALL = {"type": "sbm", "block_sizes": [20, 20], "p_in": 0.3, "p_out": 0.02, "feature_dim": 6}


def _cfg(**kw):
    base = dict(seed=0, dataset=SMALL, hidden_dim=8, epochs=4)
    base.update(kw)
    return RunConfig(**base)


def test_config_requires_seed_and_ranges():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"epochs": 3})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"seed": 0, "bogus": 1})
    for bad in ({"lr": 0.5}, {"tau_base": 0.05}, {"k": 5}, {"num_layers": 4}, {"alpha": 0.0},
                {"tau_spacing": 0.2}, {"variant": "x"}, {"sampler": "x"}, {"seed": "1"},
                {"dataset": {"type": "web"}}):
        with pytest.raises(ConfigError):
            _cfg(**bad)


def test_config_roundtrip_and_hash(tmp_path):
    cfg = _cfg(variant="pairwise")
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    again = RunConfig.from_json(tmp_path / "c.json")
    assert again == cfg and again.config_hash() == cfg.config_hash()
    assert cfg.replace(k=3).config_hash() != cfg.config_hash()


def test_load_dataset_files(tmp_path):
    (tmp_path / "g.edges").write_text("0 1\n1 2\n")
    (tmp_path / "f.csv").write_text("a\n1\n2\n3\n")
    (tmp_path / "y.csv").write_text("node_id,class_id\n0,0\n1,1\n2,0\n")
    (tmp_path / "s.csv").write_text("node_id,split\n0,train\n1,train\n2,test\n")
    spec = {"type": "files", "edges": str(tmp_path / "g.edges"), "features": str(tmp_path / "f.csv"),
            "labels": str(tmp_path / "y.csv"), "split": str(tmp_path / "s.csv")}
    g, split = load_dataset(spec, 0)
    assert g.num_nodes == 3 and split.train.tolist() == [0, 1]


def test_seed_streams_are_independent():
    a = _seeds(0)
    b = _seeds(0)
    assert a[0] == b[0]
    assert a[1].random() == b[1].random()
    assert _seeds(1)[0] != a[0]


def test_zero_lr_keeps_initial_params():
    cfg = _cfg(lr=0.0, weight_decay=1e-4)
    res = run_train(cfg)
    init_seed = _seeds(0)[0]
    init = init_params([6, 8, 8], [8, 8], "prelu", seed=init_seed)
    assert all(np.array_equal(a, b) for a, b in zip(res.params.arrays(), init.arrays()))


def test_run_directory_and_determinism(tmp_path):
    cfg = _cfg(eval_every=2)
    a = run_train(cfg, tmp_path / "a")
    run_train(cfg, tmp_path / "b")
    for name in ("metrics.jsonl", "embeddings.bin", "params.bin", "results.json", "results.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config_hash"] == cfg.config_hash() and manifest["seed"] == 0
    assert RunConfig.from_dict(manifest["config"]) == cfg
    lines = (tmp_path / "a" / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(x)["epoch"] for x in lines] == [1, 2, 3, 4]
    assert "accuracy" in json.loads(lines[1])
    assert np.array_equal(load_matrix(tmp_path / "a" / "embeddings.bin"), a.embeddings.astype(np.float32))
    assert load_params(tmp_path / "a" / "params.bin").activation == "prelu"
    assert set(a.metrics) == {"final", "best_over_epochs"}


@pytest.mark.parametrize("sampler", ["uniform", "pagerank"])
def test_sampler_and_minibatch_paths(sampler):
    res = run_train(_cfg(sampler=sampler, batch_size=16, epochs=2))
    assert len(res.log) == 2 and all(np.isfinite(r["loss"]) for r in res.log)


def test_nan_aborts_with_last_good_checkpoint(tmp_path, monkeypatch):
    from gscl import loss as loss_mod

    real = loss_mod.LossPlan.evaluate
    calls = {"n": 0}

    def flaky(self, z, counter=None, reduction="sum"):
        calls["n"] += 1
        out = real(self, z, counter, reduction)
        if calls["n"] == 3:
            out.value = np.array(np.nan, dtype=out.value.dtype)
        return out

    monkeypatch.setattr(loss_mod.LossPlan, "evaluate", flaky)
    with pytest.raises(NumericalError, match="epoch 3"):
        run_train(_cfg(epochs=5), tmp_path / "run")
    assert (tmp_path / "run" / "params.bin").exists()


def test_expand_grid():
    assert expand_grid({"k": [1, 2], "lr": [0.1]}) == [{"k": 1, "lr": 0.1}, {"k": 2, "lr": 0.1}]


def test_sweep_singleton_and_resume(tmp_path):
    base = _cfg(epochs=2)
    res = run_sweep(base, {"k": [1]}, tmp_path)
    assert res.best == base.replace(k=1)
    assert (tmp_path / "sweep.csv").exists() and (tmp_path / "best_config.json").exists()
    run_dir = tmp_path / "runs" / res.table[0]["run"]
    stamp = (run_dir / "results.json").stat().st_mtime_ns
    again = run_sweep(base, {"k": [1]}, tmp_path)
    assert (run_dir / "results.json").stat().st_mtime_ns == stamp
    assert again.best == res.best and again.table == res.table


def test_sweep_empty_grid(tmp_path):
    with pytest.raises(ConfigError):
        run_sweep(_cfg(), {"k": []}, tmp_path)


def test_sweep_trained_beats_untrained(tmp_path):
    # structurally separable blocks, features buried in noise
    data = {"type": "sbm", "p_in": 0.1, "p_out": 0.0, "feature_dim": 16, "feature_noise": 15.0}
    base = RunConfig(seed=0, dataset=data, hidden_dim=32, epochs=150)
    res = run_sweep(base, {"lr": [0.0, 1e-3]}, tmp_path)
    assert res.best.lr == 1e-3
    assert res.table[1]["val_accuracy"] > res.table[0]["val_accuracy"]


def test_interrupted_sweep_reaches_same_best(tmp_path):
    import shutil

    base = _cfg(epochs=2)
    grid = {"k": [1, 2], "variant": ["listwise", "pairwise"]}
    full = run_sweep(base, grid, tmp_path / "a")
    partial = run_sweep(base, grid, tmp_path / "b")
    # simulate a crash that lost the last two runs
    for row in partial.table[2:]:
        shutil.rmtree(tmp_path / "b" / "runs" / row["run"])
    resumed = run_sweep(base, grid, tmp_path / "b")
    assert resumed.best == full.best
    assert resumed.table == full.table
