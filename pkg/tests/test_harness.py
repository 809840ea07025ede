"""Grid expansion, training orchestration, aggregation, and CLI tests."""

from __future__ import annotations

import json

import numpy as np
import pytest

import hqnnbench.harness as harness
from hqnnbench.data import synth_blobs, make_folds
from hqnnbench.harness import (
    ExperimentResult,
    HybridModel,
    ModelConfig,
    QnnArch,
    aggregate_tables,
    build_model,
    default_batch_size,
    expand_grid,
    load_run_dataset,
    main,
    parse_run_config,
    run_experiment,
    run_grid,
)
from hqnnbench.statevec import EncodingError


class TestQnnArch:
    def test_builds_match_latent_qubits(self):
        c = QnnArch("ang_ry").build(16)
        assert c.n_qubits == 4 and c.n_params == 48
        c = QnnArch("amp_gen").build(256)
        assert c.n_qubits == 8 and c.n_inputs == 256
        c = QnnArch("qcnn", True, "single").build(16)
        assert c.out_dim == 1
        c = QnnArch("ang_arb", True, "local").build(16)
        assert c.out_dim == 4

    def test_qcnn_switches_are_fixed(self):
        with pytest.raises(ValueError):
            QnnArch("qcnn", entangle=False, observable="single")
        with pytest.raises(ValueError):
            QnnArch("qcnn", entangle=True, observable="local")
        with pytest.raises(ValueError):
            QnnArch("ang_ry", observable="single")
        with pytest.raises(ValueError):
            QnnArch("spaghetti")

    def test_unknown_latent(self):
        with pytest.raises(ValueError):
            QnnArch("ang_ry").build(64)


class TestModelConfig:
    def test_round_trip(self):
        cfg = ModelConfig(
            family="hybrid",
            preproc="conv1",
            latent_dim=256,
            tanh_pi=True,
            qnn=QnnArch("ang_arb", False, "local"),
            seed=3,
        )
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
        assert ModelConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_hash_is_stable_and_discriminating(self):
        a = ModelConfig(family="classical", preproc="conv0", latent_dim=16, head="mlp")
        b = ModelConfig(family="classical", preproc="conv0", latent_dim=16, head="mlp")
        c = ModelConfig(family="classical", preproc="conv0", latent_dim=16, head="none")
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()
        assert len(a.config_hash()) == 64
        int(a.config_hash(), 16)  # valid hex

    def test_labels(self):
        h = ModelConfig(
            family="hybrid",
            preproc="conv0",
            latent_dim=16,
            tanh_pi=True,
            qnn=QnnArch("ang_ry", False, "local"),
        )
        assert h.label == "hybrid-ang_ry-conv0-l16-noent-local-tanh"
        assert h.group == "Ang-RY"
        c = ModelConfig(family="classical", preproc="conv3", latent_dim=256, head="fcrelu")
        assert c.label == "classical-conv3-l256-fcrelu"
        assert c.group == "classical"

    def test_invariants(self):
        with pytest.raises(ValueError):
            ModelConfig(family="hybrid", preproc="conv0", latent_dim=16)  # no qnn
        with pytest.raises(ValueError):
            ModelConfig(
                family="hybrid", preproc="conv0", latent_dim=16, qnn=QnnArch("ang_ry"), head="mlp"
            )
        with pytest.raises(ValueError):
            ModelConfig(family="classical", preproc="conv0", latent_dim=16)  # no head
        with pytest.raises(ValueError):
            ModelConfig(
                family="classical", preproc="conv0", latent_dim=16, head="mlp", tanh_pi=True
            )
        with pytest.raises(ValueError):
            ModelConfig(
                family="hybrid",
                preproc="conv0",
                latent_dim=16,
                tanh_pi=True,
                qnn=QnnArch("amp_gen"),  # tanh_pi needs angle encoding
            )
        with pytest.raises(ValueError):
            ModelConfig(family="quantum", preproc="conv0", latent_dim=16, head="mlp")
        with pytest.raises(ValueError):
            ModelConfig(family="classical", preproc="vgg", latent_dim=16, head="mlp")
        with pytest.raises(ValueError):
            ModelConfig(family="classical", preproc="conv0", latent_dim=64, head="mlp")


class TestExpandGrid:
    def test_default_grid_is_150(self):
        configs = expand_grid({})
        assert len(configs) == 150
        groups = {}
        for c in configs:
            groups[c.group] = groups.get(c.group, 0) + 1
        assert groups == {"Ang-RY": 48, "Ang-Arb": 48, "Amp-Gen": 24, "QCNN": 6, "classical": 24}
        hashes = {c.config_hash() for c in configs}
        labels = {c.label for c in configs}
        assert len(hashes) == 150 and len(labels) == 150

    def test_restricted_axes(self):
        assert len(expand_grid({"families": "hybrid", "qnn": "amp_gen"})) == 24
        assert len(expand_grid({"families": "hybrid", "qnn": "qcnn"})) == 6
        assert len(expand_grid({"families": "classical"})) == 24
        single = expand_grid(
            {
                "families": "hybrid",
                "qnn": "amp_gen",
                "preproc": "conv0",
                "latent": 16,
                "entangle": True,
                "observable": "global",
            }
        )
        assert len(single) == 1
        assert single[0].label == "hybrid-amp_gen-conv0-l16-ent-global"

    def test_seed_propagates(self):
        configs = expand_grid({"families": "classical", "seed": 9})
        assert all(c.seed == 9 for c in configs)

    def test_empty_axis_rejected(self):
        with pytest.raises(ValueError):
            expand_grid({"preproc": []})
        with pytest.raises(ValueError):
            expand_grid({"families": []})


class TestRunConfigParsing:
    def test_full_syntax(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(
            "# benchmark setup\n"
            "dataset = blobs\n"
            "latent = 16, 256   # both sizes\n"
            "entangle = true, false\n"
            "epochs = 40\n"
            "blobs_separation = 2.5\n"
            "preproc = conv0\n"
            "\n"
        )
        cfg = parse_run_config(p)
        assert cfg == {
            "dataset": "blobs",
            "latent": [16, 256],
            "entangle": [True, False],
            "epochs": 40,
            "blobs_separation": 2.5,
            "preproc": "conv0",
        }

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("dataset blobs\n")
        with pytest.raises(ValueError, match="line" if False else "run.cfg:1"):
            parse_run_config(p)

    def test_dataset_dispatch(self, tmp_path):
        ds = load_run_dataset({"dataset": "blobs", "blobs_n": 10, "blobs_dim": 3}, tmp_path)
        assert ds.samples.shape == (10, 3)
        ds = load_run_dataset({"dataset": "synth_beats", "beats_n": 12}, tmp_path)
        assert ds.samples.shape == (12, 360)
        with pytest.raises(ValueError):
            load_run_dataset({"dataset": "imagenet"}, tmp_path)
        with pytest.raises(ValueError):
            load_run_dataset({"dataset": "npz"}, tmp_path)

    def test_default_batch_size(self):
        assert default_batch_size(synth_blobs(8, 5, 1.0, 0)) == 256
        from hqnnbench.data import Dataset

        ds = Dataset(np.zeros((4, 1, 8, 8)), np.array([0, 1, 0, 1]))
        assert default_batch_size(ds) == 64


class TestRunExperiment:
    def test_classical_separable_blobs(self):
        ds = synth_blobs(128, 8, 10.0, seed=0)
        folds = make_folds(ds, 2, seed=0)
        cfg = ModelConfig(family="classical", preproc="conv0", latent_dim=16, head="none")
        res = run_experiment(cfg, ds, folds, epochs=10, batch_size=32)
        assert res.aggregate is not None
        assert res.aggregate["roc_auc"] > 0.99
        assert len(res.per_fold) == 2
        assert all(e["aborted"] is None for e in res.per_fold)
        assert all(len(e["epochs"]) == 10 for e in res.per_fold)
        # fold bests dominate every epoch value
        for e in res.per_fold:
            for m in ("roc_auc", "avg_precision", "balanced_acc"):
                assert e["best"][m] == max(ep[m] for ep in e["epochs"])

    def test_hybrid_runs_and_improves(self):
        ds = synth_blobs(64, 16, 8.0, seed=1)
        folds = make_folds(ds, 2, seed=1)
        cfg = ModelConfig(
            family="hybrid",
            preproc="conv0",
            latent_dim=16,
            qnn=QnnArch("ang_ry", True, "global"),
        )
        res = run_experiment(cfg, ds, folds, epochs=15, batch_size=8)
        assert res.aggregate is not None
        assert res.aggregate["roc_auc"] > 0.6  # clearly beyond chance on a tiny budget
        assert all(t >= 0.0 for t in res.wall_times)

    def test_argument_validation(self):
        ds = synth_blobs(16, 4, 1.0, seed=2)
        folds = make_folds(ds, 2, seed=2)
        cfg = ModelConfig(family="classical", preproc="conv0", latent_dim=16, head="none")
        with pytest.raises(ValueError):
            run_experiment(cfg, ds, folds, epochs=0, batch_size=8)
        with pytest.raises(ValueError):
            run_experiment(cfg, ds, folds, epochs=1, batch_size=0)
        with pytest.raises(ValueError):
            run_experiment(cfg, ds, folds, epochs=1, batch_size=8, aggregate="max")
        with pytest.raises(ValueError):
            run_experiment(cfg, ds, folds, epochs=1, batch_size=8, fold_order=[0, 0])

    def test_fold_order_does_not_change_results(self):
        ds = synth_blobs(48, 6, 4.0, seed=3)
        folds = make_folds(ds, 3, seed=3)
        cfg = ModelConfig(family="classical", preproc="conv0", latent_dim=16, head="fcnone")
        a = run_experiment(cfg, ds, folds, epochs=3, batch_size=16)
        b = run_experiment(cfg, ds, folds, epochs=3, batch_size=16, fold_order=[2, 0, 1])
        assert a.to_json_dict() == b.to_json_dict()

    def test_median_aggregate(self):
        ds = synth_blobs(48, 6, 4.0, seed=4)
        folds = make_folds(ds, 3, seed=4)
        cfg = ModelConfig(family="classical", preproc="conv0", latent_dim=16, head="none")
        res = run_experiment(cfg, ds, folds, epochs=2, batch_size=16, aggregate="median")
        fold_bests = sorted(e["best"]["roc_auc"] for e in res.per_fold)
        assert res.aggregate["roc_auc"] == fold_bests[1]

    def test_aborted_fold_keeps_diagnostic_and_rest_aggregate(self, monkeypatch):
        ds = synth_blobs(32, 4, 6.0, seed=5)
        folds = make_folds(ds, 2, seed=5)
        cfg = ModelConfig(family="classical", preproc="conv0", latent_dim=16, head="none")
        real = harness._train_fold
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 1:
                raise EncodingError("zero-norm latent vector")
            return real(*args, **kwargs)

        monkeypatch.setattr(harness, "_train_fold", flaky)
        res = run_experiment(cfg, ds, folds, epochs=2, batch_size=16)
        assert res.per_fold[0]["aborted"].startswith("EncodingError")
        assert res.per_fold[0]["best"] is None
        assert res.per_fold[1]["aborted"] is None
        assert res.aggregate == res.per_fold[1]["best"]

    def test_all_folds_aborted_gives_null_aggregate(self, monkeypatch):
        ds = synth_blobs(32, 4, 6.0, seed=6)
        folds = make_folds(ds, 2, seed=6)
        cfg = ModelConfig(family="classical", preproc="conv0", latent_dim=16, head="none")
        monkeypatch.setattr(
            harness, "_train_fold", lambda *a, **k: (_ for _ in ()).throw(FloatingPointError("nan"))
        )
        res = run_experiment(cfg, ds, folds, epochs=2, batch_size=16)
        assert res.aggregate is None
        assert all(e["aborted"].startswith("FloatingPointError") for e in res.per_fold)

    def test_json_dict_shape(self):
        ds = synth_blobs(32, 4, 6.0, seed=7)
        folds = make_folds(ds, 2, seed=7)
        cfg = ModelConfig(family="classical", preproc="conv0", latent_dim=16, head="none")
        res = run_experiment(cfg, ds, folds, epochs=1, batch_size=16)
        d = res.to_json_dict()
        assert set(d) == {"config", "config_hash", "label", "group", "per_fold", "aggregate"}
        assert "wall_times" not in json.dumps(d)
        json.dumps(d)  # serializable
        assert d["config_hash"] == cfg.config_hash()


class TestHybridModelPlumbing:
    def test_parameters_cover_all_three_stages(self):
        rng = np.random.default_rng(0)
        cfg = ModelConfig(
            family="hybrid", preproc="conv0", latent_dim=16, qnn=QnnArch("ang_ry", True, "local")
        )
        model = build_model(cfg, (12,), rng)
        assert isinstance(model, HybridModel)
        n_pre = 12 * 16 + 16
        n_theta = 48
        n_head = 4 * 1 + 1  # local observable feeds a 4-wide linear map
        assert sum(p.value.size for p in model.parameters()) == n_pre + n_theta + n_head
        logits = model.forward(rng.normal(size=(5, 12)))
        assert logits.shape == (5,)

    def test_classical_model(self):
        rng = np.random.default_rng(1)
        cfg = ModelConfig(family="classical", preproc="conv0", latent_dim=16, head="fcrelu")
        model = build_model(cfg, (12,), rng)
        logits = model.forward(rng.normal(size=(3, 12)))
        assert logits.shape == (3,)


def fake_row(config: ModelConfig, score: float | None) -> dict:
    agg = (
        None
        if score is None
        else {"roc_auc": score, "avg_precision": score, "balanced_acc": score}
    )
    return {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "label": config.label,
        "group": config.group,
        "per_fold": [],
        "aggregate": agg,
    }


class TestAggregateTables:
    def grid_rows(self, scores):
        amp = expand_grid(
            {
                "families": "hybrid",
                "qnn": "amp_gen",
                "preproc": ["conv0", "conv1"],
                "latent": 16,
                "entangle": True,
                "observable": "global",
            }
        )
        cls = expand_grid(
            {"families": "classical", "preproc": ["conv0", "conv1"], "latent": 16, "heads": "none"}
        )
        configs = sorted(amp + cls, key=lambda c: c.label)
        assert len(configs) == 4
        return [fake_row(c, s) for c, s in zip(configs, scores)]

    def test_table_medians_and_groups(self):
        # labels sort classical first: cls-conv0, cls-conv1, amp-conv0, amp-conv1
        rows = self.grid_rows([0.80, 0.85, 0.95, 0.90])
        table1, comparisons, boxplot = aggregate_tables(rows)
        t = {(r["group"], r["metric"]): r for r in table1}
        assert t[("Amp-Gen", "roc_auc")]["median"] == 0.925
        assert t[("classical", "roc_auc")]["median"] == 0.825
        assert t[("Amp-Gen", "roc_auc")]["min"] == 0.90
        assert t[("Amp-Gen", "roc_auc")]["max"] == 0.95
        assert len(boxplot) == 4
        assert {b["group"] for b in boxplot} == {"Amp-Gen", "classical"}

    def test_comparisons_axes_and_bonferroni(self):
        rows = self.grid_rows([0.80, 0.85, 0.95, 0.90])
        _, comparisons, _ = aggregate_tables(rows)
        axes = [(c["axis"], c["group_a"], c["group_b"]) for c in comparisons]
        assert ("preproc", "conv1", "conv0") in axes
        assert ("group", "classical", "Amp-Gen") in axes
        assert len(comparisons) == 2
        for c in comparisons:
            assert c["corrected_p"] == min(1.0, c["raw_p"] * len(comparisons))
            assert c["significant_at_0.05"] == (c["corrected_p"] < 0.05)
        group_row = [c for c in comparisons if c["axis"] == "group"][0]
        # fully separated 2-vs-2 groups: exact p = 2 / C(4,2)
        assert abs(group_row["raw_p"] - 1.0 / 3.0) < 1e-12
        assert group_row["n_a"] == 2 and group_row["n_b"] == 2

    def test_identical_paired_scores_give_p_one(self):
        rows = self.grid_rows([0.9, 0.9, 0.7, 0.7])
        _, comparisons, _ = aggregate_tables(rows)
        pre = [c for c in comparisons if c["axis"] == "preproc"][0]
        assert pre["raw_p"] == 1.0
        assert pre["test"] == "WilcoxonExact"

    def test_group_with_zero_completions_rejected(self):
        rows = self.grid_rows([0.9, 0.9, 0.7, 0.7])
        qcnn = expand_grid({"families": "hybrid", "qnn": "qcnn", "preproc": "conv0", "latent": 16})
        rows.append(fake_row(qcnn[0], None))
        with pytest.raises(ValueError, match="zero completed"):
            aggregate_tables(rows)

    def test_empty_rows_rejected(self):
        with pytest.raises(ValueError):
            aggregate_tables([])


TINY_RUN = {
    "dataset": "blobs",
    "blobs_n": 32,
    "blobs_dim": 8,
    "blobs_separation": 10.0,
    "families": ["hybrid", "classical"],
    "qnn": "ang_ry",
    "preproc": "conv0",
    "latent": 16,
    "tanh": False,
    "entangle": True,
    "observable": "global",
    "heads": "none",
    "folds": 2,
    "epochs": 2,
    "batch_size": 16,
}


class TestRunGrid:
    def test_outputs_and_resume(self, tmp_path):
        out = tmp_path / "out"
        rows = run_grid(dict(TINY_RUN), tmp_path, out)
        assert len(rows) == 2
        for name in ("results.jsonl", "timings.jsonl", "run_meta.json", "table1.csv",
                     "comparisons.csv", "boxplot_data.csv"):
            assert (out / name).exists(), name
        first_bytes = (out / "results.jsonl").read_bytes()
        assert len(first_bytes.splitlines()) == 2

        rows2 = run_grid(dict(TINY_RUN), tmp_path, out)  # everything cached
        assert len(rows2) == 2
        assert (out / "results.jsonl").read_bytes() == first_bytes
        meta = json.loads((out / "run_meta.json").read_text())
        assert meta["n_skipped"] == 2

    def test_bit_identical_reruns(self, tmp_path):
        a = run_grid(dict(TINY_RUN), tmp_path, tmp_path / "a")
        b = run_grid(dict(TINY_RUN), tmp_path, tmp_path / "b")
        assert (tmp_path / "a/results.jsonl").read_bytes() == (
            tmp_path / "b/results.jsonl"
        ).read_bytes()
        assert a == b

    def test_parallel_matches_serial(self, tmp_path):
        run_grid(dict(TINY_RUN), tmp_path, tmp_path / "serial", jobs=1)
        run_grid(dict(TINY_RUN), tmp_path, tmp_path / "par", jobs=2)
        assert (tmp_path / "serial/results.jsonl").read_bytes() == (
            tmp_path / "par/results.jsonl"
        ).read_bytes()

    def test_progress_callback(self, tmp_path):
        seen = []
        run_grid(dict(TINY_RUN), tmp_path, tmp_path / "out", progress=seen.append)
        assert len(seen) == 2
        assert all("config_hash" in row for row in seen)


class TestCli:
    def write_cfg(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(
            "dataset = blobs\n"
            "blobs_n = 32\n"
            "blobs_dim = 8\n"
            "blobs_separation = 10.0\n"
            "families = classical\n"
            "preproc = conv0\n"
            "latent = 16\n"
            "heads = none\n"
            "folds = 2\n"
            "batch_size = 16\n"
        )
        return p

    def test_run_and_report(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path)
        out = tmp_path / "out"
        rc = main(["run", "--config", str(cfg), "--data-dir", str(tmp_path), "--out", str(out),
                   "--epochs", "2"])
        assert rc == 0
        captured = capsys.readouterr().out
        assert "roc_auc=" in captured
        assert (out / "results.jsonl").exists()

        rc = main(["report", "--out", str(out)])
        assert rc == 0
        assert "comparisons.csv" in capsys.readouterr().out

    def test_report_without_results_fails(self, tmp_path, capsys):
        assert main(["report", "--out", str(tmp_path)]) == 1
        assert "no results" in capsys.readouterr().err

    def test_seed_override_changes_hashes(self, tmp_path):
        cfg = self.write_cfg(tmp_path)
        main(["run", "--config", str(cfg), "--data-dir", str(tmp_path), "--out",
              str(tmp_path / "s0"), "--epochs", "1"])
        main(["run", "--config", str(cfg), "--data-dir", str(tmp_path), "--out",
              str(tmp_path / "s1"), "--epochs", "1", "--seed", "1"])
        r0 = json.loads((tmp_path / "s0/results.jsonl").read_text())
        r1 = json.loads((tmp_path / "s1/results.jsonl").read_text())
        assert r0["config"]["seed"] == 0 and r1["config"]["seed"] == 1
        assert r0["config_hash"] != r1["config_hash"]

    def test_selftest_passes(self, capsys):
        assert main(["selftest"]) == 0
        assert "all checks passed" in capsys.readouterr().out
