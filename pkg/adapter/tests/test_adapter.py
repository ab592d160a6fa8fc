import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest
import torch

from poolforge_adapter import (
    AdapterConfig,
    build_model,
    calibrated_distributions,
    export_artifacts,
    run_exchange,
)

from conftest import toy_texts


def dir_hash(path):
    h = hashlib.sha256()
    for f in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(path)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def labeled_pairs(n=8):
    _, labels = toy_texts()
    ids = list(range(0, 20, 20 // n))[:n]
    return [(i, int(labels[i])) for i in ids]


@pytest.fixture(scope="module")
def exported(adapter_config_path, tmp_path_factory):
    """One trained export shared by the parity tests."""
    out = tmp_path_factory.mktemp("export") / "artifacts"
    cfg = AdapterConfig.load(adapter_config_path)
    stats = export_artifacts(cfg, labeled_pairs(), out)
    return cfg, out, stats


class TestProtocol:
    def test_subprocess_round_trip(self, adapter_config_path, tmp_path):
        exchange = tmp_path / "exchange"
        exchange.mkdir()
        request = {"round": 0, "labeled": labeled_pairs(),
                   "artifacts_out": "artifacts"}
        (exchange / "request.json").write_text(json.dumps(request))
        proc = subprocess.run(
            [sys.executable, "-m", "poolforge_adapter",
             "--config", str(adapter_config_path), str(exchange)],
            capture_output=True, text=True, timeout=600,
        )
        assert proc.returncode == 0, proc.stderr
        response = json.loads((exchange / "response.json").read_text())
        assert response["status"] == "ok"
        assert 0.0 <= response["eval_accuracy"] <= 1.0

        # the engine's own validator must accept the export
        check = subprocess.run(
            [sys.executable, "-m", "poolforge.cli", "validate",
             "--pool", str(exchange / "artifacts")],
            capture_output=True, text=True, timeout=120,
        )
        assert check.returncode == 0, check.stderr
        assert "n=20" in check.stdout and "d=32" in check.stdout

    def test_engine_loads_export(self, exported):
        from poolforge import load_artifacts

        _, out, _ = exported
        artifacts = load_artifacts(out)
        assert artifacts.n == 20 and artifacts.d == 32 and artifacts.c == 2
        assert artifacts.texts is not None
        assert artifacts.oracle_labels is not None
        sums = artifacts.word_probs.astype(np.float64).sum(axis=1)
        assert np.all(sums <= 1.0 + 1e-6)  # individual word probs, not renormalized

    def test_rerun_is_idempotent(self, adapter_config_path, tmp_path):
        results = []
        for name in ("a", "b"):
            exchange = tmp_path / name
            exchange.mkdir()
            request = {"round": 1, "labeled": labeled_pairs(),
                       "artifacts_out": "artifacts"}
            (exchange / "request.json").write_text(json.dumps(request))
            run_exchange(adapter_config_path, exchange)
            results.append(dir_hash(exchange / "artifacts"))
        assert results[0] == results[1]

    def test_unknown_labeled_id_fails(self, adapter_config_path, tmp_path):
        cfg = AdapterConfig.load(adapter_config_path)
        with pytest.raises(ValueError, match="not present"):
            export_artifacts(cfg, [(999, 0)], tmp_path / "x")


class TestParity:
    def test_calibration_dual_implementation(self, exported):
        from poolforge import calibrate_matrix, load_artifacts
        from poolforge.calibration import build_support_set, estimate_prior

        _, out, _ = exported
        word_probs = load_artifacts(out).word_probs.astype(np.float64)
        prior = estimate_prior(word_probs, build_support_set(word_probs, 100))
        engine = calibrate_matrix(word_probs, prior)
        adapter_side = calibrated_distributions(word_probs, k=100)
        assert float(np.abs(engine - adapter_side).max()) < 1e-5

    def test_fusion_cross_implementation(self, exported):
        from poolforge import fuse, load_artifacts, load_fusion_params

        cfg, out, _ = exported
        params = load_fusion_params(out)
        artifacts = load_artifacts(out)

        # rebuild the torch module from the exported blobs so both sides
        # evaluate the same weights
        from poolforge_adapter.blobs import read_blob

        model = build_model(cfg)

        fusion_dir = out / "fusion"
        manifest = json.loads((fusion_dir / "manifest.json").read_text())
        blob = {b["name"]: b for b in manifest["blobs"]}
        with torch.no_grad():
            for name in ("task_prompt", "gen_w1", "gen_b1", "gen_w2", "gen_b2",
                         "w_q", "w_k", "w_v", "out_proj"):
                arr = read_blob(fusion_dir / blob[name]["filename"], "f32",
                                blob[name]["shape"])
                getattr(model.fusion, name).copy_(
                    torch.tensor(arr, dtype=torch.float32)
                )

        for row in (0, 7, 13):
            e32 = artifacts.encoder_features[row]
            torch_out = model.fusion(
                torch.tensor(e32, dtype=torch.float32).unsqueeze(0)
            )[0].detach().numpy()
            engine_out = fuse(params, e32.astype(np.float64))
            denom = max(float(np.abs(engine_out).max()), 1e-30)
            assert float(np.abs(torch_out - engine_out).max()) / denom < 1e-4

    def test_sample_prompt_changes_with_input(self, exported):
        cfg, out, _ = exported
        model = build_model(cfg)
        e1 = torch.randn(1, 32)
        e2 = torch.randn(1, 32)
        p1 = model.fusion(e1).detach()
        p2 = model.fusion(e2).detach()
        assert not torch.allclose(p1, p2)


class TestTraining:
    def test_full_finetune_fits_labeled_set(self, tiny_model_dir, toy_pool_dir,
                                            tmp_path):
        cfg = AdapterConfig(
            model_path=str(tiny_model_dir), pool_dir=str(toy_pool_dir),
            label_words=["alpha", "beta"], epochs=25, batch_size=8,
            learning_rate=5e-3, prompt_learning_rate=1e-2,
            task_prompt_rows=2, sample_prompt_rows=1, generator_hidden=8,
            attention_heads=2, max_text_tokens=16, seed=3,
            train_base_model=True,
        )
        stats = export_artifacts(cfg, labeled_pairs(), tmp_path / "out")
        assert stats["train_accuracy"] >= 0.75


class TestLoopIntegration:
    def test_one_round_through_engine_cli(self, adapter_config_path,
                                          toy_pool_dir, tmp_path):
        run_dir = tmp_path / "run"
        adapter_cmd = (
            f"{sys.executable} -m poolforge_adapter --config {adapter_config_path}"
        )
        proc = subprocess.run(
            [sys.executable, "-m", "poolforge.cli", "loop",
             "--pool", str(toy_pool_dir), "--out", str(run_dir),
             "--rounds", "1", "--initial", "8", "--b", "4",
             "--seed", "3", "--adapter-cmd", adapter_cmd],
            capture_output=True, text=True, timeout=600,
        )
        assert proc.returncode == 0, proc.stderr + proc.stdout
        state = json.loads((run_dir / "state.json").read_text())
        assert state["round"] == 1
        assert len(state["labeled"]) == 12
        next_manifest = json.loads(
            (run_dir / "artifacts" / "1" / "manifest.json").read_text()
        )
        assert next_manifest["n"] == 20 and next_manifest["d"] == 32
        assert state["accuracies"][0] is not None
