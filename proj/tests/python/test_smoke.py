import os
import subprocess

import numpy as np
import pytest

import dynformer as dfm


def tiny_config(dataset, out_dir, epochs=2):
    return (
        "[run]\npreset=2ddarcy-tiny\n"
        f"dataset={dataset}\nout_dir={out_dir}\n"
        f"n_train=4\nn_test=2\nepochs={epochs}\nbatch_size=2\neval_workers=1\n"
        "[model]\nd_n=8\nmodes=6,6\n"
    )


@pytest.fixture(scope="module")
def darcy_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "darcy.bin"
    dfm.generate_dataset("2ddarcy", "smoke", 123).save(str(path), f64=True)
    return path


def test_score_endpoints():
    assert dfm.log_minmax_scores([1e-4, 1e-2]) == pytest.approx([100.0, 0.0])
    assert dfm.log_minmax_scores([1e-4, 1e-3, 1e-2])[1] == pytest.approx(50.0)
    with pytest.raises(dfm.ValidationError):
        dfm.log_minmax_scores([1e-3])


def test_projections_split_the_field():
    u = np.random.default_rng(0).standard_normal((2, 12, 10, 3))
    low = dfm.project_large_scale(u, (5, 3))
    high = dfm.project_small_scale(u, (5, 3))
    np.testing.assert_allclose(low + high, u, atol=1e-12)
    np.testing.assert_allclose(dfm.project_large_scale(low, (5, 3)), low, atol=1e-12)
    # Retained modes of the low part match numpy's FFT.
    spec = np.fft.fft2(u, axes=(1, 2))
    np.testing.assert_allclose(np.fft.fft2(low, axes=(1, 2))[:, :3, :2], spec[:, :3, :2], atol=1e-10)


def test_kronecker_mix_matches_dense_kron():
    rng = np.random.default_rng(1)
    k1, k2 = rng.standard_normal((4, 4)), rng.standard_normal((3, 3))
    v = rng.standard_normal((4, 3, 2))
    dense = np.kron(k1, k2) @ v.reshape(12, 2)
    np.testing.assert_allclose(dfm.kronecker_mix(k1, k2, v), dense.reshape(4, 3, 2), rtol=1e-12, atol=1e-12)


def test_relative_mse_formula():
    rng = np.random.default_rng(2)
    pred, truth = rng.standard_normal((3, 5, 5, 1)), rng.standard_normal((3, 5, 5, 1))
    per = [np.sum((p - t) ** 2) / np.sum(t**2) for p, t in zip(pred, truth)]
    assert dfm.relative_mse(pred, truth) == pytest.approx(np.mean(per), rel=1e-12)


def test_generation_is_deterministic_with_expected_layout():
    a = dfm.generate_dataset("2ddarcy", "smoke", 7)
    b = dfm.generate_dataset("2ddarcy", "smoke", 7)
    assert a.inputs().shape == (6, 1, 1, 17, 17)
    np.testing.assert_array_equal(a.inputs(), b.inputs())
    np.testing.assert_array_equal(a.targets(), b.targets())
    assert set(np.unique(a.inputs())) <= {3.0, 12.0}
    with pytest.raises(dfm.ValidationError):
        dfm.generate_dataset("3dsw", "smoke", 1)


def test_model_forward_shape():
    model = dfm.Model(dfm.run_preset("2ddarcy-tiny"), seed=3)
    out = model.predict(np.zeros((2, 16, 16, 1)))
    assert out.shape == (2, 16, 16, 1)
    assert np.all(np.isfinite(out))
    assert model.parameter_count == dfm.cost_account(dfm.run_preset("2ddarcy-tiny"), 16, 16)["params"]


def test_train_then_evaluate_checkpoint(darcy_file, tmp_path):
    records = dfm.train(tiny_config(darcy_file, tmp_path / "run"))
    assert [r["epoch"] for r in records] == [1, 2]
    assert all(np.isfinite(r["train_loss"]) for r in records)
    eps = dfm.evaluate_checkpoint(str(tmp_path / "run" / "checkpoint.bin"))
    assert np.mean(eps) == pytest.approx(records[-1]["test_eps"], rel=1e-12)
    rerun = dfm.train(dfm.normalize_config((tmp_path / "run" / "manifest.ini").read_text()), write_outputs=False)
    assert [r["train_loss"] for r in rerun] == [r["train_loss"] for r in records]


def test_persistence_baseline_matches_numpy(tmp_path):
    data = dfm.generate_dataset("2dns", "smoke", 5)
    path = tmp_path / "ns.bin"
    data.save(str(path), f64=True)
    cfg = (
        "[run]\npreset=2dns-tiny\n"
        f"dataset={path}\nout_dir={tmp_path / 'run'}\nn_train=4\nn_test=2\nepochs=1\nbatch_size=4\n"
        "[model]\nd_n=4\nmodes=4,4\n"
    )
    dfm.train(cfg)
    eps = dfm.evaluate_checkpoint(str(tmp_path / "run" / "checkpoint.bin"), all=True, persistence=True)
    x, y = data.inputs(), data.targets()
    last = x[:, :, -1:, :, :]
    expected = np.sum((last - y) ** 2, axis=(1, 2, 3, 4)) / np.sum(y**2, axis=(1, 2, 3, 4))
    np.testing.assert_allclose(eps, expected, rtol=1e-12)


def test_invalid_config_lists_problems():
    with pytest.raises(dfm.ValidationError, match="2 problem"):
        dfm.normalize_config("[run]\nepochs=-1\nbogus=1\n")


def test_fast_invariants_pass():
    for cid in (2, 3, 6, 9):
        report = dfm.run_criterion(cid)
        assert report["passed"], report


cli = os.environ.get("DYNFORMER_CLI")


@pytest.mark.skipif(not cli, reason="CLI path not provided")
def test_cli_exit_codes(tmp_path):
    ok = subprocess.run([cli, "score", "1e-4", "1e-2"], capture_output=True, text=True)
    assert ok.returncode == 0
    assert ok.stdout.split() == ["1e-04", "100", "0.01", "0"]
    assert subprocess.run([cli, "score", "1e-3"], capture_output=True).returncode == 1
    assert subprocess.run([cli, "gen", "3dsw"], capture_output=True).returncode == 1
    missing = subprocess.run([cli, "train", "--preset", "2dns-tiny", "--out", str(tmp_path)], capture_output=True,
                             cwd=tmp_path)
    assert missing.returncode == 3
