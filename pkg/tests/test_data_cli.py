import csv
import json

import numpy as np
import pytest

from stiefel_ppca.cli import main
from stiefel_ppca.data import generate_synthetic, ingest_csv, read_csv_matrix, write_matrix_csv
from stiefel_ppca.errors import ConstantColumn, ParseError

SHORT = ["--chains", "2", "--warmup", "200", "--draws", "100", "--seed", "3", "--workers", "1"]


def write(path, text):
    path.write_text(text)
    return path


def read_draws(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--seed", "0"]) == 0
    return out


@pytest.fixture(scope="module")
def breast_cancer_csv(tmp_path_factory):
    datasets = pytest.importorskip("sklearn.datasets")
    bc = datasets.load_breast_cancer()
    path = tmp_path_factory.mktemp("bc") / "breast_cancer.csv"
    header = [name.replace(" ", "_") for name in bc.feature_names] + ["label"]
    write_matrix_csv(path, np.column_stack([bc.data, bc.target]), header)
    return path


@pytest.fixture(scope="module")
def run(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    code = main(["fit", "--input", str(synth_dir / "Y.csv"), "--out", str(out), "--debug"] + SHORT)
    assert code == 0
    return out


class TestIngest:
    def test_plain_matrix(self, tmp_path):
        np.testing.assert_array_equal(ingest_csv(write(tmp_path / "a.csv", "1,2\n3,4\n")), [[1, 2], [3, 4]])

    def test_header_detected(self, tmp_path):
        Y, header = read_csv_matrix(write(tmp_path / "a.csv", "x,y\n1,2\n3,4\n"))
        assert header == ["x", "y"]
        assert Y.shape == (2, 2)

    def test_standardize(self, tmp_path):
        Y = ingest_csv(write(tmp_path / "a.csv", "1,5\n3,7\n"), standardize_columns=True)
        np.testing.assert_allclose(Y[:, 0], [-1.0, 1.0])

    def test_transpose_after_standardizing(self, tmp_path):
        path = write(tmp_path / "a.csv", "1,10\n3,30\n5,20\n")
        Y = ingest_csv(path, standardize_columns=True, transpose=True)
        assert Y.shape == (2, 3)
        np.testing.assert_allclose(Y.mean(axis=1), 0.0, atol=1e-15)
        np.testing.assert_allclose(Y.std(axis=1), 1.0)

    def test_parse_error_location(self, tmp_path):
        with pytest.raises(ParseError) as info:
            ingest_csv(write(tmp_path / "a.csv", "a,b\n1,2\n3,oops\n"))
        assert (info.value.row, info.value.column) == (3, 2)

    def test_ragged_row(self, tmp_path):
        with pytest.raises(ParseError) as info:
            ingest_csv(write(tmp_path / "a.csv", "1,2\n3\n"))
        assert info.value.row == 2

    def test_constant_column(self, tmp_path):
        with pytest.raises(ConstantColumn):
            ingest_csv(write(tmp_path / "a.csv", "1,2\n1,4\n"), standardize_columns=True)

    def test_drop_columns(self, tmp_path):
        path = write(tmp_path / "a.csv", "x,label,y\n1,0,2\n3,1,4\n")
        np.testing.assert_array_equal(ingest_csv(path, drop_columns=["label"]), [[1, 2], [3, 4]])
        np.testing.assert_array_equal(ingest_csv(path, drop_columns=[1]), [[1, 2], [3, 4]])
        with pytest.raises(ParseError):
            ingest_csv(path, drop_columns=["missing"])

    def test_breast_cancer_shape(self, breast_cancer_csv):
        Y = ingest_csv(breast_cancer_csv, standardize_columns=True, drop_columns=["label"])
        assert Y.shape == (569, 30)


class TestSynthetic:
    def test_deterministic(self):
        a, ta = generate_synthetic(seed=4)
        b, tb = generate_synthetic(seed=4)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(ta.U, tb.U)
        assert not np.array_equal(a, generate_synthetic(seed=5)[0])

    def test_files_identical_on_rerun(self, tmp_path):
        for name in ("a", "b"):
            assert main(["synth", "--out", str(tmp_path / name), "--seed", "2"]) == 0
        for f in ("Y.csv", "truth.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_covariance_converges(self):
        Y, truth = generate_synthetic(N=100_000, D=5, Q=1, sigma=(1.0,), noise_sd=0.0, seed=1)
        cov = Y.T @ Y / Y.shape[0]
        assert np.linalg.norm(cov - truth.U @ truth.U.T) < 0.05

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            generate_synthetic(sigma=(1.0, 3.0))
        with pytest.raises(ValueError):
            generate_synthetic(sigma=(1.0,))

    def test_truth_file(self, synth_dir):
        truth = json.loads((synth_dir / "truth.json").read_text())
        assert truth["sigma"] == [3.0, 1.0]
        assert truth["seed"] == 0
        assert ingest_csv(synth_dir / "Y.csv").shape == (150, 5)


class TestFit:
    def test_draws_layout(self, run):
        header, table = read_draws(run / "draws.csv")
        W = [f"W_{i}_{j}" for i in range(5) for j in range(2)]
        mu = [f"mu_{d}" for d in range(1, 6)]
        assert header == ["chain", "draw", "logp"] + W + ["sigma_1", "sigma_2"] + mu + ["sigma_noise"]
        assert table.shape == (200, len(header))
        assert set(table[:, 0]) == {0, 1}
        # draws are sign-fixed: first row of U (and so of W) is non-negative
        assert np.all(table[:, 3:5] >= 0)

    def test_summary_and_diagnostics(self, run):
        summary = json.loads((run / "summary.json").read_text())
        assert set(summary["sigma_1"]) == {"mean", "sd", "q2_5", "q50", "q97_5", "rhat", "ess"}
        assert abs(summary["sigma_1"]["mean"] - 3.0) < 0.5
        diag = json.loads((run / "diagnostics.json").read_text())
        assert diag["schema_version"] == 1
        assert len(diag["chains"]) == 2
        assert {"rhat", "ess", "divergences"} <= set(diag)
        assert all(c["total_leapfrog"] > 0 for c in diag["chains"])
        assert (run / "raw_draws.csv").exists()
        assert (run / "summary.csv").read_text().startswith("parameter,mean")

    def test_metadata_replay(self, run, tmp_path):
        meta = json.loads((run / "metadata.json").read_text())
        assert meta["seed"] == 3 and meta["config"]["model"] == "ppca-householder"
        assert {"numpy", "scipy", "stiefel_ppca"} <= set(meta["versions"])
        out = tmp_path / "replay"
        assert main(["fit", "--replay", str(run / "metadata.json"), "--out", str(out), "--workers", "1"]) == 0
        assert (out / "draws.csv").read_bytes() == (run / "draws.csv").read_bytes()

    def test_diag_subcommand(self, run, tmp_path, capsys):
        assert main(["diag", "--draws", str(run / "draws.csv"), "--out", str(tmp_path)]) == 0
        printed = json.loads(capsys.readouterr().out)
        original = json.loads((run / "diagnostics.json").read_text())
        recomputed = json.loads((tmp_path / "diagnostics.json").read_text())
        assert recomputed["rhat"] == pytest.approx(original["rhat"])
        assert printed["max_rhat"] == pytest.approx(max(original["rhat"].values()))

    def test_test_mode_requires_seed(self, synth_dir, tmp_path, capsys):
        code = main(["fit", "--input", str(synth_dir / "Y.csv"), "--out", str(tmp_path), "--test-mode"])
        assert code == 1
        assert "seed" in json.loads(capsys.readouterr().err)["message"]

    def test_error_json(self, tmp_path, capsys):
        bad = write(tmp_path / "bad.csv", "1,2\n3,x\n")
        out = tmp_path / "out"
        assert main(["fit", "--input", str(bad), "--out", str(out)] + SHORT) == 1
        err = json.loads((out / "error.json").read_text())
        assert err["error"] == "ParseError" and err["row"] == 2 and err["column"] == 2
        assert json.loads(capsys.readouterr().err) == err

    def test_gplvm_fit(self, synth_dir, tmp_path):
        args = ["fit", "--input", str(synth_dir / "Y.csv"), "--out", str(tmp_path), "--model",
                "gplvm-householder", "--transpose", "--standardize"] + SHORT
        assert main(args) == 0
        header, table = read_draws(tmp_path / "draws.csv")
        assert header[3] == "X_0_0" and "sigma_2" in header


class TestClosedForm:
    def test_ml(self, synth_dir, tmp_path, capsys):
        assert main(["ml", "--input", str(synth_dir / "Y.csv"), "--out", str(tmp_path)]) == 0
        result = json.loads((tmp_path / "ml.json").read_text())
        assert json.loads(capsys.readouterr().out) == result
        np.testing.assert_allclose(result["sigma"], [3.0, 1.0], atol=0.2)

    def test_fit_model_pca(self, synth_dir, tmp_path):
        args = ["fit", "--model", "pca", "--input", str(synth_dir / "Y.csv"), "--out", str(tmp_path)]
        assert main(args) == 0
        proj = ingest_csv(tmp_path / "projections.csv")
        assert proj.shape == (150, 2)
        np.testing.assert_allclose(np.cov(proj, rowvar=False, bias=True), np.eye(2), atol=1e-8)
        assert json.loads((tmp_path / "metadata.json").read_text())["config"]["model"] == "pca"

    def test_breast_cancer_pca(self, breast_cancer_csv, tmp_path):
        args = ["pca", "--input", str(breast_cancer_csv), "--standardize",
                "--drop-columns", "label", "--out", str(tmp_path)]
        assert main(args) == 0
        assert len(json.loads((tmp_path / "pca.json").read_text())["eigvals"]) == 30


@pytest.mark.slow
def test_standard_model_smears_rotations(synth_dir, tmp_path):
    """The standard model spreads W over rotations; WW^T is shared by both models."""
    common = ["--input", str(synth_dir / "Y.csv"), "--chains", "4", "--warmup", "500",
              "--draws", "500", "--seed", "11"]
    means, sds, grams = {}, {}, {}
    for model in ("ppca-householder", "ppca-standard"):
        out = tmp_path / model
        assert main(["fit", "--model", model, "--out", str(out)] + common) == 0
        header, table = read_draws(out / "draws.csv")
        W = table[:, 3:13].reshape(-1, 5, 2)
        sds[model] = W.std(axis=0)
        grams[model] = np.einsum("nij,nkj->ik", W, W) / W.shape[0]
    assert np.all(sds["ppca-standard"] >= 3 * sds["ppca-householder"])
    a = np.linalg.eigvalsh(grams["ppca-householder"])[-2:]
    b = np.linalg.eigvalsh(grams["ppca-standard"])[-2:]
    np.testing.assert_allclose(b, a, rtol=0.1)
