import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from ssvdd import datasets
from ssvdd.cli import build_parser, main, read_embedded_config
from ssvdd.subspace import SsvddModel


@pytest.fixture
def iris(tmp_path):
    dst = tmp_path / "iris.csv"
    shutil.copy(datasets.path("iris"), dst)
    return dst


def _train(iris, out, *extra):
    args = ["train", "--input", str(iris), "--label", "class", "--target", "Iris-virginica",
            "--output", str(out), *extra]
    return main(args)


def _read_csv(path):
    lines = path.read_text().strip().split("\n")
    assert lines[0].startswith("# config: ")
    return lines[1].split(","), [l.split(",") for l in lines[2:]]


def test_train_happy_path(iris, tmp_path):
    out = tmp_path / "m.json"
    rc = _train(iris, out, "--mode", "linear", "--psi", "2", "--d", "2", "--C", "0.1",
                "--beta", "1", "--eta", "0.1", "--kmax", "50", "--seed", "7")
    assert rc == 0
    model = SsvddModel.from_json(out.read_text())
    assert model.projection.shape == (2, 4)
    rep = json.loads((tmp_path / "m.report.json").read_text())
    assert len(rep["report"]["objective_trace"]) == 49
    assert rep["report"]["boundary_sv"] + rep["report"]["outlier_sv"] >= 1
    assert json.loads(out.read_text())["run_config"]["settings"]["seed"] == 7


def test_d_larger_than_features(iris, tmp_path, capsys):
    rc = _train(iris, tmp_path / "m.json", "--psi", "1", "--d", "10")
    assert rc == 2
    assert "d <= D" in capsys.readouterr().err


def test_sigma_scale(iris, tmp_path):
    out = tmp_path / "m.json"
    assert _train(iris, out, "--mode", "kernel", "--sigma-scale", "1", "--psi", "1",
                  "--d", "2", "--kmax", "3") == 0
    doc = json.loads(out.read_text())
    from ssvdd.data import Standardizer, load_csv, mean_pairwise_distance

    ds = load_csv(iris, "class")
    Xs = Standardizer.fit(ds.features).apply(ds.features)
    Xt = Xs[ds.labels == ds.class_index("Iris-virginica")]
    assert doc["params"]["kernel"]["sigma"] == pytest.approx(mean_pairwise_distance(Xt))


def test_sigma_flags_exclusive(iris, tmp_path):
    with pytest.raises(SystemExit) as exc:
        _train(iris, tmp_path / "m.json", "--mode", "kernel", "--sigma", "1",
               "--sigma-scale", "1")
    assert exc.value.code == 2


def test_scientific_notation(iris, tmp_path):
    assert _train(iris, tmp_path / "m.json", "--C", "1e-1", "--kmax", "5e0") == 0


def test_predict_on_training_file(iris, tmp_path):
    model = tmp_path / "m.json"
    _train(iris, model, "--psi", "3", "--d", "2", "--C", "0.1", "--beta", "0.1")
    out = tmp_path / "p.csv"
    assert main(["predict", "--model", str(model), "--input", str(iris), "--label", "class",
                 "--output", str(out)]) == 0
    header, rows = _read_csv(out)
    assert header == ["row_id", "dist_sq", "r_squared", "label"]
    assert len(rows) == 150
    m = SsvddModel.from_json(model.read_text())
    # targets are rows 100..149 of the file, in order
    d2 = np.array([float(r[1]) for r in rows])[100:]
    r2 = float(rows[0][2])
    assert m.solution.boundary_sv.size > 0
    np.testing.assert_allclose(d2[m.solution.boundary_sv], r2, rtol=1e-6)


def test_predict_empty_query(iris, tmp_path):
    model = tmp_path / "m.json"
    _train(iris, model)
    q = tmp_path / "q.csv"
    q.write_text("a,b,c,d,class\n")
    out = tmp_path / "p.csv"
    assert main(["predict", "--model", str(model), "--input", str(q), "--label", "class",
                 "--output", str(out)]) == 0
    header, rows = _read_csv(out)
    assert header == ["row_id", "dist_sq", "r_squared", "label"] and rows == []


def test_predict_schema_mismatch(iris, tmp_path):
    model = tmp_path / "m.json"
    _train(iris, model)
    q = tmp_path / "q.csv"
    q.write_text("1,2,3\n")
    assert main(["predict", "--model", str(model), "--input", str(q),
                 "--output", str(tmp_path / "p.csv")]) == 3


def test_predict_standardizes_raw_query(iris, tmp_path):
    model = tmp_path / "m.json"
    _train(iris, model, "--psi", "1", "--d", "2")
    m = SsvddModel.from_json(model.read_text())
    q = tmp_path / "q.csv"
    q.write_text("6.5,3.0,5.5,1.8\n")
    out = tmp_path / "p.csv"
    main(["predict", "--model", str(model), "--input", str(q), "--output", str(out)])
    _, rows = _read_csv(out)
    x = (np.array([6.5, 3.0, 5.5, 1.8]) - m.standardizer.mean) / m.standardizer.scale
    y = m.projection @ x
    expected = float(np.sum((y - m.center) ** 2))
    assert float(rows[0][1]) == pytest.approx(expected, rel=1e-10)


def test_missing_model_is_data_error(tmp_path, iris):
    assert main(["predict", "--model", str(tmp_path / "nope.json"), "--input", str(iris),
                 "--output", str(tmp_path / "p.csv")]) == 3


def test_malformed_input_exit_code(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,class\n1,x,A\n")
    assert main(["train", "--input", str(bad), "--output", str(tmp_path / "m.json")]) == 3


def test_infeasible_c_exit_code(iris, tmp_path):
    assert _train(iris, tmp_path / "m.json", "--C", "0.01") == 2


def test_project_haberman(tmp_path):
    out = tmp_path / "proj.csv"
    rc = main(["project", "--dataset", "haberman", "--mode", "kernel", "--psi", "1", "--d", "2",
               "--C", "0.1", "--sigma-scale", "1", "--kmax", "5", "--output", str(out)])
    assert rc == 0
    header, rows = _read_csv(out)
    assert len(rows) == 306
    assert header[:6] == ["row_id", "z1", "z2", "label", "dist_sq", "r_squared"]
    assert {r[3] for r in rows} == {"target", "outlier"}


def test_project_rejects_other_dimensions(tmp_path):
    assert main(["project", "--dataset", "haberman", "--psi", "1", "--d", "3",
                 "--output", str(tmp_path / "p.csv")]) == 2
    model = tmp_path / "m3.json"
    assert main(["train", "--dataset", "haberman", "--psi", "1", "--d", "3", "--kmax", "3",
                 "--output", str(model)]) == 0
    assert main(["project", "--dataset", "haberman", "--model", str(model),
                 "--output", str(tmp_path / "p.csv")]) == 2


def test_project_all_target_data(tmp_path):
    data = tmp_path / "toy.csv"
    rng = np.random.default_rng(0)
    rows = "\n".join(f"{a},{b},{c},only" for a, b, c in rng.normal(size=(12, 3)))
    data.write_text("x,y,z,class\n" + rows + "\n")
    out = tmp_path / "p.csv"
    assert main(["project", "--input", str(data), "--psi", "1", "--d", "2", "--C", "0.5",
                 "--kmax", "3", "--output", str(out)]) == 0
    _, body = _read_csv(out)
    assert {r[3] for r in body} == {"target"}


def test_partitions_manifest(tmp_path):
    out = tmp_path / "parts.json"
    assert main(["partitions", "--dataset", "iris", "--seed", "3", "--output", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["partitions"]) == 5
    assert len(doc["partitions"][0]["train"]) == 105


def test_benchmark_single_method(tmp_path):
    out = tmp_path / "r.md"
    assert main(["benchmark", "--dataset", "iris", "--methods", "svdd-linear", "--format", "md",
                 "--output", str(out)]) == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0].startswith("<!-- config: ")
    assert len(lines) == 4 and lines[3].startswith("| svdd-linear |")


def test_benchmark_unknown_method(tmp_path):
    assert main(["benchmark", "--dataset", "iris", "--methods", "svm",
                 "--output", str(tmp_path / "r.json")]) == 2


def test_rerun_byte_identical(iris, tmp_path):
    out = tmp_path / "m.json"
    _train(iris, out, "--psi", "4", "--d", "2", "--beta", "0.01", "--kmax", "5")
    again = tmp_path / "m2.json"
    assert main(["rerun", "--from", str(out), "--output", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()
    assert (tmp_path / "m2.report.json").read_bytes() == (tmp_path / "m.report.json").read_bytes()
    assert read_embedded_config(out).subcommand == "train"


def test_env_seed(iris, tmp_path, monkeypatch):
    monkeypatch.setenv("SSVDD_SEED", "13")
    out = tmp_path / "m.json"
    _train(iris, out, "--psi", "1", "--d", "2", "--kmax", "2")
    assert json.loads(out.read_text())["params"]["seed"] == 13


def test_help_mentions_environment():
    text = build_parser().format_help()
    assert "SSVDD_SEED" in text and "SSVDD_JOBS" in text


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ssvdd.cli", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "ssvdd" in r.stdout
