import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from transferdist.cli import main
from transferdist.dataset import LabeledDataset, write_csv
from transferdist.synthetic import binary_drift, ring_classes

FAST = ["--mc-samples", "2000", "--restarts", "1"]


@pytest.fixture
def pair(tmp_path):
    src, tgt = binary_drift(2.0, (150, 250), seed=1)
    # four raw columns so PCA has something to reduce
    r = np.random.default_rng(0)
    mix = r.normal(size=(2, 4))
    s = LabeledDataset(src.features @ mix + 0.05 * r.normal(size=(src.n, 4)), src.labels, ("a", "b", "c", "d"))
    t = LabeledDataset(tgt.features @ mix + 0.05 * r.normal(size=(tgt.n, 4)), tgt.labels, ("a", "b", "c", "d"))
    write_csv(s, tmp_path / "s.csv")
    write_csv(t, tmp_path / "t.csv")
    return str(tmp_path / "s.csv"), str(tmp_path / "t.csv")


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_report_json(pair, capsys):
    s, t = pair
    code, out, _ = run(["report", "--source", s, "--target", t, "--label-col", "y", "--prior", "0.4,0.6",
                        "--metric", "hellinger", "--seed", "7", *FAST], capsys)
    assert code == 0
    doc = json.loads(out)
    (rep,) = doc["reports"]
    assert set(rep) >= {"delta_X_given_Y", "delta_X", "delta_Y_given_X", "prior", "config"}
    assert rep["prior"]["probabilities"] == [0.4, 0.6]
    assert doc["config"]["seed"] == 7 and doc["config"]["metric"] == "hellinger"
    assert doc["preprocessing"]["pca"]["k"] == 2


def test_prior_sum_error(pair, capsys):
    s, t = pair
    with pytest.raises(SystemExit) as e:
        main(["report", "--source", s, "--target", t, "--label-col", "y", "--prior", "0.5,0.6"])
    assert e.value.code == 2
    assert "prior must sum to 1" in capsys.readouterr().err


@pytest.mark.parametrize("flag", [["--k", "0"], ["--mc-samples", "-3"], ["--seed", "-1"], ["--metric", "tv"],
                                  ["--prior-sweep", "0.4,1.5"], ["--window", "1", "--summaries", "std"]])
def test_flag_validation_exit_2(pair, capsys, flag):
    s, t = pair
    with pytest.raises(SystemExit) as e:
        main(["report", "--source", s, "--target", t, "--label-col", "y", *flag])
    assert e.value.code == 2
    assert flag[0] in capsys.readouterr().err


def test_computation_error_exit_1(pair, capsys, tmp_path):
    s, _ = pair
    code, _, err = run(["report", "--source", s, "--target", str(tmp_path / "missing.csv"), "--label-col", "y"], capsys)
    assert code == 1 and "no such file" in err


def test_prior_sweep_csv_table_layout(pair, capsys):
    s, t = pair
    code, out, _ = run(["report", "--source", s, "--target", t, "--label-col", "y",
                        "--prior-sweep", "0.40,0.90,0.99,0.999", "--format", "csv", *FAST], capsys)
    assert code == 0
    rows = list(csv.reader(out.splitlines()))
    assert rows[0] == ["distance", "P(Y)=0.4/0.6", "P(Y)=0.9/0.1", "P(Y)=0.99/0.01", "P(Y)=0.999/0.001"]
    assert [r[0] for r in rows[1:]] == ["delta_X|Y=0", "delta_X|Y=1", "delta_X", "delta_Y=0|X"]
    # likelihood rows do not depend on the prior
    assert len(set(rows[1][1:])) == 1 and len(set(rows[2][1:])) == 1


def test_multiclass_csv_layout(tmp_path, capsys):
    src, tgt = ring_classes(3, 60, shifted=1, shift=1.0, seed=0)
    write_csv(src, tmp_path / "s.csv")
    write_csv(tgt, tmp_path / "t.csv")
    code, out, _ = run(["report", "--source", str(tmp_path / "s.csv"), "--target", str(tmp_path / "t.csv"),
                        "--label-col", "y", "--format", "csv", "--pca-dims", "0", *FAST], capsys)
    assert code == 0
    rows = list(csv.reader(out.splitlines()))
    assert rows[0][:2] == ["class", "likelihood_delta_X|Y"]
    assert [r[0] for r in rows[1:]] == ["0", "1", "2"]


@pytest.mark.parametrize("cmd", [
    ["report", "--prior-sweep", "0.4,0.9"],
    ["ks-study", "--sizes", "50,100,150"],
    ["stability", "--sizes", "40,100", "--repeats", "2"],
    ["recall"],
    ["batch", "--batch-size", "50"],
])
def test_byte_identical_artifacts(pair, tmp_path, cmd):
    s, t = pair
    common = ["--source", s, "--target", t, "--label-col", "y", "--seed", "3"]
    extra = FAST if cmd[0] != "ks-study" else []
    paths = []
    for i in range(2):
        out = tmp_path / f"{cmd[0]}_{i}.json"
        assert main([*cmd, *common, *extra, "-o", str(out)]) == 0
        paths.append(out)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / f"{cmd[0]}_0.json.meta.json").exists()


def test_window_and_pca_files(pair, tmp_path, capsys):
    # windows need contiguous label runs, so write the rows sorted by label
    paths = []
    for p in pair:
        rows = list(csv.reader(open(p)))
        body = sorted(rows[1:], key=lambda r: r[-1])
        out = tmp_path / ("sorted_" + p.rsplit("/", 1)[1])
        out.write_text("\n".join(",".join(r) for r in [rows[0]] + body) + "\n")
        paths.append(str(out))
    s, t = paths
    pca = tmp_path / "pca.json"
    code, out, _ = run(["report", "--source", s, "--target", t, "--label-col", "y", "--window", "5", "--hop", "5",
                        "--save-pca", str(pca), *FAST], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["preprocessing"]["pca"]["k"] == 2
    assert doc["preprocessing"]["window"] == {"length": 5, "hop": 5, "summaries": ["mean", "std"]}
    assert json.loads(pca.read_text())["components"]
    code, out2, _ = run(["report", "--source", s, "--target", t, "--label-col", "y", "--window", "5", "--hop", "5",
                         "--load-pca", str(pca), *FAST], capsys)
    assert code == 0
    assert json.loads(out2)["reports"] == doc["reports"]


def test_save_models(pair, tmp_path, capsys):
    s, t = pair
    code, _, _ = run(["report", "--source", s, "--target", t, "--label-col", "y", "--save-models",
                      str(tmp_path / "m"), *FAST], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "m" / "source_model.json").read_text())
    assert doc["schema_version"] == 1 and set(doc["likelihoods"]) == {"0", "1"}


def test_unlabeled_batch(tmp_path, capsys):
    r = np.random.default_rng(1)
    for name, shift in (("s.csv", 0.0), ("t.csv", 1.0)):
        rows = r.normal(size=(300, 2)) + shift
        (tmp_path / name).write_text("a,b\n" + "\n".join(f"{x},{y}" for x, y in rows) + "\n")
    code, out, _ = run(["batch", "--source", str(tmp_path / "s.csv"), "--target", str(tmp_path / "t.csv"),
                        "--pca-dims", "0", "--format", "csv", *FAST], capsys)
    assert code == 0
    rows = list(csv.reader(out.splitlines()))
    assert rows[0] == ["comparison", "mean", "std", "pairs"] and rows[1][0] == "within_source"


def test_console_entry_point(pair):
    s, t = pair
    res = subprocess.run([sys.executable, "-m", "transferdist.cli", "ks-study", "--source", s, "--target", t,
                          "--label-col", "y", "--sizes", "50,100", "--format", "csv"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("series,size,value,spread")
