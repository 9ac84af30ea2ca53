import csv
import json

import numpy as np
import pytest

from finder.cli import main
from finder.data import synthetic_electronegativity, write_dataset
from finder.spectra import ENERGY_GRID, drude

SMALL = ["--hidden-dim", "6", "--edge-hidden", "8", "--message-hidden", "8", "--pool-hidden", "6",
         "--conv-filters", "2", "--dense-widths", "8,8"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    names, y = synthetic_electronegativity(40, seed=3)
    p = d / "ef.csv"
    write_dataset(p, names, y)
    return p


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    run = tmp_path_factory.mktemp("runs") / "r1"
    code = main(["train", "--dataset", str(dataset), "--domain", "formula", "--seed", "7", "--run-dir", str(run),
                 "--max-epochs", "3", "--batch-size", "24", *SMALL])
    assert code == 0
    return run


def test_train_writes_run_dir(trained):
    for f in ("config.json", "model.ckpt", "history.csv", "metrics.json", "test_predictions.csv", "train.log"):
        assert (trained / f).exists(), f
    cfg = json.loads((trained / "config.json").read_text())
    assert cfg["seed"] == 7 and cfg["train"]["batch_size"] == 24
    metrics = json.loads((trained / "metrics.json").read_text())
    assert {"MAE", "RMSE", "R2", "MAD:MAE"} <= set(metrics)
    with open(trained / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epoch", "train_loss", "val_MAE", "lr"] and len(rows) <= 3


def test_rerun_from_config_is_bit_identical(trained, tmp_path):
    run2 = tmp_path / "r2"
    assert main(["train", "--config", str(trained / "config.json"), "--run-dir", str(run2)]) == 0
    assert (run2 / "history.csv").read_bytes() == (trained / "history.csv").read_bytes()
    assert (run2 / "model.ckpt").read_bytes() == (trained / "model.ckpt").read_bytes()


def test_ablation_flag(dataset, tmp_path):
    run = tmp_path / "abl"
    assert main(["train", "--dataset", str(dataset), "--run-dir", str(run), "--max-epochs", "1",
                 "--ablation", "no_self_attention", *SMALL]) == 0
    cfg = json.loads((run / "config.json").read_text())
    assert cfg["ablations"] == ["no_self_attention"]


def test_train_size_sweep(dataset, tmp_path):
    run = tmp_path / "sweep"
    assert main(["train", "--dataset", str(dataset), "--run-dir", str(run), "--max-epochs", "1",
                 "--train-sizes", "10,20", *SMALL]) == 0
    out = json.loads((run / "sweep.json").read_text())
    assert [r["train_size"] for r in out["sizes"]] == [10, 20]
    assert "slope" in out
    assert (run / "size_10" / "history.csv").exists()


def test_predict_scalar_with_bad_row(trained, tmp_path):
    inp = tmp_path / "in.csv"
    inp.write_text("composition\nNaCl\nXx2O\nFe2O3\n")
    out = tmp_path / "pred.csv"
    assert main(["predict", "--checkpoint", str(trained / "model.ckpt"), "--input", str(inp),
                 "--output", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["composition"] for r in rows] == ["NaCl", "Xx2O", "Fe2O3"]
    assert rows[0]["mean"] and float(rows[0]["uncertainty"]) > 0 and not rows[0]["error"]
    assert rows[1]["error"] and not rows[1]["mean"]


def test_predict_domain_mismatch(trained, tmp_path):
    inp = tmp_path / "in.csv"
    inp.write_text("composition,structure_file\nNaCl,nacl.struct\n")
    assert main(["predict", "--checkpoint", str(trained / "model.ckpt"), "--input", str(inp)]) == 2


def test_predict_spectrum_rows(tmp_path):
    names, _ = synthetic_electronegativity(12, seed=1)
    rng = np.random.default_rng(0)
    p = tmp_path / "spec.csv"
    write_dataset(p, names, [rng.normal(size=3000) for _ in names])
    run = tmp_path / "spec_run"
    assert main(["train", "--dataset", str(p), "--run-dir", str(run), "--max-epochs", "1", *SMALL]) == 0
    out = tmp_path / "pred.csv"
    assert main(["predict", "--checkpoint", str(run / "model.ckpt"), "--composition", "NaCl",
                 "--output", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 3 and [r[1] for r in rows[1:]] == ["mean", "uncertainty"]
    assert all(len(r) == 3 + 3000 for r in rows[1:])


def test_export_eam(trained, tmp_path):
    out = tmp_path / "eam.csv"
    assert main(["export-eam", "--checkpoint", str(trained / "model.ckpt"), "--composition", "Cu2Ag2O3",
                 "--output", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 8 and len(rows[0]) == 8
    m = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    assert np.all(np.diag(m) == 0)


def _spectrum_cell(s):
    return ";".join(repr(float(x)) for x in s.values)


def test_screen_enz_with_provided_spectra(tmp_path):
    good_re, good_im = drude(3.0, 0.2)
    lossy_re, lossy_im = drude(4.0, 30.0)
    # one candidate supplies raw (energy, value) points instead of grid spectra
    nb_re, nb_im = drude(5.0, 0.1)
    pts, ipts = tmp_path / "nbo_re.txt", tmp_path / "nbo_im.txt"
    np.savetxt(pts, np.column_stack([ENERGY_GRID[::10], nb_re.values[::10]]))
    np.savetxt(ipts, np.column_stack([ENERGY_GRID[::10], nb_im.values[::10]]))
    p = tmp_path / "cand.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["composition", "e_hull_meV", "eps_re", "eps_im", "eps_re_file", "eps_im_file"])
        w.writerow(["VO2", "5.0", _spectrum_cell(good_re), _spectrum_cell(good_im), "", ""])
        w.writerow(["TiN", "5.0", _spectrum_cell(lossy_re), _spectrum_cell(lossy_im), "", ""])
        w.writerow(["ZrN", "30.0", _spectrum_cell(good_re), _spectrum_cell(good_im), "", ""])
        w.writerow(["NbO", "1.0", "", "", pts.name, ipts.name])
    out = tmp_path / "report.csv"
    edges = tmp_path / "edges.csv"
    assert main(["screen-enz", "--candidates", str(p), "--use-provided-spectra", "--output", str(out),
                 "--edges", str(edges), "--min-count", "1"]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["composition"] for r in rows] == ["NbO", "VO2"]
    assert abs(float(rows[1]["omega_co"]) - 3.0) < 0.02
    eps = [float(r["eps_im_at_co"]) for r in rows]
    assert eps == sorted(eps)
    with open(edges) as fh:
        e = list(csv.DictReader(fh))
    assert {(r["element_a"], r["element_b"]) for r in e} == {("Nb", "O"), ("O", "V")}


def test_screen_enz_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("composition,e_hull_meV,eps_re,eps_im\n")
    out = tmp_path / "r.csv"
    assert main(["screen-enz", "--candidates", str(p), "--use-provided-spectra", "--output", str(out)]) == 0
    assert out.read_text().strip() == "composition,omega_co,eps_im_at_co,e_hull_meV,later_crossings"


def test_screen_enz_missing_checkpoint(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("composition,e_hull_meV\nVO2,1.0\n")
    assert main(["screen-enz", "--candidates", str(p), "--re", str(tmp_path / "nope.ckpt"),
                 "--im", str(tmp_path / "nope.ckpt")]) == 2


def test_screen_enz_rejects_scalar_checkpoint(trained, tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("composition,e_hull_meV\nVO2,1.0\n")
    ck = str(trained / "model.ckpt")
    assert main(["screen-enz", "--candidates", str(p), "--re", ck, "--im", ck]) == 1


def test_compare_summary_stats(capsys):
    assert main(["compare", "--stats-a", "0.0858,0.0004,3", "--stats-b", "0.0913,0.0008,3"]) == 0
    r = json.loads(capsys.readouterr().out)
    assert 0.0002 <= r["p"] <= 0.0008 and r["df"] == 4 and r["significant"]
    assert main(["compare", "--stats-a", "0.0913,0.0008,3", "--stats-b", "0.0858,0.0004,3"]) == 0
    r2 = json.loads(capsys.readouterr().out)
    assert r2["p"] == r["p"] and r2["t"] == -r["t"]


def test_compare_files(tmp_path, capsys):
    a = [tmp_path / f"a{k}.json" for k in range(3)]
    for k, f in enumerate(a):
        f.write_text(json.dumps({"MAE": 0.1 + 0.01 * k}))
    assert main(["compare", "--a", *map(str, a), "--b", *map(str, a)]) == 0
    r = json.loads(capsys.readouterr().out)
    assert r["p"] == pytest.approx(1.0) and r["t"] == 0
    runs = tmp_path / "runs.json"
    runs.write_text(json.dumps({"runs": [0.2, 0.21, 0.19]}))
    assert main(["compare", "--a", *map(str, a), "--b", str(runs), "--format", "csv"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("mean_a,") and len(out) == 2


def test_exit_codes(tmp_path, dataset):
    assert main(["train"]) == 1
    with pytest.raises(SystemExit) as ei:
        main(["train", "--ablation", "bogus"])
    assert ei.value.code == 1
    assert main(["train", "--dataset", str(tmp_path / "missing.csv"), "--run-dir", str(tmp_path / "x")]) == 2
    assert main(["train", "--dataset", str(dataset), "--run-dir", str(tmp_path / "y"), "--n-layers", "7"]) == 1
    assert main(["compare", "--stats-a", "1,0.1,1", "--stats-b", "1,0.1,3"]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_training_exits_3(dataset, tmp_path):
    run = tmp_path / "r"
    code = main(["train", "--dataset", str(dataset), "--run-dir", str(run), "--max-epochs", "3",
                 "--lr", "1e30", *SMALL])
    assert code == 3
