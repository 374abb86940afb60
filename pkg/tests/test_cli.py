import csv
import json
import warnings

import numpy as np
import pytest

from statfuse.cli import main
from statfuse.frame import SampleFrame, load_frame, write_frame
from statfuse.transport import load_plan, save_plan

# a full one-hot of region is collinear with the population-size constraint
pytestmark = pytest.mark.filterwarnings("ignore:dropping linearly dependent:RuntimeWarning")


def rows_of(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def files(tmp_path):
    rng = np.random.default_rng(4)
    n1, n2 = 30, 80
    x = rng.normal(size=(n1 + n2, 2))
    region = np.array(["north", "south", "east"])[rng.integers(3, size=n1 + n2)]
    y = x @ [0.5, -1.0] + rng.normal(size=n1 + n2)
    z = np.array(["lo", "hi"])[(x[:, 0] + rng.normal(size=n1 + n2) > 0).astype(int)]

    def dump(path, idx, extra_name, extra, w):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["id", "x1", "x2", "region", extra_name, "w"])
            for k, i in enumerate(idx):
                wr.writerow([f"u{i}", float(x[i, 0]), float(x[i, 1]), region[i], extra[i], float(w[k])])

    # ten units appear in both files
    r_idx = np.arange(n1)
    d_idx = np.arange(n1 - 10, n1 + n2 - 10)
    rec = tmp_path / "r.csv"
    don = tmp_path / "d.csv"
    dump(rec, r_idx, "y", [float(v) for v in y], rng.uniform(5, 15, n1))
    dump(don, d_idx, "z", z, rng.uniform(1, 4, n2))
    return tmp_path, rec, don


def base(rec, don, *extra):
    return ["--recipient", str(rec), "--donor", str(don), "--x-cols", "x1,x2,region",
            "--y-cols", "y", "--z-cols", "z", "--weight-col", "w", *extra]


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_harmonize(files, capsys):
    tmp, rec, don = files
    w1, w2 = tmp / "w1.csv", tmp / "w2.csv"
    code, out, err = run(["harmonize", *base(rec, don, "--out-weights", f"{w1},{w2}")], capsys)
    assert code == 0, err
    lines = [json.loads(s) for s in out.splitlines()]
    assert lines[0]["event"] == "harmonize" and lines[0]["n12"] == 10
    assert {ln["sample"] for ln in lines[1:]} == {"recipient", "donor"}
    assert all(ln["max_residual"] <= 1e-8 for ln in lines[1:])
    manifest = json.loads((tmp / "w1.csv.manifest.json").read_text())
    assert set(manifest["inputs"]) == {str(rec), str(don)}
    # calibrated weights reproduce the same totals of x on both sides
    fr = load_frame(rec, id_col="id", x_cols=["x1", "x2"], weight_col="w")
    fd = load_frame(don, id_col="id", x_cols=["x1", "x2"], weight_col="w")
    cw1 = load_frame(w1, id_col="id", x_cols=[], weight_col="w").weights
    cw2 = load_frame(w2, id_col="id", x_cols=[], weight_col="w").weights
    np.testing.assert_allclose(cw1 @ fr.x, cw2 @ fd.x, rtol=1e-7)


def test_pipeline(files, capsys):
    tmp, rec, don = files
    plan = tmp / "plan.csv"
    code, out, err = run(["match", *base(rec, don, "--out", str(plan))], capsys)
    assert code == 0, err
    assert json.loads(out)["certified"] is True
    assert (tmp / "plan.csv.manifest.json").exists()
    assert (tmp / "plan.duals.csv").exists()

    code, out, err = run(["verify", *base(rec, don, "--plan", str(plan))], capsys)
    assert code == 0, err
    assert json.loads(out)["passed"] is True

    pred = tmp / "pred.csv"
    code, _, err = run(["predict", *base(rec, don, "--plan", str(plan), "--out", str(pred))], capsys)
    assert code == 0, err
    header = pred.read_text().splitlines()[0].split(",")
    assert header[:6] == ["id", "x1", "x2", "region", "y", "w"]
    assert "pred_z=hi" in header and "pred_region=east" in header

    fused = tmp / "fused.csv"
    code, _, err = run(["impute", *base(rec, don, "--plan", str(plan), "--seed", "3", "--out", str(fused))], capsys)
    assert code == 0, err
    rows = rows_of(fused)
    assert len(rows) == 30
    assert set(rows[0]) >= {"id", "y", "z", "donor_x1", "donor_region", "donor_id"}
    d = {r["id"]: r for r in rows_of(don)}
    for r in rows:
        assert r["z"] == d[r["donor_id"]]["z"]
        assert r["donor_x1"] == d[r["donor_id"]]["x1"]

    for kind in ("mean", "covariance"):
        est = tmp / f"{kind}.csv"
        code, _, err = run(["estimate", *base(rec, don, "--plan", str(plan), "--kind", kind,
                                              "--out", str(est))], capsys)
        assert code == 0, err
        assert est.read_text().startswith("kind,representation,row,col,value\n")

    # contingency tables need categorical y and z
    cat = ["--recipient", str(rec), "--donor", str(don), "--x-cols", "x1,x2", "--y-cols", "region",
           "--z-cols", "z", "--weight-col", "w"]
    plan2 = tmp / "plan2.csv"
    assert main(["match", *cat, "--out", str(plan2)]) == 0
    est = tmp / "table.csv"
    code, _, err = run(["estimate", *cat, "--plan", str(plan2), "--kind", "contingency", "--out", str(est)], capsys)
    assert code == 0, err
    table = rows_of(est)
    assert len(table) == 6 and {r["row"] for r in table} == {"region=east", "region=north", "region=south"}


def test_estimate_representations_agree(files, capsys):
    tmp, rec, don = files
    plan = tmp / "plan.csv"
    assert main(["match", *base(rec, don, "--out", str(plan))]) == 0
    vals = {}
    for rep in ("pairwise", "pred-s1", "pred-s2"):
        out = tmp / f"{rep}.csv"
        assert main(["estimate", *base(rec, don, "--plan", str(plan), "--representation", rep,
                                       "--out", str(out))]) == 0
        vals[rep] = np.array([float(r["value"]) for r in rows_of(out)])
    capsys.readouterr()
    np.testing.assert_allclose(vals["pred-s1"], vals["pairwise"], rtol=1e-10)
    np.testing.assert_allclose(vals["pred-s2"], vals["pairwise"], rtol=1e-10)


def test_missing_weight_col(files, capsys):
    _, rec, don = files
    code, _, err = run(["match", "--recipient", str(rec), "--donor", str(don), "--x-cols", "x1",
                        "--out", "p.csv"], capsys)
    assert code == 1
    assert "--weight-col" in json.loads(err.strip().splitlines()[-1])["message"]


def test_unknown_flag(capsys):
    code, _, err = run(["match", "--bogus", "1"], capsys)
    assert code == 1
    assert "usage" in err


def test_data_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("id,x1,w\na,1,2\nb,2,0\n")
    code, _, err = run(["match", "--recipient", str(p), "--donor", str(p), "--x-cols", "x1",
                        "--weight-col", "w", "--out", str(tmp_path / "o.csv")], capsys)
    assert code == 1
    diag = json.loads(err.strip())
    assert diag["error"] == "DataError" and "row 2: weight must be > 0" in diag["message"]


def test_numerical_failure_exit_code(tmp_path, capsys):
    # recipient x all equal to 0 while the donor's are 5: no reweighting reaches the composite total
    r = tmp_path / "r.csv"
    d = tmp_path / "d.csv"
    r.write_text("id,x1,w\na,0,1\nb,0,1\n")
    d.write_text("id,x1,w\nc,5,1\ne,5,1\n")
    code, _, err = run(["match", "--recipient", str(r), "--donor", str(d), "--x-cols", "x1",
                        "--weight-col", "w", "--out", str(tmp_path / "o.csv")], capsys)
    assert code == 2
    assert json.loads(err.strip())["error"] == "CalibrationError"


def test_verify_fails_on_tampered_plan(files, capsys):
    tmp, rec, don = files
    plan = tmp / "plan.csv"
    assert main(["match", *base(rec, don, "--out", str(plan))]) == 0
    lines = plan.read_text().splitlines()
    rid, did, w = lines[1].split(",")
    lines[1] = f"{rid},{did},{float(w) + 0.1!r}"
    plan.write_text("\n".join(lines) + "\n")
    code, out, _ = run(["verify", *base(rec, don, "--plan", str(plan))], capsys)
    assert code == 2
    assert json.loads(out.splitlines()[-1])["passed"] is False


def test_config_file_flags_win(files, capsys):
    tmp, rec, don = files
    cfg = tmp / "run.cfg"
    cfg.write_text(f"recipient = {rec}\ndonor = {don}\nx-cols = x1,x2\nweight-col = w\n"
                   f"metric = euclidean\nout = {tmp / 'from_config.csv'}\n")
    code, _, err = run(["match", "--config", str(cfg), "--out", str(tmp / "flag.csv")], capsys)
    assert code == 0, err
    assert (tmp / "flag.csv").exists() and not (tmp / "from_config.csv").exists()
    manifest = json.loads((tmp / "flag.csv.manifest.json").read_text())
    assert manifest["config"]["metric"] == "euclidean"


def test_impute_requires_seed(files, capsys):
    tmp, rec, don = files
    code, _, err = run(["impute", *base(rec, don, "--plan", "p.csv", "--out", str(tmp / "f.csv"))], capsys)
    assert code == 1 and "--seed" in err


def test_impute_deterministic(files, capsys):
    tmp, rec, don = files
    plan = tmp / "plan.csv"
    assert main(["match", *base(rec, don, "--out", str(plan))]) == 0
    outs = []
    for i in range(2):
        out = tmp / f"fused{i}.csv"
        assert main(["impute", *base(rec, don, "--plan", str(plan), "--seed", "11", "--out", str(out))]) == 0
        outs.append(out.read_bytes())
    capsys.readouterr()
    assert outs[0] == outs[1]


def test_plan_round_trip(files, capsys):
    tmp, rec, don = files
    plan = tmp / "plan.csv"
    assert main(["match", *base(rec, don, "--out", str(plan))]) == 0
    capsys.readouterr()
    fr = load_frame(rec, id_col="id", x_cols=["x1"], weight_col="w")
    fd = load_frame(don, id_col="id", x_cols=["x1"], weight_col="w")
    p = load_plan(plan, fr.ids, fd.ids)
    again = tmp / "again.csv"
    save_plan(p, again)
    assert again.read_bytes() == plan.read_bytes()


def test_simulate_small(tmp_path, capsys):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("N = 800\nreplicates = 5\n")
    out = tmp_path / "rep.csv"
    code, stdout, err = run(["simulate-gaussian", "--config", str(cfg), "--n1", "40", "--n2", "150",
                             "--replicates", "2", "--seed", "3", "--out", str(out)], capsys)
    assert code == 0, err
    assert json.loads(stdout)["replicates"] == 2
    rows = rows_of(out)
    assert len(rows) == 12 and {r["method"] for r in rows} == {"opt", "bal", "ren"}
    m = json.loads((tmp_path / "rep.csv.manifest.json").read_text())
    assert m["config"]["spec"]["N"] == 800 and m["seed"] == 3


def test_simulate_requires_seed(tmp_path, capsys):
    code, _, err = run(["simulate-gaussian", "--out", str(tmp_path / "r.csv")], capsys)
    assert code == 1 and "--seed" in err


def test_frame_written_by_library_is_readable(tmp_path):
    f = SampleFrame(["a", "b"], [[1.0], [2.5]], [[0.1], [0.2]], [1.0, 3.0], "donor",
                    x_names=("x1",), extra_names=("z",))
    path = tmp_path / "f.csv"
    write_frame(f, path, weight_col="w")
    g = load_frame(path, id_col="id", x_cols=["x1"], extra_cols=["z"], weight_col="w", role="donor")
    assert f == g


def test_warnings_are_json_lines(files, capsys):
    tmp, rec, don = files
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        code, _, err = run(["harmonize", *base(rec, don, "--out-weights", f"{tmp / 'a.csv'},{tmp / 'b.csv'}")],
                           capsys)
    assert code == 0
    lines = [json.loads(ln) for ln in err.splitlines()]
    assert lines and all(ln["warning"] == "RuntimeWarning" for ln in lines)
    assert "dependent calibration columns" in lines[0]["message"]
