import csv
import json
import xml.etree.ElementTree as ET

import pytest

from sprest import cli
from sprest.adaptivity import TRACE_COLUMNS, WALL_CLOCK_COLUMNS
from sprest.benchmarks import get_benchmark
from sprest.estimators import CSV_COLUMNS
from sprest.fem import NumericalError


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_verify_passes(capsys):
    assert cli.main(["verify"]) == cli.EXIT_OK
    assert "verify: PASS" in capsys.readouterr().out


def test_verify_corrupted_fixture_fails(capsys):
    sol = get_benchmark("square4")

    def flipped(x, f=sol.stress):
        s = f(x).copy()
        s[:, 0] *= -1
        return s

    cfg = cli.RunConfig("verify")
    assert cli.cmd_verify(cfg, [sol.replace(stress=flipped)]) == cli.EXIT_VERIFY
    assert "verify: FAIL" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["verify", "--benchmark", "disk"],
    ["solve", "--order", "q9"],
    ["frobnicate"],
    ["adapt", "--target", "0"],
    ["estimate", "--divisions", "0"],
    ["estimate", "--config", "/nonexistent/file.cfg"],
])
def test_usage_errors(argv, capsys):
    assert cli.main(argv) == cli.EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_usage_and_verify_codes_distinct():
    assert len({cli.EXIT_OK, cli.EXIT_USAGE, cli.EXIT_VERIFY, cli.EXIT_NUMERIC}) == 4


def test_estimate_square4(tmp_path):
    out = tmp_path / "est"
    rc = cli.main(["estimate", "--benchmark", "square4", "--order", "q4", "--divisions", "2",
                   "--meshes", "3", "--out", str(out)])
    assert rc == cli.EXIT_OK
    rows = read_rows(out / "estimates.csv")
    assert len(rows) == 3
    assert tuple(rows[0])[:11] == CSV_COLUMNS[:11] and len(rows[0]) >= 11
    for r in rows:
        assert 0.5 <= float(r["theta_E3"]) <= 2
    ET.parse(out / "effectivity.svg")
    assert len(json.loads((out / "estimates.json").read_text())) == 3
    for i in range(3):
        text = (out / f"estimate_mesh{i}.vtk").read_text()
        assert "exact_estar2" in text and "E3" in text


def test_every_svg_has_csv(tmp_path):
    cli.main(["estimate", "--benchmark", "pipe", "--order", "q8", "--meshes", "2",
              "--out", str(tmp_path)])
    cli.main(["adapt", "--benchmark", "pipe", "--target", "20", "--out", str(tmp_path)])
    svgs = sorted(tmp_path.glob("*.svg"))
    assert len(svgs) == 2
    for s in svgs:
        ET.parse(s)
    assert (tmp_path / "effectivity.svg").exists() and (tmp_path / "estimates.csv").exists()
    assert (tmp_path / "adapt.svg").exists() and (tmp_path / "adapt.csv").exists()


def test_adapt_target_100(tmp_path):
    rc = cli.main(["adapt", "--benchmark", "pipe", "--order", "q4", "--target", "100",
                   "--out", str(tmp_path)])
    assert rc == cli.EXIT_OK
    rows = read_rows(tmp_path / "adapt.csv")
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert sorted(r["stop_on"] for r in rows) == ["fe", "recovered"]
    summary = json.loads((tmp_path / "adapt_summary.json").read_text())
    assert summary["fe"]["iterations"] == summary["recovered"]["iterations"] == 1
    assert summary["dof_ratio"] == 1.0
    ET.parse(tmp_path / "adapt.svg")


def test_adapt_single_criterion(tmp_path):
    rc = cli.main(["adapt", "--benchmark", "square4", "--target", "10", "--stop-on", "fe",
                   "--out", str(tmp_path)])
    assert rc == cli.EXIT_OK
    summary = json.loads((tmp_path / "adapt_summary.json").read_text())
    assert list(summary) == ["fe"]


def test_adapt_lshape_records_stop_reason(tmp_path):
    rc = cli.main(["adapt", "--benchmark", "lshape", "--target", "0.5", "--stop-on",
                   "recovered", "--max-level", "2", "--out", str(tmp_path)])
    assert rc == cli.EXIT_OK
    summary = json.loads((tmp_path / "adapt_summary.json").read_text())
    assert summary["recovered"]["stop_reason"] == "level cap"


def test_config_file_with_override(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# run\nbenchmark = pipe\norder = Q8\ndivisions = 3\n"
                        "stop-on = recovered  # inline\n")
    cfg, _ = cli.parse_config(["adapt", "--config", str(cfg_file), "--divisions", "5"])
    assert (cfg.benchmark, cfg.order, cfg.divisions, cfg.stop_on) == ("pipe", "q8", 5,
                                                                    "recovered")


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n")
    with pytest.raises(cli.UsageError):
        cli.read_config_file(bad)
    bad.write_text("divisions = many\n")
    with pytest.raises(cli.UsageError):
        cli.read_config_file(bad)
    bad.write_text("just words\n")
    with pytest.raises(cli.UsageError):
        cli.read_config_file(bad)


def test_solve_outputs(tmp_path):
    rc = cli.main(["solve", "--benchmark", "pipe", "--order", "q8", "--divisions", "2",
                   "--out", str(tmp_path)])
    assert rc == cli.EXIT_OK
    summary = json.loads((tmp_path / "solve.json").read_text())
    assert summary["n_elements"] == 4 and summary["ndof"] > 0
    doc = json.loads((tmp_path / "solution.json").read_text())
    assert set(doc["point_data"]) >= {"u_fe", "u_rec"}
    assert (tmp_path / "solution.vtk").read_text().startswith("# vtk")


def test_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise NumericalError("singular stiffness matrix")

    monkeypatch.setattr(cli, "assemble_and_solve", boom)
    rc = cli.main(["solve", "--out", str(tmp_path)])
    assert rc == cli.EXIT_NUMERIC
    assert "numerical failure" in capsys.readouterr().err


def test_csv_bit_identical_across_runs(tmp_path):
    texts = []
    for k in range(2):
        out = tmp_path / str(k)
        cli.main(["adapt", "--benchmark", "square4", "--order", "q8", "--target", "2",
                  "--out", str(out)])
        cli.main(["estimate", "--benchmark", "lshape", "--meshes", "2", "--out", str(out)])
        rows = read_rows(out / "adapt.csv")
        for r in rows:
            for c in WALL_CLOCK_COLUMNS:
                r.pop(c)
        texts.append((rows, (out / "estimates.csv").read_bytes()))
    assert texts[0] == texts[1]
