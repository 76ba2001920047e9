import json

import pytest

from sandpile_lab import sfield
from sandpile_lab.cli import RunConfig, UsageError, main
from sandpile_lab.lattice import ChipGrid
from sandpile_lab.render import decode_png


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_stabilize_four(tmp_path, capsys):
    path = tmp_path / "s.sfield"
    code, out, _ = run(["stabilize", "--d", "2", "--n", "4", "--out", str(path)], capsys)
    assert code == 0
    s = sfield.read(path)
    assert s.total() == 4 and s[(0, 0)] == 0 and s[(1, 0)] == 1
    report = json.loads(out)
    assert report["config"]["n"] == 4 and report["result"]["total_topples"] == 1


def test_stabilize_from_file(tmp_path, capsys):
    src = tmp_path / "eta.sfield"
    sfield.write(src, ChipGrid.point(16, 2, 1))
    odo = tmp_path / "v.sfield"
    code, out, _ = run(["stabilize", "--in", str(src), "--odometer-out", str(odo), "--strategy", "fifo"], capsys)
    assert code == 0
    assert sfield.read(odo, kind="odometer")[(0, 0)] == 5


def test_green(tmp_path, capsys):
    path = tmp_path / "phi.sfield"
    code, out, _ = run(["green", "--n", "400", "--d", "3", "--radius", "1.0", "--out", str(path)], capsys)
    assert code == 0
    phi = sfield.read(path)
    assert phi.h == pytest.approx(400 ** (-1 / 3))
    assert json.loads(out)["result"]["residual"] <= 1e-10


def test_converge(tmp_path, capsys):
    path = tmp_path / "report.json"
    code, _, _ = run(["converge", "--d", "2", "--schedule", "1000,4000,16000", "--out", str(path)], capsys)
    assert code == 0
    report = json.loads(path.read_text())
    assert len(report["rows"]) == 3
    assert report["config"]["schedule"] == [1000, 4000, 16000]


def test_render(tmp_path, capsys):
    src = tmp_path / "s.sfield"
    main(["stabilize", "--n", "16", "--out", str(src)])
    capsys.readouterr()
    png = tmp_path / "s.png"
    code, out, _ = run(["render", "--in", str(src), "--out", str(png), "--crop", "-2,-2,2,2"], capsys)
    assert code == 0
    assert decode_png(png.read_bytes()).shape == (5, 5, 3)
    assert json.loads(out)["result"]["nonwhite_pixels"] == 12
    ppm = tmp_path / "s.ppm"
    assert main(["render", "--in", str(src), "--out", str(ppm)]) == 0
    assert ppm.read_bytes().startswith(b"P6")


def test_verify(capsys):
    code, out, _ = run(["verify", "--seed", "7"], capsys)
    assert code == 0
    report = json.loads(out)
    assert report["passed"] and all(s["passed"] for s in report["suites"])


def test_verify_failure_exit_code(tmp_path, capsys, monkeypatch):
    from sandpile_lab import cli
    from sandpile_lab.suites import SuiteResult

    def broken(seed):
        return [SuiteResult("abelian", False, 1, "forced", {"eta": ChipGrid.point(5, 2, 1)})]

    monkeypatch.setattr(cli, "run_suites", broken)
    code, out, _ = run(["verify", "--out", str(tmp_path / "cx")], capsys)
    assert code == 1
    dumped = json.loads(out)["counterexamples"]
    assert sfield.read(dumped[0]) == ChipGrid.point(5, 2, 1)


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["stabilize"],
    ["stabilize", "--n", "4", "--d", "5"],
    ["stabilize", "--n", "0"],
    ["stabilize", "--n", "4", "--strategy", "magic"],
    ["green", "--n", "100", "--tol", "0.1"],
    ["converge", "--schedule", "1000,x"],
    ["converge", "--phi", "ring:0"],
    ["render", "--in", "x.sfield"],
])
def test_usage_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2
    assert err


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == 0


def test_repeated_runs_are_byte_identical(tmp_path):
    argv = [
        ["stabilize", "--n", "3000", "--strategy", "tiled", "--threads", "2", "--seed", "3",
         "--out", str(tmp_path / "s.sfield"), "--report", str(tmp_path / "s.json")],
        ["render", "--in", str(tmp_path / "s.sfield"), "--out", str(tmp_path / "s.png"),
         "--report", str(tmp_path / "r.json")],
    ]
    files = ("s.sfield", "s.json", "s.png", "r.json")
    snapshots = []
    for _ in range(2):
        for args in argv:
            assert main(args) == 0
        snapshots.append([(tmp_path / f).read_bytes() for f in files])
    assert snapshots[0] == snapshots[1]


def test_strategies_write_identical_fields(tmp_path):
    dumps = []
    for strategy in ("fifo", "sweep", "tiled"):
        path = tmp_path / f"{strategy}.sfield"
        assert main(["stabilize", "--n", "3000", "--strategy", strategy, "--threads", "2",
                     "--out", str(path), "--report", str(tmp_path / "r.json")]) == 0
        dumps.append(path.read_bytes())
    assert dumps[0] == dumps[1] == dumps[2]


def test_run_config_validation():
    with pytest.raises(UsageError):
        RunConfig("stabilize", d=4)
    with pytest.raises(UsageError):
        RunConfig("stabilize", seed=-1)
    config = RunConfig("converge", schedule=(1000, 4000), phi=("bump:0,0:0.3",))
    assert config.to_dict()["schedule"] == [1000, 4000]
