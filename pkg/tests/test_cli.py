import csv
import io

import pytest

from onlinefdr.cli import main, parse_stopping, InputError
from onlinefdr.procedures import AffineCap


def _run(tmp_path, capsys, text, *args):
    path = tmp_path / "in.csv"
    path.write_text(text, encoding="utf-8")
    code = main(["run", *args, str(path)])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_lord(tmp_path, capsys):
    code, out, _ = _run(tmp_path, capsys, "p\n0.001\n0.9\n0.04\n", "lord")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [float(r["alpha"]) for r in rows] == pytest.approx([0.005, 0.0045, 0.00405], abs=1e-15)
    assert [r["rejected"] for r in rows] == ["1", "0", "0"]
    assert rows[0]["lambda"] == "" and rows[0]["fdp_hat_lambda"] == ""
    assert [r["rejections_so_far"] for r in rows] == ["1", "1", "1"]


def test_run_saffron_columns(tmp_path, capsys):
    code, out, _ = _run(tmp_path, capsys, "p\n0.001\n0.9\n", "saffron")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and rows[0]["lambda"] == "0.5"
    assert float(rows[1]["fdp_hat_lambda"]) == pytest.approx(0.0025 / 0.5)


def test_empty_input(tmp_path, capsys):
    code, out, _ = _run(tmp_path, capsys, "p\n", "lord")
    assert code == 0
    assert out == "index,p,alpha,lambda,rejected,fdp_hat_0,fdp_hat_lambda,rejections_so_far\n"


@pytest.mark.parametrize("text,fragment", [
    ("p\n0.1\n1.5\n", "line 3"),
    ("p\n0.0\n", "line 2"),
    ("p\nabc\n", "line 2"),
    ("q\n0.1\n", "line 1"),
    ("p,batch\n0.1,x\n", "line 2"),
])
def test_malformed_input(tmp_path, capsys, text, fragment):
    code, _, err = _run(tmp_path, capsys, text, "lord")
    assert code == 2 and fragment in err


def test_missing_file(capsys):
    assert main(["run", "lord", "/nonexistent/in.csv"]) == 2


def test_planned_with_batch_column(tmp_path, capsys):
    text = "p,batch,is_null\n0.001,1,0\n0.9,1,1\n0.04,2,1\n0.2,2,1\n"
    code, out, _ = _run(tmp_path, capsys, text, "planned-lord")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0
    assert float(rows[0]["alpha"]) == float(rows[1]["alpha"]) == pytest.approx(0.0025)
    assert float(rows[2]["alpha"]) == pytest.approx(0.045 * 0.1 / 2)


def test_planned_with_spec_time_column(tmp_path, capsys):
    code, out, _ = _run(tmp_path, capsys, "p,spec_time\n0.001,0\n0.5,1\n0.5,0\n", "planned-lord")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and rows[0]["alpha"] == rows[2]["alpha"]


def test_bad_spec_time(tmp_path, capsys):
    code, _, err = _run(tmp_path, capsys, "p,spec_time\n0.001,1\n", "planned-lord")
    assert code == 2 and "schedule" in err


def test_output_file_and_stopping(tmp_path, capsys):
    (tmp_path / "in.csv").write_text("p\n0.001\n0.9\n0.04\n", encoding="utf-8")
    out = tmp_path / "out.csv"
    assert main(["run", "lord", str(tmp_path / "in.csv"), "-o", str(out), "--stopping", "max-r=1"]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [float(r["alpha"]) for r in rows][1:] == [0.0, 0.0]


def test_audit_failure_exits_3(tmp_path, capsys, monkeypatch):
    import onlinefdr.cli as cli
    monkeypatch.setattr(cli, "audit_constraints", lambda *a, **k: False)
    code, _, err = _run(tmp_path, capsys, "p\n0.5\n", "lord")
    assert code == 3 and "invariant" in err


def test_parse_stopping():
    rule = parse_stopping("max-r=5")
    assert rule.max_rejections == 5
    rule = parse_stopping("max-r=2,r-slope=1,max-stage=40")
    assert rule.adaptive_max_rejections == AffineCap(2, 1) and rule.max_stage == 40
    with pytest.raises(InputError):
        parse_stopping("maxr=5")
    with pytest.raises(InputError):
        parse_stopping("max-r=x")


def test_verify_examples(capsys):
    assert main(["verify", "lord", "--trials", "1000"]) == 0
    assert main(["verify", "nonmono-strawman", "--expect-violations"]) == 0
    assert main(["verify", "saffron", "--stopping", "max-r=5"]) == 0
    out = capsys.readouterr().out
    assert "0 violation(s)" in out and "trial" in out


def test_verify_expectation_mismatch(capsys):
    assert main(["verify", "lord", "--trials", "50", "--expect-violations"]) == 1


def test_verify_unknown_procedure(capsys):
    assert main(["verify", "holm"]) == 2


def test_simulate_writes_csv_and_figure(tmp_path, capsys):
    out, fig = tmp_path / "r.csv", tmp_path / "r.svg"
    args = ["simulate", "--iterations", "2", "--t-max", "60", "--seed", "3", "-o", str(out)]
    assert main([*args, "--figure", str(fig)]) == 0
    first = out.read_bytes()
    assert fig.read_bytes().startswith(b"<?xml")
    assert main(args) == 0
    assert out.read_bytes() == first
    assert len(first.decode().splitlines()) == 1 + 24


@pytest.mark.parametrize("extra", [["--rho", "-0.2"], ["--pi1", "1.5"], ["--iterations", "1"],
                                   ["--procedures", "holm"], ["--n-batch", "0"], ["--rho", "x"]])
def test_simulate_rejects_bad_grid(capsys, extra):
    assert main(["simulate", *extra]) == 2


def test_help_exit_codes(capsys):
    assert main(["--help"]) == 0
    assert main([]) == 2
