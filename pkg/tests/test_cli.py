"""End-to-end CLI tests (exit codes, CSV artifacts, determinism)."""

import numpy as np
import pytest

from sdae_theta.cli import main, run_check
from sdae_theta.experiment import read_report_csv
from sdae_theta.problems import SdaeProblem, builtin


def run(argv):
    return main(argv)


class TestConvergenceCommand:
    def test_structure_and_roundtrip(self, tmp_path, capsys):
        out = str(tmp_path / "report.csv")
        code = run(
            [
                "convergence",
                "--problem", "example51",
                "--thetas", "0.5,1.0",
                "--ref-level", "9",
                "--levels", "5..7",
                "--paths", "20",
                "--seed", "7",
                "--out", out,
            ]
        )
        assert code == 0
        lines = open(out).read().strip().split("\n")
        assert lines[0] == "problem,theta,delta_exp,delta,rms,n_paths,n_failed,seed"
        data = [ln for ln in lines[1:] if not ln.startswith("#")]
        slopes = [ln for ln in lines[1:] if ln.startswith("#slope")]
        intercepts = [ln for ln in lines[1:] if ln.startswith("#intercept")]
        assert len(data) == 2 * 3
        assert len(slopes) == 2
        assert len(intercepts) == 2
        assert all(ln.split(",")[7] == "7" for ln in data)

        capsys.readouterr()
        assert run(["fit", "--in", out]) == 0
        printed = capsys.readouterr().out.strip().split("\n")
        parsed = read_report_csv(out)
        for line in printed:
            theta = float(line.split()[0].split("=")[1])
            slope = float(line.split()[1].split("=")[1])
            assert slope == pytest.approx(parsed.slopes[theta], abs=1e-12)

    def test_unknown_problem_exit_1_names_labels(self, capsys):
        code = run(["convergence", "--problem", "nope"])
        assert code == 1
        err = capsys.readouterr().err
        assert "example51" in err and "example52" in err

    def test_unknown_flag_rejected(self):
        assert run(["convergence", "--problem", "example51", "--bogus", "1"]) == 1

    def test_bad_ladder_rejected(self):
        assert run(["convergence", "--problem", "example51", "--levels", "9..5"]) == 1

    def test_example52_reduced_ladder_slope(self, tmp_path):
        out = str(tmp_path / "e52.csv")
        code = run(
            [
                "convergence",
                "--problem", "example52",
                "--thetas", "1.0",
                "--ref-level", "11",
                "--levels", "7..9",
                "--paths", "50",
                "--seed", "3",
                "--out", out,
            ]
        )
        assert code == 0
        parsed = read_report_csv(out)
        assert 0.7 <= parsed.slopes[1.0] <= 1.3

    def test_workers_do_not_change_output(self, tmp_path):
        args = [
            "convergence",
            "--problem", "example51",
            "--thetas", "1.0",
            "--ref-level", "8",
            "--levels", "5..6",
            "--paths", "12",
            "--seed", "2",
        ]
        out1 = str(tmp_path / "w1.csv")
        out2 = str(tmp_path / "w2.csv")
        assert run(args + ["--workers", "1", "--out", out1]) == 0
        assert run(args + ["--workers", "2", "--out", out2]) == 0
        assert open(out1, "rb").read() == open(out2, "rb").read()


class TestSimulateCommand:
    def test_linear_closed_form_rows(self, tmp_path):
        out = str(tmp_path / "traj.csv")
        code = run(
            ["simulate", "--problem", "linear_sanity", "--theta", "1.0",
             "--level", "3", "--seed", "1", "--out", out]
        )
        assert code == 0
        lines = open(out).read().strip().split("\n")
        assert len(lines) == 10  # header + 9 nodes
        for k, ln in enumerate(lines[1:]):
            x = float(ln.split(",")[1])
            assert x == pytest.approx((1.0 + 2.0**-3) ** (-k), abs=1e-12)

    def test_no_noise_constraint_identity(self, tmp_path):
        out = str(tmp_path / "e51.csv")
        code = run(
            ["simulate", "--problem", "example51", "--no-noise",
             "--level", "6", "--out", out]
        )
        assert code == 0
        for ln in open(out).read().strip().split("\n")[1:]:
            cells = [float(v) for v in ln.split(",")]
            t, x1, x2 = cells[0], cells[1], cells[2]
            assert abs(x1 + x2 + np.sin(t)) <= 1e-3
            assert cells[-1] <= 1e-3  # constraint_residual column

    def test_repeat_identical_bytes(self, tmp_path):
        a = str(tmp_path / "a.csv")
        b = str(tmp_path / "b.csv")
        args = ["simulate", "--problem", "example52", "--level", "6", "--seed", "9"]
        assert run(args + ["--out", a]) == 0
        assert run(args + ["--out", b]) == 0
        assert open(a, "rb").read() == open(b, "rb").read()


class TestCheckCommand:
    @pytest.mark.parametrize("label", ["example51", "example52", "linear_sanity"])
    def test_builtins_pass(self, label, capsys):
        assert run(["check", "--problem", label]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out

    def test_remark31_warns_unbounded_but_passes(self, capsys):
        assert run(["check", "--problem", "remark31"]) == 0
        out = capsys.readouterr().out
        assert "unbounded" in out
        assert "constant" in out

    def test_tampered_jacobian_fails(self, capsys):
        prob = builtin("example51")

        def wrong_jac(t, x):
            return prob.f_jacobian(t, x) * 1.01

        tampered = SdaeProblem(**{**prob.__dict__, "f_jacobian": wrong_jac})
        assert run_check(tampered, emit=lambda *_a, **_k: None) == 2

    def test_unknown_problem(self):
        assert run(["check", "--problem", "missing"]) == 1


class TestFitCommand:
    def test_missing_file(self, capsys):
        assert run(["fit", "--in", "/nonexistent/report.csv"]) == 1

    def test_not_a_report(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b,c\n1,2,3\n")
        assert run(["fit", "--in", str(bad)]) == 1


class TestDiagnoseCommand:
    def test_writes_csv_and_prints_slope(self, tmp_path, capsys):
        out = str(tmp_path / "diag.csv")
        code = run(
            ["diagnose", "--problem", "example52", "--level", "7",
             "--paths", "16", "--seed", "1", "--p", "4", "--out", out]
        )
        assert code == 0
        assert "holder slope" in capsys.readouterr().out
        lines = open(out).read().strip().split("\n")
        assert lines[0] == "problem,theta,level,p,kind,arg,value"

    def test_p_above_p1_is_usage_error(self, capsys):
        assert run(["diagnose", "--problem", "example51", "--p", "50"]) == 1


class TestHelp:
    @pytest.mark.parametrize(
        "argv",
        [
            ["--help"],
            ["convergence", "--help"],
            ["simulate", "--help"],
            ["check", "--help"],
            ["fit", "--help"],
            ["diagnose", "--help"],
        ],
    )
    def test_help_exits_zero(self, argv, capsys):
        assert run(argv) == 0
        assert "usage" in capsys.readouterr().out.lower()
