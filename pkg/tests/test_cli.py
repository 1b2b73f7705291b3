import csv
import io

import pytest

from adaptba.cli import fit, main, parse_sweep, read_rows, resolve, run_cells

from .oracles import fit_line


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_run_ok(tmp_path, capsys):
    cfg = write(tmp_path, "a.cfg", "protocol = ba_psync\nn = 7\nt = 2\nf = 0\n")
    out = tmp_path / "tr.jsonl"
    assert main(["run", cfg, "--out", str(out), "--seed", "4"]) == 0
    rows = read_rows(capsys.readouterr().out)
    assert len(rows) == 1 and rows[0]["safety_ok"] == "True" and rows[0]["seed"] == "4"
    assert out.read_text().startswith('{"kind":"Header"')
    assert main(["audit", str(out)]) == 0


def test_run_rejects_bad_resilience(tmp_path):
    cfg = write(tmp_path, "b.cfg", "protocol = ba_psync\nn = 6\nt = 2\n")
    assert main(["run", cfg]) == 2
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2


def test_run_equivocating_leader(tmp_path, capsys):
    cfg = write(tmp_path, "c.cfg", "protocol = ba_psync\nn = 7\nt = 2\nf = 2\nbehaviors = equivocator\n"
                                   "placement = leaders\n")
    assert main(["run", cfg]) == 0
    assert read_rows(capsys.readouterr().out)[0]["safety_ok"] == "True"


def test_run_liveness_failure_exit(tmp_path, capsys):
    cfg = write(tmp_path, "d.cfg", "protocol = ba_psync\nn = 4\nt = 1\nhorizon = 5\n")
    assert main(["run", cfg]) == 4


def test_audit_exit_on_safety_violation(tmp_path):
    cfg = write(tmp_path, "e.cfg", "protocol = ba_psync\nn = 4\nt = 1\n")
    out = tmp_path / "tr.jsonl"
    main(["run", cfg, "--out", str(out), "--metrics", str(tmp_path / "m.csv")])
    text = out.read_text().rstrip("\n")
    text += '\n{"time":999,"seq":999999,"kind":"Decide","from":0,"to":null,"view":0,"tag":null,"value":0}'
    text += '\n{"time":999,"seq":999998,"kind":"Decide","from":0,"to":null,"view":0,"tag":null,"value":1}\n'
    out.write_text(text)
    assert main(["audit", str(out)]) == 3


def test_single_cell_sweep_matches_run(tmp_path, capsys):
    body = "protocol = ba_psync\nn = 7\nt = 2\nf = 1\nbehaviors = equivocator\n"
    cfg = write(tmp_path, "r.cfg", body + "seed = 3\n")
    spec = write(tmp_path, "s.sweep", body + "seeds = 1\nseed_base = 3\n")
    main(["run", cfg])
    one = capsys.readouterr().out
    main(["sweep", spec])
    assert capsys.readouterr().out == one


def test_sweep_deterministic_and_parallel(tmp_path, capsys):
    spec = write(tmp_path, "p.sweep", "protocol = ba_psync\nn = 7,10\nt = max\nf = 0,t\nseeds = 2\n")
    assert main(["sweep", spec]) == 0
    serial = capsys.readouterr().out
    assert main(["sweep", spec, "--jobs", "2"]) == 0
    assert capsys.readouterr().out == serial
    rows = read_rows(serial)
    assert [(r["n"], r["f"]) for r in rows] == [("7", "0")] * 2 + [("7", "2")] * 2 + [("10", "0")] * 2 + [("10", "3")] * 2


def test_sweep_bound_breach(tmp_path):
    spec = write(tmp_path, "q.sweep", "protocol = ba_psync\nn = 7\nt = 2\nf = 0\nseeds = 1\nbound = 0.5\n")
    assert main(["sweep", spec]) == 5


def test_sweep_fit_trend_in_f():
    spec = parse_sweep("protocol = ba_psync\nn = 10\nt = 3\nf = 0..3\nseeds = 6\nbehaviors = equivocator:withhold\n"
                       "placement = leaders\npredictor = n+nf\n")
    rows = run_cells(spec.cells())
    summary = fit(rows, "n+nf")
    xs = [r.n + r.n * r.f for r in rows]
    slope, intercept = fit_line(xs, [r.words_after_gst for r in rows])
    assert summary["slope"] == pytest.approx(slope) and summary["intercept"] == pytest.approx(intercept)
    assert slope >= 0


def test_resolve_tokens():
    assert resolve("max", n=16) == 5
    assert resolve("t/2", n=20, t=5) == 2
    with pytest.raises(Exception):
        resolve("__import__('os')", n=1)


def test_check_expander_small(capsys):
    assert main(["check-expander", "--n", "6", "--t", "1", "--D", "3", "--R", "5", "--seed", "0"]) in (0, 5)
    out = capsys.readouterr().out
    assert "mode=exhaustive" in out and "checked=20" in out


def test_check_expander_t_zero(capsys):
    assert main(["check-expander", "--n", "8", "--t", "0"]) == 0
    assert main(["check-expander", "--n", "8", "--t", "0", "--D", "2", "--R", "4"]) == 0


def test_check_expander_sampled_warning(capsys):
    main(["check-expander", "--n", "60", "--t", "3", "--samples", "200"])
    assert "warning" in capsys.readouterr().err
