import csv
import json

import pytest

from pqlab import cli


def write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


THEOREM = """
[experiment]
name = t
kind = theorem1
[domain]
resolution = 16
[integrand]
p = 2
q = {q}
mu = 1
[boundary]
family = {family}
amplitudes = 1
[schedule]
eps = {eps}
delta = {delta}
"""


def theorem_cfg(tmp_path, q=4, family="quadratic", eps="0.1, 0.05", delta="0.1, 0.05"):
    return cli.parse_config(write(tmp_path, THEOREM.format(q=q, family=family, eps=eps,
                                                           delta=delta)))


@pytest.mark.parametrize("name", [b[0] for b in cli.bundled_experiments()])
def test_bundled_configs_validate(name):
    assert cli.validate(cli.parse_config(name)) == []


def test_q_equal_3p_diagnostic(tmp_path):
    diags = cli.validate(theorem_cfg(tmp_path, q=6))
    assert any("must be < 3p" in d for d in diags)


def test_non_decreasing_schedule(tmp_path):
    diags = cli.validate(theorem_cfg(tmp_path, eps="0.1, 0.2", delta="0.1, 0.2"))
    assert any("not strictly decreasing" in d for d in diags)


def test_unknown_family_and_kind(tmp_path):
    assert any("family" in d for d in cli.validate(theorem_cfg(tmp_path, family="zigzag")))
    cfg = theorem_cfg(tmp_path)
    cfg.kind = "nonsense"
    assert cli.validate(cfg)


def test_mu_out_of_range(tmp_path):
    cfg = theorem_cfg(tmp_path)
    cfg.mu = -1.0
    assert any("mu" in d for d in cli.validate(cfg))


def test_parse_errors(tmp_path):
    with pytest.raises(cli.ConfigInvalid):
        cli.parse_config("no-such-config")
    with pytest.raises(cli.ConfigInvalid):
        cli.parse_config(write(tmp_path, "[experiment]\nname = x\n"))
    with pytest.raises(cli.ConfigInvalid):
        cli.parse_config(write(tmp_path, "[experiment]\nname = x\nkind = prop2\n"
                                         "[domain]\nresolution = abc\n"))


def test_main_exit_codes(tmp_path, capsys):
    assert cli.main(["validate", "smoke"]) == 0
    bad = write(tmp_path, THEOREM.format(q=6, family="quadratic", eps="0.1", delta="0.1"))
    assert cli.main(["validate", bad]) == 1
    assert cli.main(["validate", str(tmp_path / "missing.ini")]) == 2
    assert cli.main(["list-experiments"]) == 0
    assert "prop2_sharpness" in capsys.readouterr().out


def test_smoke_run(tmp_path, capsys):
    out = tmp_path / "smoke"
    assert cli.main(["run", "smoke", "--out", str(out)]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["all_passed"] and len(m["instances"]) == 1
    assert m["instances"][0]["status"] == "ok"
    for f in m["files"]:
        assert (out / f).exists()
    with open(out / "theorem1_reports.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {"lhs", "rhs", "implied_constant", "verdict"} <= set(rows[0])
    assert "theorem1" in capsys.readouterr().out


def test_single_instance_when_no_sweep(tmp_path):
    cfg = cli.parse_config(write(tmp_path, "[experiment]\nname = one\nkind = caccioppoli\n"
                                           "[domain]\nresolution = 16\n"))
    assert len(cli.instances(cfg)) == 1
    m = cli.run(cfg, out=tmp_path / "one")
    assert len(m["instances"]) == 1


def test_failed_instance_isolated(tmp_path, monkeypatch):
    cfg = theorem_cfg(tmp_path)
    cfg.kind = "caccioppoli"
    cfg.checks = ["caccioppoli"]
    cfg.amplitudes = [1.0, 2.0]
    real = cli.minimize

    def flaky(problem, *a, **kw):
        if problem.boundary.values[problem.grid.boundary].max() > 1.5:
            raise RuntimeError("boom")
        return real(problem, *a, **kw)

    monkeypatch.setattr(cli, "minimize", flaky)
    m = cli.run(cfg, out=tmp_path / "f")
    status = {i["key"]: i["status"] for i in m["instances"]}
    assert sorted(status.values()) == ["error:RuntimeError", "ok"]
    assert not m["all_passed"]
    with open(tmp_path / "f" / "caccioppoli_reports.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 1


def test_io_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = theorem_cfg(tmp_path)
    cfg.kind, cfg.checks = "caccioppoli", ["caccioppoli"]
    with pytest.raises(cli.IoFailure):
        cli.run(cfg, out=blocker / "sub")
    assert cli.main(["run", "smoke", "--out", str(blocker / "sub")]) == 3


def test_overrides_and_determinism(tmp_path):
    args = ["run", "prop2_sharpness", "--resolution", "32", "--seed", "3"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) in (0, 1)
    assert cli.main(args + ["--out", str(tmp_path / "b"), "--workers", "2"]) in (0, 1)
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert m["config"]["resolutions"] == [32] and m["config"]["seed"] == 3
    for name in ("prop2_ratios.csv", "prop2_fit.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "prop2_ratios.csv").read_text().splitlines()[0]
    assert header.split(",")[:3] == ["lambda", "ratio", "resolution"]
    assert "fitted slope" in (tmp_path / "a" / "summary.txt").read_text()
