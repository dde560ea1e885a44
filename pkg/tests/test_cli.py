import csv
import json

import pytest

from cpmcf import cli


def run(tmp_path, command, cfg=None, name="out", extra=()):
    out = tmp_path / name
    argv = [command, "--out", str(out), *extra]
    if cfg is not None:
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(cfg))
        argv += ["--config", str(p)]
    return cli.main(argv), out


def test_verify_lemmas_default(tmp_path):
    rc, out = run(tmp_path, "verify-lemmas")
    assert rc == cli.EXIT_OK
    rows = list(csv.DictReader(open(out / "appendix.csv")))
    assert len(rows) > 100
    echo = json.loads((out / "config.json").read_text())
    assert echo["schema"] == cli.SCHEMA and echo["phi_n"] == [3, 5, 7, 9, 11, 15, 25]


def test_verify_lemmas_psi_n4_is_config_error(tmp_path):
    rc, out = run(tmp_path, "verify-lemmas", {"psi_n": [4]})
    assert rc == cli.EXIT_CONFIG
    assert not (out / "appendix.json").exists()


def test_verify_lemmas_loosened_tolerance(tmp_path):
    # strict slacks are genuinely positive, so a loose acceptance tolerance changes nothing
    rc0, a = run(tmp_path, "verify-lemmas", name="a")
    rc1, b = run(tmp_path, "verify-lemmas", {"tolerances": {"equality_abs": 1e-1}}, name="b")
    assert rc0 == rc1 == cli.EXIT_OK
    assert (a / "appendix.csv").read_bytes() == (b / "appendix.csv").read_bytes()


def test_verify_lemmas_required_margin_fails(tmp_path):
    # a required positive margin of 1e-1 is not met: several slacks tend to zero at infinity
    rc, _ = run(tmp_path, "verify-lemmas", {"tolerances": {"strict_rel": 1e-1}})
    assert rc == cli.EXIT_FAILED


@pytest.mark.parametrize("cfg", [{"bogus": 1}, {"schema": "other/9"}, {"eps": [2.0]}, {"phi_n": [2]},
                                 {"grid": {"n_linear": "many"}}, {"command": "flow"}])
def test_verify_lemmas_bad_configs(tmp_path, cfg):
    assert run(tmp_path, "verify-lemmas", cfg)[0] == cli.EXIT_CONFIG


def test_unreadable_config(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    assert cli.main(["falsify", "--out", str(tmp_path / "o"), "--config", str(p)]) == cli.EXIT_CONFIG


def test_falsify_small_and_echo_rerun(tmp_path):
    cfg = {"dims": [[8, 2]], "count": 400, "inequalities": ["R1_bound_split", "R2_identity"]}
    rc, a = run(tmp_path, "falsify", cfg, name="a", extra=("--seed", "3"))
    assert rc == cli.EXIT_OK
    echo = json.loads((a / "config.json").read_text())
    assert echo["seed"] == 3 and echo["count"] == 400
    rc2, b = run(tmp_path, "falsify", echo, name="b")
    assert rc2 == cli.EXIT_OK
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()
    assert (a / "config.json").read_bytes() == (b / "config.json").read_bytes()


def test_falsify_negative_control_exit_2(tmp_path):
    cfg = {"dims": [[8, 2]], "count": 2000, "codazzi": False, "inequalities": ["gradient_lower_bound"]}
    rc, out = run(tmp_path, "falsify", cfg)
    assert rc == cli.EXIT_FAILED
    assert any((out / "counterexamples").iterdir())


def test_falsify_unsupported_dims(tmp_path):
    assert run(tmp_path, "falsify", {"dims": [[4, 2]], "count": 10})[0] == cli.EXIT_CONFIG
    assert run(tmp_path, "falsify", {"inequalities": ["nope"]})[0] == cli.EXIT_CONFIG


def test_geometry_presets(tmp_path):
    rc, out = run(tmp_path, "geometry", {"immersion": {"preset": "totally_geodesic", "resolution": 16}})
    assert rc == cli.EXIT_OK
    s = json.loads((out / "summary.json").read_text())
    assert s["case"] == "UNSUPPORTED" and s["max_normh2"] <= 1e-6
    rc, out = run(tmp_path, "geometry", {"immersion": {"preset": "sphere", "r": 0.7, "resolution": 12}}, name="s")
    assert rc == cli.EXIT_OK
    s = json.loads((out / "summary.json").read_text())
    assert s["case"] == "HYPERSURFACE" and s["verdict"] == "STRICTLY_PINCHED"
    rows = list(csv.DictReader(open(out / "geometry.csv")))
    assert len(rows) == 12 ** 3 and "pinching_margin" in rows[0]


def test_geometry_bad_radius(tmp_path):
    assert run(tmp_path, "geometry", {"immersion": {"preset": "sphere", "r": 2.0}})[0] == cli.EXIT_CONFIG
    assert run(tmp_path, "geometry", {"immersion": {"preset": "snapshot", "path": "/nonexistent"}})[0] \
        == cli.EXIT_CONFIG


def test_flow_totally_geodesic_preset(tmp_path):
    rc, out = run(tmp_path, "flow", {"immersion": {"preset": "totally_geodesic", "resolution": 16}})
    assert rc == cli.EXIT_OK
    s = json.loads((out / "summary.json").read_text())
    assert s["classification"] == "DECAY_DETECTED"
    assert (out / "trajectory.csv").exists() and (out / "events.jsonl").exists()


def test_flow_small_sphere_echo_reproduces(tmp_path):
    cfg = {"immersion": {"preset": "sphere", "r": 0.7, "resolution": 10},
           "flow": {"max_steps": 12, "monitor_every": 4, "snapshot_every": 6}}
    rc, a = run(tmp_path, "flow", cfg, name="a")
    assert rc == cli.EXIT_OK
    s = json.loads((a / "summary.json").read_text())
    assert s["classification"] == "COMPLETED" and s["steps"] == 12
    echo = json.loads((a / "config.json").read_text())
    rc, b = run(tmp_path, "flow", echo, name="b")
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    snaps = sorted((a / "snapshots").iterdir())
    assert [p.name for p in snaps] == ["step_0000000.cpmcf", "step_0000006.cpmcf", "step_0000012.cpmcf"]
    # a snapshot feeds back in as an immersion preset
    rc, c = run(tmp_path, "geometry", {"immersion": {"preset": "snapshot", "path": str(snaps[-1])}}, name="c")
    assert rc == cli.EXIT_OK


def test_flow_pinching_required(tmp_path):
    cfg = {"immersion": {"preset": "clifford", "resolution": 16}, "flow": {"waive_pinching": False}}
    assert run(tmp_path, "flow", cfg)[0] == cli.EXIT_CONFIG


def test_print_defaults(tmp_path, capsys):
    assert cli.main(["flow", "--print-defaults"]) == cli.EXIT_OK
    d = json.loads(capsys.readouterr().out)
    assert d["immersion"]["preset"] == "sphere" and d["immersion"]["r"] == 0.6
