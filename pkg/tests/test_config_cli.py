import csv
import json

import pytest
import yaml

from heavybrw.cli import EXIT_CAP, EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from heavybrw.config import ConfigError, RunSettings, build_config, config_hash, load_config

BASE = {
    "seed": 7,
    "model": {"types": 1, "offspring": {"family": "independent", "pmfs": {1: 0.5, 3: 0.5}}},
    "displacement": {"alpha": 1.0, "beta": 0.5, "joint": "iid"},
    "run": {"n": 5, "replicas": 20, "n_grid": [4, 5], "K": [2], "B": [1, 2],
            "w_depth": 6, "w_samples": 500, "limit_samples": 500, "mc": 2000},
}


def write(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return str(p)


def read_csv(path):
    lines = path.read_text().splitlines()
    meta = [ln for ln in lines if ln.startswith("#")]
    rows = list(csv.DictReader(ln for ln in lines if not ln.startswith("#")))
    return meta, rows


# --- config ------------------------------------------------------------------

def test_seed_required():
    raw = dict(BASE)
    raw.pop("seed")
    with pytest.raises(ConfigError):
        build_config(raw)
    assert build_config(raw, seed=3).seed == 3


@pytest.mark.parametrize("seed", [-1, 1 << 64, "abc"])
def test_seed_range(seed):
    with pytest.raises(ConfigError):
        build_config(BASE, seed=seed)


def test_unknown_run_key():
    with pytest.raises(ConfigError):
        RunSettings.from_mapping({"replica": 5})


@pytest.mark.parametrize("block", [{"n": 0}, {"theta": 0.0}, {"cap_tolerance": 2.0}])
def test_run_ranges(block):
    with pytest.raises(ConfigError):
        RunSettings.from_mapping(block)


def test_bad_model_blocks():
    with pytest.raises(ConfigError):
        build_config({**BASE, "displacement": {"alpha": 1.0, "joint": "copula"}})
    with pytest.raises(ConfigError):
        build_config({k: v for k, v in BASE.items() if k != "model"})


def test_hash_ignores_output_and_key_order(monkeypatch, tmp_path):
    a = build_config({**BASE, "output": "x"})
    b = build_config(dict(reversed(list(BASE.items()))))
    assert a.hash == b.hash == config_hash(b.raw)
    assert build_config({**BASE, "seed": 8}).hash != a.hash
    monkeypatch.setenv("HEAVYBRW_OUT", str(tmp_path / "env"))
    assert build_config(BASE).output == tmp_path / "env"
    assert build_config(BASE, out="cli").output.name == "cli"


def test_load_config_rejects_non_mapping(tmp_path):
    p = tmp_path / "list.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(p)


# --- cli ---------------------------------------------------------------------

def test_validate_writes_report(tmp_path):
    cfg = write(tmp_path, BASE)
    out = tmp_path / "o"
    assert main(["validate", "--config", cfg, "--out", str(out)]) == EXIT_OK
    doc = json.loads((out / "validate.json").read_text())
    assert doc["data"]["ok"] and doc["data"]["rho"] == pytest.approx(2.0)
    assert doc["provenance"] == {"config_sha256": build_config(BASE).hash, "seed": 7}


def test_validate_fails_on_leaf_model(tmp_path):
    raw = {**BASE, "model": {"types": 1, "offspring": {"family": "independent",
                                                        "pmfs": {0: 0.25, 3: 0.75}}}}
    assert main(["validate", "--config", write(tmp_path, raw), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_simulate_csv_contract(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", write(tmp_path, BASE), "--seed", "11", "--out", str(out)]) == EXIT_OK
    meta, rows = read_csv(out / "replicas.csv")
    assert meta == [f"# config_sha256: {build_config(BASE, seed=11).hash}", "# seed: 11"]
    assert list(rows[0]) == ["replica", "n", "M_n_over_bn", "W_hat", "total", "flag_1", "aborted"]
    assert len(rows) == 20
    assert json.loads((out / "summary.json").read_text())["provenance"]["seed"] == 11


def test_simulate_thread_count_does_not_change_output(tmp_path):
    cfg = write(tmp_path, BASE)
    blobs = []
    for t in (1, 3):
        out = tmp_path / f"t{t}"
        assert main(["simulate", "--config", cfg, "--threads", str(t), "--out", str(out)]) == EXIT_OK
        blobs.append(((out / "replicas.csv").read_bytes(), (out / "summary.json").read_bytes()))
    assert blobs[0] == blobs[1]


def test_cap_abort_exit_code(tmp_path):
    raw = {**BASE, "run": {**BASE["run"], "population_cap": 10}}
    out = tmp_path / "o"
    assert main(["simulate", "--config", write(tmp_path, raw), "--out", str(out)]) == EXIT_CAP
    _, rows = read_csv(out / "replicas.csv")
    assert any(r["aborted"] == "1" for r in rows)


def test_cap_tolerance_allows_partial(tmp_path):
    raw = {**BASE, "run": {**BASE["run"], "population_cap": 10, "cap_tolerance": 1.0}}
    assert main(["simulate", "--config", write(tmp_path, raw), "--out", str(tmp_path / "o")]) == EXIT_OK


def test_missing_config_is_io_error(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "nope.yaml")]) == EXIT_IO


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["validate", "--config", write(tmp_path, BASE), "--out", str(blocker / "sub")]) == EXIT_IO


def test_invalid_config_exit_code(tmp_path):
    raw = {**BASE, "run": {"bogus": 1}}
    assert main(["simulate", "--config", write(tmp_path, raw)]) == EXIT_CONFIG
    assert main(["simulate", "--config", write(tmp_path, BASE), "--threads", "0"]) == EXIT_CONFIG


@pytest.mark.parametrize("command, files", [
    ("limit", ["limit_cdf.csv", "limit_summary.json", "limit_points.json"]),
    ("maxdist", ["maxdist.csv", "maxdist.json"]),
    ("onejump", ["onejump.csv", "onejump.json"]),
    ("convergence", ["convergence.csv", "convergence.json"]),
    ("superpose", ["superpose.csv", "superpose.json"]),
])
def test_commands_write_artifacts(tmp_path, command, files):
    out = tmp_path / "o"
    assert main([command, "--config", write(tmp_path, BASE), "--out", str(out)]) == EXIT_OK
    for f in files:
        assert (out / f).exists()
        if f.endswith(".csv"):
            meta, _ = read_csv(out / f)
            assert meta[1] == "# seed: 7"
        else:
            assert json.loads((out / f).read_text())["provenance"]["seed"] == 7


def test_convergence_columns(tmp_path):
    out = tmp_path / "o"
    main(["convergence", "--config", write(tmp_path, BASE), "--out", str(out)])
    _, rows = read_csv(out / "convergence.csv")
    assert list(rows[0]) == ["n", "K", "B", "f_id", "mean_abs_gap", "stderr"]


def test_maxdist_with_every_replica_aborted(tmp_path):
    # at least four particles by generation 2, so a cap of 2 stops every replica
    model = {"types": 1, "offspring": {"family": "independent", "pmfs": {2: 0.5, 3: 0.5}}}
    raw = {**BASE, "model": model, "run": {**BASE["run"], "population_cap": 2}}
    out = tmp_path / "o"
    assert main(["maxdist", "--config", write(tmp_path, raw), "--out", str(out)]) == EXIT_CAP
    assert json.loads((out / "maxdist.json").read_text())["data"]["replicas"] == 0


@pytest.mark.parametrize("vec, want", [([[3, 1], [1, 3]], None), ([[1, 1], [1, 2]], 1.1708203932499369)])
def test_deterministic_w_is_exact(vec, want):
    from heavybrw.experiments import w_source
    from heavybrw.rng import stream
    from heavybrw.simulator import estimate_W
    raw = {"seed": 1, "model": {"types": 2, "offspring": {"family": "deterministic", "vector": vec}},
           "displacement": {"alpha": 1.0, "dominated": [{}]}}
    cfg = build_config(raw)
    w = w_source(cfg)
    if want is None:
        assert w is None
    else:
        assert w[0] == pytest.approx(want, rel=1e-12)
        assert estimate_W(cfg.bmodel, 8, 1, stream(0, "w"))[0] == pytest.approx(want, rel=1e-6)


def test_malformed_pmfs_is_config_error(tmp_path):
    model = {"types": 2, "offspring": {"family": "independent", "pmfs": [{1: 1.0}, {2: 1.0}]}}
    assert main(["validate", "--config", write(tmp_path, {**BASE, "model": model})]) == EXIT_CONFIG
