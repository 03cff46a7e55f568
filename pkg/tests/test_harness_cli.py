import csv
import json
import os

import numpy as np
import pytest

from imgnb import cli
from imgnb.config import (ConfigError, apply_overrides, config_to_text, load_config,
                          parse_config_text)
from imgnb.harness import (CSV_HEADER, WORKERS_ENV, aggregate, blob_hash, resolve_workers,
                           run_experiment, run_seeds, sweep)

SMALL = """\
# tiny planted world
experiment.runs = 2
experiment.rounds = 6
experiment.seed = 11
env.m_prime = 4
synthetic.n_arms = 3
synthetic.n_users = 120
synthetic.d1 = 3
synthetic.d2 = 3
synthetic.n_groups = 3
synthetic.n_contexts = 5
synthetic.base_rate = 0.2
imgnb.hidden = 4
imgnb.user_hidden = 4
imgnb.buffer_size = 16
imgnb.epochs = 2
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(SMALL)
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- config ------------------------------------------------------------------

def test_config_parsing_and_round_trip(cfg_path):
    cfg = load_config(cfg_path)
    assert cfg.experiment.rounds == 6 and cfg.synthetic.base_rate == 0.2
    assert cfg.imgnb.gamma == 3 and cfg.imgnb.bandwidth == 5.0
    again = parse_config_text(config_to_text(cfg))
    assert config_to_text(again) == config_to_text(cfg)


@pytest.mark.parametrize("text, match", [
    ("experiment.rounds 5", "line 1"),
    ("\nfoo.bar = 1", "line 2"),
    ("experiment.colour = 1", "unknown key"),
    ("experiment.rounds = 'many'", "experiment.rounds"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text)


@pytest.mark.parametrize("override", ["experiment.rounds=0", "experiment.runs=0",
                                      "experiment.policy='ucb1'", "env.kind='cube'",
                                      "experiment.n_seeds=4", "env.m_prime=-1",
                                      "imgnb.boost_factor=-1", "env.cluster_map='nope.tsv'"])
def test_validation_rejects_before_any_run(cfg_path, tmp_path, override):
    cfg = apply_overrides(load_config(cfg_path), [override])
    out = tmp_path / "out"
    with pytest.raises(ConfigError):
        run_experiment(cfg, str(out))
    assert not out.exists()


def test_replay_config_needs_existing_log(cfg_path):
    cfg = apply_overrides(load_config(cfg_path), ["env.kind='replay'", "replay.log='x.tsv'"])
    with pytest.raises(ConfigError, match="not found"):
        cfg.validate()


# -- seeds and workers -------------------------------------------------------

def test_run_seeds_are_stable_and_distinct():
    assert run_seeds(0, 0) == run_seeds(0, 0)
    assert len({run_seeds(0, r) for r in range(50)}) == 50
    assert run_seeds(0, 1) != run_seeds(1, 0)


def test_worker_precedence(cfg_path, monkeypatch):
    cfg = apply_overrides(load_config(cfg_path), ["experiment.workers=3"])
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert resolve_workers(cfg) == 3
    monkeypatch.setenv(WORKERS_ENV, "2")
    assert resolve_workers(cfg) == 2
    assert resolve_workers(cfg, 5) == 5
    monkeypatch.setenv(WORKERS_ENV, "two")
    with pytest.raises(ConfigError):
        resolve_workers(cfg)
    monkeypatch.delenv(WORKERS_ENV)
    assert resolve_workers(apply_overrides(cfg, ["experiment.workers=0"])) == 1


# -- runs --------------------------------------------------------------------

def test_single_round_single_arm(cfg_path, tmp_path):
    cfg = apply_overrides(load_config(cfg_path), ["experiment.runs=1", "experiment.rounds=1",
                                                  "synthetic.n_arms=1",
                                                  "experiment.policy='random'"])
    (path,) = run_experiment(cfg, str(tmp_path / "o"))
    rows = read_rows(path)
    assert rows[0] == CSV_HEADER and len(rows) == 2
    run, t, reward, cum, arms, ms = rows[1]
    assert (run, t, arms, ms) == ("0", "1", "0", "0") and reward == cum


@pytest.mark.parametrize("policy", ["imgnb", "linucb", "random"])
def test_runs_are_byte_identical_on_repeat(cfg_path, tmp_path, policy):
    cfg = apply_overrides(load_config(cfg_path), [f"experiment.policy='{policy}'"])
    a = run_experiment(cfg, str(tmp_path / "a"))
    b = run_experiment(cfg, str(tmp_path / "b"), workers=2)
    for pa, pb in zip(a, b):
        with open(pa, "rb") as fa, open(pb, "rb") as fb:
            assert fa.read() == fb.read()
    rows = read_rows(a[0])[1:]
    cum = [int(r[3]) for r in rows]
    assert cum == list(np.cumsum([int(r[2]) for r in rows]))


def test_manifest_is_complete(cfg_path, tmp_path):
    cfg = load_config(cfg_path)
    paths = run_experiment(cfg, str(tmp_path / "o"), config_path=cfg_path)
    with open(tmp_path / "o" / "manifest.json") as fh:
        man = json.load(fh)
    assert man["schema"] == ",".join(CSV_HEADER)
    assert man["policy"] == "imgnb"
    assert man["runs"] == [os.path.basename(p) for p in paths]
    assert man["config"]["experiment"]["seed"] == 11
    assert man["config"]["imgnb"]["gamma"] == 3
    assert man["inputs"]["config"]["sha1"] == blob_hash(cfg_path)


def test_blob_hash_matches_git_object_id(tmp_path):
    path = tmp_path / "hello"
    path.write_bytes(b"hello\n")
    assert blob_hash(path) == "ce013625030ba8dba906f756967f9e9ca394464a"


# -- aggregation -------------------------------------------------------------

def write_run(path, run, cums):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        prev = 0
        for t, c in enumerate(cums, start=1):
            w.writerow([run, t, c - prev, c, "0", 0])
            prev = c


def test_aggregate_single_run_has_zero_std(tmp_path):
    write_run(tmp_path / "run_000.csv", 0, [3, 5, 9])
    res = aggregate(str(tmp_path / "run_*.csv"))
    assert res.final("unknown") == (9.0, 0.0)
    assert [r[4] for r in res.rounds] == [0.0, 0.0, 0.0]


def test_aggregate_mean_and_population_std(tmp_path):
    write_run(tmp_path / "run_000.csv", 0, [4, 10])
    write_run(tmp_path / "run_001.csv", 1, [6, 14])
    res = aggregate(str(tmp_path / "run_*.csv"))
    assert res.final("unknown") == (12.0, 2.0)
    assert res.rounds[0][3:] == (5.0, 1.0)
    assert "unknown,2,12.000000,2.000000" in res.finals_csv()


def test_aggregate_is_permutation_invariant(tmp_path):
    rng = np.random.default_rng(0)
    finals = rng.random(7) * 1000
    for k, v in enumerate(finals):
        write_run(tmp_path / f"run_{k:03d}.csv", k, [int(v)])
    base = aggregate(str(tmp_path / "run_*.csv")).finals
    paths = [str(tmp_path / f"run_{k:03d}.csv") for k in range(7)]
    for perm in range(5):
        order = list(rng.permutation(paths))
        assert aggregate(order).finals == base


def test_aggregate_schema_mismatch_names_file(tmp_path):
    write_run(tmp_path / "run_000.csv", 0, [1, 2])
    bad = tmp_path / "run_001.csv"
    bad.write_text("run,t,reward\n0,1,1\n")
    with pytest.raises(ValueError, match="run_001.csv"):
        aggregate(str(tmp_path / "run_*.csv"))
    write_run(bad, 1, [1, 2, 3])
    with pytest.raises(ValueError, match="run_001.csv"):
        aggregate(str(tmp_path / "run_*.csv"))


def test_aggregate_groups_by_policy(cfg_path, tmp_path):
    cfg = load_config(cfg_path)
    for pol in ("random", "linucb"):
        run_experiment(apply_overrides(cfg, [f"experiment.policy='{pol}'"]),
                       str(tmp_path / pol))
    res = aggregate(str(tmp_path / "*" / "run_*.csv"))
    assert [r[0] for r in res.finals] == ["linucb", "random"]


def test_aggregate_needs_files(tmp_path):
    with pytest.raises(ValueError):
        aggregate(str(tmp_path / "*.csv"))


# -- sweeps ------------------------------------------------------------------

def test_single_value_sweep_equals_plain_run(cfg_path, tmp_path):
    cfg = load_config(cfg_path)
    rows = sweep(cfg, "m_prime", [4], str(tmp_path / "s"))
    plain = aggregate(run_experiment(cfg, str(tmp_path / "p"))).final("imgnb")
    assert rows == [(4, plain[0], plain[1])]
    with open(tmp_path / "s" / "m_prime=4" / "run_000.csv", "rb") as a, \
            open(tmp_path / "p" / "run_000.csv", "rb") as b:
        assert a.read() == b.read()


def test_sweep_over_all_seeds_ties_every_policy(cfg_path, tmp_path):
    cfg = load_config(cfg_path)
    finals = {}
    for pol in ("imgnb", "linucb", "random"):
        c = apply_overrides(cfg, [f"experiment.policy='{pol}'"])
        finals[pol] = sweep(c, "L", [3], str(tmp_path / pol))
    assert finals["imgnb"] == finals["linucb"] == finals["random"]


def test_sweep_rejects_unknown_parameter(cfg_path):
    with pytest.raises(ConfigError, match="unknown sweep parameter"):
        sweep(load_config(cfg_path), "colour", [1])


# -- CLI ---------------------------------------------------------------------

def test_cli_run_prints_finals(cfg_path, tmp_path, capsys):
    assert cli.main(["run", cfg_path, "-o", str(tmp_path / "o"),
                     "--set", "experiment.runs=1"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "policy,n_runs,mean_final,std_final"
    assert out[1].startswith("imgnb,1,")


def test_cli_aggregate(cfg_path, tmp_path, capsys):
    cli.main(["run", cfg_path, "-o", str(tmp_path / "o")])
    capsys.readouterr()
    assert cli.main(["aggregate", str(tmp_path / "o" / "run_*.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "policy,t,n_runs,mean,std" and len(lines) == 7
    target = tmp_path / "finals.csv"
    assert cli.main(["aggregate", str(tmp_path / "o" / "run_*.csv"), "--finals",
                     "-o", str(target)]) == 0
    assert target.read_text().startswith("policy,n_runs,mean_final,std_final\nimgnb,2,")


def test_cli_sweep(cfg_path, tmp_path, capsys):
    assert cli.main(["sweep", cfg_path, "--param", "gamma", "--values", "0,2",
                     "-o", str(tmp_path / "s"), "--set", "experiment.runs=1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "gamma,mean_final,std_final"
    assert [l.split(",")[0] for l in lines[1:]] == ["0", "2"]


def test_cli_gen_synthetic_and_cluster(cfg_path, tmp_path):
    log_path = tmp_path / "log.tsv"
    assert cli.main(["gen-synthetic", cfg_path, "-o", str(log_path),
                     "--set", "synthetic.n_events=60"]) == 0
    text = log_path.read_text().splitlines()
    assert text[0] == "#eventlog v1 arms=3 d2=3" and len(text) == 61
    map_path = tmp_path / "map.tsv"
    assert cli.main(["cluster", str(log_path), "--groups", "3", "-o", str(map_path)]) == 0
    labels = {int(l.split("\t")[1]) for l in map_path.read_text().splitlines()}
    assert labels == {0, 1, 2}


def test_cli_replay_run_with_cluster_map(cfg_path, tmp_path, capsys):
    log_path, map_path = tmp_path / "log.tsv", tmp_path / "map.tsv"
    cli.main(["gen-synthetic", cfg_path, "-o", str(log_path), "--set", "synthetic.n_events=80"])
    cli.main(["cluster", str(log_path), "--groups", "3", "-o", str(map_path)])
    capsys.readouterr()
    assert cli.main(["run", cfg_path, "-o", str(tmp_path / "o"),
                     "--set", "env.kind='replay'", "--set", f"replay.log='{log_path}'",
                     "--set", f"env.cluster_map='{map_path}'"]) == 0
    with open(tmp_path / "o" / "manifest.json") as fh:
        inputs = json.load(fh)["inputs"]
    assert inputs["replay.log"]["sha1"] == blob_hash(log_path)
    assert inputs["env.cluster_map"]["sha1"] == blob_hash(map_path)


def test_cli_show_config(cfg_path, capsys):
    assert cli.main(["show-config", cfg_path, "--set", "imgnb.gamma=1"]) == 0
    out = capsys.readouterr().out
    assert "imgnb.gamma = 1" in out and "experiment.rounds = 6" in out


@pytest.mark.parametrize("argv", [
    ["run", "missing.cfg"],
    ["run", "{cfg}", "--set", "experiment.rounds=0"],
    ["run", "{cfg}", "--set", "nonsense"],
    ["aggregate", "/nonexistent/*.csv"],
    ["cluster", "/nonexistent.tsv", "--groups", "2", "-o", "x"],
])
def test_cli_errors_are_one_line(cfg_path, capsys, argv):
    argv = [a.replace("{cfg}", cfg_path) for a in argv]
    assert cli.main(argv) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ") and err.count("\n") == 1


def test_cli_usage_error_is_one_line(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep", "x.cfg", "--param", "colour", "--values", "1"])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert err.startswith("error: ") and err.count("\n") == 1
