import csv
import json
import math

import pytest
import yaml

from fedsim.cli import cli_main
from fedsim.config import (ExperimentConfig, apply_env, apply_overrides, config_from_dict, dump_config,
                           load_config)
from fedsim.errors import ConfigError
from fedsim.metrics import CSV_COLUMNS, MetricsRecord, read_csv, write_metrics
from fedsim.presets import HIGHLIGHTED_DEFENSES, preset, preset_names
from fedsim.runner import RunError, run_experiment

ATTACKS = ("byz_zero", "byz_random", "byz_flip", "label_flip")


def write_yaml(tmp_path, data, name="exp.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def csv_without_timing(path):
    with open(path, newline="") as fh:
        return [row[:-1] for row in csv.reader(fh)]


# --- config ------------------------------------------------------------------

def test_empty_config_gets_defaults():
    cfg = config_from_dict({})
    assert cfg == ExperimentConfig()
    assert cfg.attack_spec() is None and cfg.defense_spec() is None


def test_unknown_keys_are_rejected_with_their_path():
    with pytest.raises(ConfigError, match="common.sede"):
        config_from_dict({"common": {"sede": 1}})
    with pytest.raises(ConfigError, match="extras"):
        config_from_dict({"extras": {}})
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"security": {"enable_defense": True, "defense_type": "krum",
                                       "defense_args": {"bogus": 1}}})


def test_type_errors_name_the_key():
    with pytest.raises(ConfigError, match="common.rounds"):
        config_from_dict({"common": {"rounds": "many"}})
    with pytest.raises(ConfigError, match="security.enable_attack"):
        config_from_dict({"security": {"enable_attack": "yes"}})


def test_enable_attack_requires_attack_type():
    with pytest.raises(ConfigError, match="attack_type"):
        config_from_dict({"security": {"enable_attack": True}})
    with pytest.raises(ConfigError, match="defense_type"):
        config_from_dict({"security": {"enable_defense": True}})


def test_mkrum_bound_checked_against_round_size():
    sec = {"enable_defense": True, "defense_type": "mkrum", "defense_args": {"krum_m": 5, "byzantine_f": 1}}
    config_from_dict({"common": {"clients_total": 10, "clients_per_round": 10}, "security": sec})
    with pytest.raises(ConfigError, match="krum_m"):
        config_from_dict({"common": {"clients_total": 10, "clients_per_round": 9}, "security": sec})


def test_flip_pairs_checked_against_classes():
    with pytest.raises(ConfigError, match="flip_pairs"):
        config_from_dict({"data": {"num_classes": 5}, "security": {
            "enable_attack": True, "attack_type": "label_flip", "attack_args": {"flip_pairs": [[3, 9]]}}})


def test_load_twice_and_dump_round_trip(tmp_path):
    path = write_yaml(tmp_path, preset("attackXdefense-label_flip-foolsgold").to_dict())
    a, b = load_config(path, env={}), load_config(path, env={})
    assert a == b == preset("attackXdefense-label_flip-foolsgold")
    again = write_yaml(tmp_path, yaml.safe_load(dump_config(a)), "again.yaml")
    assert load_config(again, env={}) == a


def test_invalid_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("common: [unclosed")
    with pytest.raises(ConfigError):
        load_config(path)


def test_overrides_and_env():
    cfg = preset("benign")
    out = apply_overrides(cfg, ["common.rounds=3", "data.class_sep=2", "security.enable_attack=false"])
    assert out.common.rounds == 3 and out.data.class_sep == 2.0
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["common.nope=1"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["common.rounds"])
    assert apply_env(cfg, {"FEDSIM_SEED": "17"}).common.seed == 17
    assert apply_env(cfg, {}).common.seed == cfg.common.seed
    with pytest.raises(ConfigError):
        apply_env(cfg, {"FEDSIM_SEED": "x"})


# --- presets -------------------------------------------------------------------

def test_preset_examples():
    assert not preset("benign").security.enable_attack and not preset("benign").security.enable_defense
    pairs = preset("attack-label_flip").attack_spec().flip_pairs
    assert pairs == ((3, 9), (2, 1))
    assert preset("attackXdefense-byz_random-mkrum").security.defense_args["krum_m"] == 5
    assert preset("attackXdefense-byz_random-mkrum").security.defense_args["byzantine_f"] == 1


def test_preset_grid_is_complete_and_valid():
    names = set(preset_names())
    for a in ATTACKS:
        for d in HIGHLIGHTED_DEFENSES:
            name = f"attackXdefense-{a}-{d}"
            assert name in names
            cfg = preset(name)
            assert cfg.attack_spec() is not None and cfg.defense_spec().kind == d
    for name in names:
        preset(name)


def test_presets_share_the_base():
    base = preset("benign").to_dict()
    for name in preset_names():
        d = preset(name).to_dict()
        for section in d:
            if section not in ("security", "name"):
                assert d[section] == base[section], (name, section)


def test_unknown_preset_lists_the_catalog():
    with pytest.raises(ConfigError, match="attack-byz_zero"):
        preset("attack-nope")


# --- runs ----------------------------------------------------------------------

def short(name, rounds=3, **kw):
    return apply_overrides(preset(name), [f"common.rounds={rounds}"] + [f"{k}={v}" for k, v in kw.items()])


def test_run_writes_outputs(tmp_path):
    records = run_experiment(short("attackXdefense-label_flip-foolsgold"), tmp_path)
    assert len(records) == 3
    rows = read_csv(tmp_path / "metrics.csv")
    assert len(rows) == 3 and all(math.isfinite(v) for r in rows for v in r.values())
    assert (tmp_path / "metrics.csv").read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert [MetricsRecord.from_dict(m) for m in summary["metrics"]] == records
    assert summary["final_accuracy"] == records[-1].test_accuracy
    assert (tmp_path / "defender_state.bin").exists()


def test_stateless_defense_writes_no_state(tmp_path):
    run_experiment(short("defense-rfa", rounds=1), tmp_path)
    assert not (tmp_path / "defender_state.bin").exists()


def test_run_is_deterministic(tmp_path):
    run_experiment(short("attackXdefense-byz_random-rfa"), tmp_path / "a")
    run_experiment(short("attackXdefense-byz_random-rfa"), tmp_path / "b")
    assert csv_without_timing(tmp_path / "a/metrics.csv") == csv_without_timing(tmp_path / "b/metrics.csv")


def test_disabled_attack_is_bit_identical_to_no_security_block():
    raw = preset("benign").to_dict()
    raw["common"]["rounds"] = 4
    plain = {k: v for k, v in raw.items() if k != "security"}
    gated = dict(raw, security={"enable_attack": False, "attack_type": "byzantine",
                                "attack_args": {"byzantine_mode": "zero"}, "enable_defense": False})
    a = [r.without_timing() for r in run_experiment(config_from_dict(plain))]
    b = [r.without_timing() for r in run_experiment(config_from_dict(gated))]
    assert a == b


def test_metrics_csv_line_count(tmp_path):
    recs = [MetricsRecord(i, 0.5, 1.0, 1.0, 3) for i in range(3)]
    write_metrics(recs, tmp_path, {}, ["csv"])
    assert len((tmp_path / "metrics.csv").read_text().splitlines()) == 4
    assert not (tmp_path / "summary.json").exists()


def test_engine_errors_carry_round_context():
    cfg = short("benign", **{"optimizer.kind": "fedopt"})
    from fedsim import runner
    original = runner.run_round

    def fail_on_second(state, *a, **k):
        if state.round_index == 1:
            raise ValueError("boom")
        return original(state, *a, **k)

    runner.run_round = fail_on_second
    try:
        with pytest.raises(RunError, match="round 1"):
            run_experiment(cfg)
    finally:
        runner.run_round = original


# --- CLI -----------------------------------------------------------------------

def test_cli_validate(tmp_path, capsys):
    good = write_yaml(tmp_path, {"common": {"rounds": 2}})
    assert cli_main(["validate", "--config", str(good)]) == 0
    assert capsys.readouterr().out.strip() == "OK"
    bad = write_yaml(tmp_path, {"common": {"roundz": 2}}, "bad.yaml")
    assert cli_main(["validate", "--config", str(bad)]) == 1
    assert "roundz" in capsys.readouterr().err


def test_cli_list_presets(capsys):
    assert cli_main(["list-presets"]) == 0
    assert capsys.readouterr().out.split() == preset_names()


def test_cli_run_preset(tmp_path):
    out = tmp_path / "run"
    assert cli_main(["run", "--preset", "benign", "--override", "common.rounds=2", "--output-dir", str(out)]) == 0
    assert len((out / "metrics.csv").read_text().splitlines()) == 3


def test_cli_seed_precedence(tmp_path, monkeypatch):
    path = write_yaml(tmp_path, {"common": {"rounds": 1, "seed": 1}})
    monkeypatch.setenv("FEDSIM_SEED", "2")
    assert cli_main(["run", "--config", str(path), "--output-dir", str(tmp_path / "env")]) == 0
    assert json.loads((tmp_path / "env/summary.json").read_text())["config"]["common"]["seed"] == 2
    assert cli_main(["run", "--config", str(path), "--seed", "3", "--output-dir", str(tmp_path / "flag")]) == 0
    assert json.loads((tmp_path / "flag/summary.json").read_text())["config"]["common"]["seed"] == 3


def test_cli_default_output_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli_main(["run", "--preset", "benign", "--override", "common.rounds=1"]) == 0
    (run_dir,) = (tmp_path / "runs").iterdir()
    assert run_dir.name.endswith("-benign") and (run_dir / "metrics.csv").exists()


@pytest.mark.parametrize("argv", [[], ["bogus"], ["run"], ["run", "--preset", "benign", "--config", "x.yaml"],
                                  ["run", "--preset", "benign", "--seed", "abc"]])
def test_cli_usage_errors_exit_2(argv, capsys):
    assert cli_main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_cli_runtime_errors_exit_1(tmp_path, capsys):
    assert cli_main(["run", "--preset", "nope"]) == 1
    assert cli_main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert cli_main(["run", "--preset", "benign", "--override", "common.rounds=zero"]) == 1
