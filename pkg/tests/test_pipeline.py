import json
import math
import shutil

import numpy as np
import pytest

from tallyopt.cli import main
from tallyopt.config import load_config
from tallyopt.emulator import cost_of
from tallyopt.errors import ArtifactError, ConfigError
from tallyopt.pipeline import Study, degradation_check, level_tag, plateau_generation, read_csv

TINY = {
    "tuning.grid": "custom",
    "tuning.layers": [1],
    "tuning.neurons": [8],
    "tuning.learning_rates": [3e-3],
    "tuning.batch_sizes": [32],
    "tuning.max_epochs": 5,
    "nsga.population": 20,
    "nsga.generations": 5,
    "nsga.divisions": 19,
}


def tiny_config(out, **extra):
    return load_config(None, {**TINY, "out": str(out), **extra})


@pytest.fixture(scope="module")
def tiny_study(tmp_path_factory):
    study = Study(tiny_config(tmp_path_factory.mktemp("study"), repeats=2))
    study.run_all()
    return study


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.problem == "moderator"
        assert cfg.levels == (0.1, 0.075, 0.05, 0.03, 0.01)
        assert len(cfg.grid()) == 144
        assert cfg.nsga.population == 100 and cfg.nsga.divisions == 99

    def test_reduced_grid(self):
        assert len(load_config(None, {"tuning.grid": "reduced"}).grid()) == 8

    def test_converter_levels(self):
        assert load_config(None, {"problem": "converter"}).levels == (0.05, 0.035, 0.02, 0.01, 0.002)

    def test_levels_sorted_descending(self):
        assert load_config(None, {"levels": [0.01, 0.2, 0.05]}).levels == (0.2, 0.05, 0.01)

    def test_yaml_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("seed: 7\nnsga:\n  generations: 12\ntuning:\n  grid: reduced\n")
        cfg = load_config(p, {"seed": 8})
        assert cfg.seed == 8 and cfg.nsga.generations == 12 and cfg.tuning.grid == "reduced"

    @pytest.mark.parametrize("overrides,path", [
        ({"nsga.popsize": 4}, "nsga.popsize"),
        ({"nsga.population": "many"}, "nsga.population"),
        ({"levels": [0.1, 1.5]}, "levels[1]"),
        ({"tuning.grid": "huge"}, "tuning.grid"),
        ({"seed": -1}, "seed"),
        ({"problem": "reactor"}, "problem"),
        ({"tuning.grid": "custom"}, "tuning.layers"),
    ])
    def test_errors_name_the_path(self, overrides, path):
        with pytest.raises(ConfigError) as exc:
            load_config(None, overrides)
        assert str(exc.value).startswith(path)

    def test_unknown_key_in_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("tuning:\n  epochs: 3\n")
        with pytest.raises(ConfigError, match="tuning.epochs"):
            load_config(p)

    def test_fingerprint_tracks_sections(self):
        a, b = load_config(), load_config(None, {"nsga.generations": 5})
        assert a.fingerprint("tuning") == b.fingerprint("tuning")
        assert a.fingerprint("nsga") != b.fingerprint("nsga")


class TestHelpers:
    def test_level_tag(self):
        assert [level_tag(u) for u in (0.1, 0.075, 0.01, 0.002)] == ["u10", "u7.5", "u1", "u0.2"]

    def test_plateau(self):
        t = np.column_stack([np.arange(6), [1, 2, 3, 3, 3, 3], [5, 5, 5, 6, 6, 6]])
        assert plateau_generation(t) == 3
        assert plateau_generation(np.array([[0, 1.0, 1.0]])) == 0

    def test_degradation_check(self):
        rows = [(0.1, 0.8, 0.02), (0.01, 1.0, 0.02)]
        loss, diff, se = degradation_check(rows, 4)
        assert loss == pytest.approx(20.0) and diff == pytest.approx(0.2)
        assert se == pytest.approx(math.sqrt(2 * 0.02**2 / 4))


class TestStages:
    def test_missing_upstream(self, tmp_path):
        with pytest.raises(ArtifactError, match="optimize artifacts not found"):
            Study(tiny_config(tmp_path)).verify()

    def test_run_all_outputs(self, tiny_study):
        out = tiny_study.out
        _, rows = read_csv(out / "loss_table.csv")
        assert len(rows) == 5
        for name in ("tuning.csv", "report.json", "cost_summary.csv", "repeat_summary.csv",
                     "trace_u7.5.csv", "front_predicted_u1.csv", "front_verified_u10.csv",
                     "figures/traces.png", "figures/fronts_verified.png"):
            assert (out / name).exists(), name
        _, pred = read_csv(out / "front_predicted_u1.csv")
        assert len(pred) == 20
        ranks = [int(r[0]) for r in pred]
        assert ranks == sorted(ranks)

    def test_reference_row(self, tiny_study):
        _, rows = read_csv(tiny_study.out / "loss_table.csv")
        ref = [r for r in rows if float(r[0]) == 0.01][0]
        assert float(ref[3]) == 0.0

    def test_repeats_table(self, tiny_study):
        _, rows = read_csv(tiny_study.out / "repeats.csv")
        assert len(rows) == 10
        assert {int(r[0]) for r in rows} == {0, 1}

    def test_report_traceable(self, tiny_study):
        doc = json.loads((tiny_study.out / "report.json").read_text())
        _, rows = read_csv(tiny_study.out / "loss_table.csv")
        for r in rows:
            lvl = doc["levels"][level_tag(float(r[0]))]
            assert lvl["hv_polygon"] == float(r[1])
        assert set(doc["artifacts"]) >= {"gen-data", "verify", "repeat"}

    def test_cost_summary(self, tiny_study):
        _, rows = read_csv(tiny_study.out / "cost_summary.csv")
        cost = {float(r[0]): float(r[3]) for r in rows}
        assert cost[0.01] / cost[0.1] == pytest.approx(100.0, rel=4e-16)
        us = sorted(cost)
        assert all(cost[a] > cost[b] for a, b in zip(us, us[1:]))
        for u, c in cost.items():
            assert c * u * u == pytest.approx(750 * 1e-4, rel=1e-15)

    def test_converter_cost(self, tmp_path):
        study = Study(load_config(None, {**TINY, "problem": "converter", "levels": [0.05], "out": str(tmp_path)}))
        study.gen_data()
        study.cost_summary()
        _, rows = read_csv(tmp_path / "cost_summary.csv")
        assert float(rows[0][3]) == pytest.approx(2 * cost_of(0.05) * 1760, rel=1e-14)

    def test_rerun_is_byte_identical(self, tiny_study, tmp_path):
        other = Study(tiny_config(tmp_path, repeats=2))
        other.run_all()
        manifest = json.loads((tiny_study.out / "manifest.json").read_text())
        for entry in manifest["stages"].values():
            for rel in entry["files"]:
                assert (tmp_path / rel).read_bytes() == (tiny_study.out / rel).read_bytes(), rel
        assert (tmp_path / "manifest.json").read_bytes() == (tiny_study.out / "manifest.json").read_bytes()

    def test_config_change_marks_downstream_stale(self, tiny_study, tmp_path):
        work = tmp_path / "w"
        shutil.copytree(tiny_study.out, work)
        changed = Study(tiny_config(work, repeats=2, **{"nsga.generations": 6}))
        assert changed.stage_status("train") == "ok"
        assert changed.stage_status("optimize") == "stale"
        with pytest.raises(ArtifactError, match="optimize artifacts .* stale"):
            changed.verify()

    def test_modified_artifact_detected(self, tiny_study, tmp_path):
        work = tmp_path / "w"
        shutil.copytree(tiny_study.out, work)
        (work / "trace_u1.csv").write_text("generation,best_f1,best_f2\n")
        study = Study(tiny_config(work, repeats=2))
        assert study.stage_status("optimize") == "modified"
        with pytest.raises(ArtifactError, match="modified"):
            study.verify()

    def test_resume_skips_current_stages(self, tiny_study, tmp_path, caplog):
        work = tmp_path / "w"
        shutil.copytree(tiny_study.out, work)
        caplog.set_level("INFO")
        Study(tiny_config(work, repeats=2)).run_all(resume=True)
        assert caplog.text.count("up to date") == 8


class TestCli:
    def test_missing_upstream_exit_code(self, tmp_path, capsys):
        assert main(["verify", "--out", str(tmp_path)]) == 2
        assert "optimize artifacts not found" in capsys.readouterr().err

    def test_bad_override(self, tmp_path, capsys):
        assert main(["gen-data", "--out", str(tmp_path), "--nsga.bogus", "1"]) == 2
        assert "nsga.bogus" in capsys.readouterr().err

    def test_stage_commands(self, tmp_path, capsys):
        args = ["--out", str(tmp_path), "--seed", "3"]
        for k, v in TINY.items():
            args += [f"--{k}", json.dumps(v)]
        for cmd in ("gen-data", "tune", "train", "optimize", "verify", "repeat", "cost-summary", "report"):
            assert main([cmd, *args]) == 0, cmd
        assert (tmp_path / "report.json").exists()
        doc = json.loads((tmp_path / "manifest.json").read_text())
        assert doc["config"]["seed"] == 3

    def test_fast_grid_flag(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path), "--fast-grid", "--levels", "[0.1]"]) == 0
        doc = json.loads((tmp_path / "manifest.json").read_text())
        assert doc["config"]["tuning"]["grid"] == "reduced"
