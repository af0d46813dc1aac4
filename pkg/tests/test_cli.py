import json
import math

import pytest

from conical import cli
from conical.config import RunConfig, load_config
from conical.report import baseline_drift, load_baseline
from conical.suites import CheckRecord, SuiteResult


def run(tmp_path, *args):
    return cli.main(list(args) + ["--out", str(tmp_path)])


class TestConfig:
    def test_defaults_valid(self):
        assert load_config(env={}).M == 3

    def test_layering(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"N": 3, "seed": 5, "energy_points": 7}))
        cfg = load_config(str(path), env={"CONICAL_SEED": "9", "CONICAL_ENERGY_POINTS": "4"},
                          N=4)
        assert (cfg.N, cfg.seed, cfg.energy_points) == (4, 9, 4)

    def test_env_list_and_case(self):
        cfg = load_config(env={"CONICAL_n_values": "[2, 3]", "CONICAL_R_MIN": "1e-6"})
        assert cfg.N_values == [2, 3] and cfg.r_min == 1e-6

    def test_rejections(self, tmp_path):
        with pytest.raises(ValueError):
            load_config(env={}, alpha=math.pi / 2)
        with pytest.raises(ValueError):
            load_config(env={}, theta_step=1.0)
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"nonsense": 1}))
        with pytest.raises(ValueError):
            load_config(str(bad), env={})

    def test_round_trip(self):
        cfg = RunConfig()
        assert RunConfig(**cfg.to_dict()) == cfg


class TestBuild:
    def test_en_manifest(self, tmp_path):
        assert run(tmp_path, "build", "--set", "export_depth=1") == 0
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert set(man) == {"construction", "params", "derived", "checksums"}
        d = man["derived"]
        assert d["n_slots"] == 32
        assert d["log2_r"][0] == -8.5
        assert d["log2_bad_length"] == -13.0
        assert set(man["checksums"]) == {"graph.csv", "layer0.csv", "layer1.csv"}

    def test_jm_ball_list(self, tmp_path):
        assert run(tmp_path, "build", "--construction", "jm") == 0
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["derived"]["ball_count"] == 3 ** 6 * math.factorial(6) == 524880
        with open(tmp_path / "generation6.csv") as fh:
            assert sum(1 for _ in fh) == 524880 + 1

    def test_invalid_alpha(self, tmp_path, capsys):
        assert run(tmp_path, "build", "--alpha", "1.6") == 2
        assert "alpha" in capsys.readouterr().err


class TestVerify:
    def test_graph_suite(self, tmp_path):
        assert run(tmp_path, "verify", "--suite", "p-props") == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        tags = {r["tag"]: r["status"] for r in rep["suites"][0]["records"]}
        for t in ("M3N2/endpoints-vanish", "M3N2/unit-slope-on-slots", "M3N2/counting"):
            assert tags[t] == "pass"

    def test_failure_sets_exit_code(self, tmp_path, monkeypatch):
        def broken(cfg):
            res = SuiteResult("p-props")
            res.record("always", False)
            return res

        monkeypatch.setitem(cli.SUITES, "p-props", broken)
        assert run(tmp_path, "verify", "--suite", "p-props") == 1

    def test_cone_lemma_suite(self, tmp_path):
        assert run(tmp_path, "verify", "--suite", "cone-lemma",
                   "--set", "cone_lemma_samples=2000") == 0

    def test_suite_outputs_and_figures(self, tmp_path):
        assert run(tmp_path, "verify", "--suite", "jm-diverge",
                   "--set", "K_values=[16,32,64]") == 0
        assert (tmp_path / "jm-diverge_partial_sums.csv").exists()
        assert (tmp_path / "jm-diverge_jm_partial_sums.png").stat().st_size > 0
        lines = (tmp_path / "jm-diverge_energy.csv").read_text().splitlines()
        assert lines[0] == ",".join(cli.ENERGY_COLUMNS)

    def test_baseline_drift(self):
        res = SuiteResult("x", [CheckRecord("t", "measured", {"c": 2.0})])
        assert baseline_drift(res, {"x": {"t": {"c": 1.0}}})
        assert not baseline_drift(res, {"x": {"t": {"c": 1.9}}})

    def test_packaged_baseline_loads(self):
        base = load_baseline()
        assert "adr" in base


class TestSweep:
    ARGS = ["sweep", "--set", "energy_points=2", "--set", "N_values=[2,3,4,5]",
            "--set", "theta_step=0.09817477042468103"]

    def test_rows_per_cell(self, tmp_path):
        assert run(tmp_path, *self.ARGS) == 0
        rows = (tmp_path / "sweep_en.csv").read_text().splitlines()[1:]
        cells = {}
        for r in rows:
            f = r.split(",")
            cells.setdefault((f[0], f[5]), []).append(f[2])
        assert all(sorted(v) == ["2", "3", "4", "5"] for v in cells.values())
        assert (tmp_path / "sweep_en.png").exists()

    def test_deterministic_across_threads(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(self.ARGS + ["--out", str(a)]) == 0
        assert cli.main(self.ARGS + ["--out", str(b), "--threads", "3"]) == 0
        assert (a / "sweep_en.csv").read_bytes() == (b / "sweep_en.csv").read_bytes()

    def test_empty_is_header_only(self, tmp_path):
        assert run(tmp_path, "sweep", "--set", "energy_points=0") == 0
        assert (tmp_path / "sweep_en.csv").read_text().splitlines() == [",".join(cli.ENERGY_COLUMNS)]

    def test_jm_sweep(self, tmp_path):
        assert run(tmp_path, "sweep", "--construction", "jm", "--set", "K_values=[8,16]",
                   "--no-figures") == 0
        rows = (tmp_path / "sweep_jm.csv").read_text().splitlines()
        assert len(rows) == 1 + 2 * 3


class TestExport:
    @pytest.mark.parametrize("what,name", [("graph", "graph_M3_N2.csv"),
                                           ("layer", "layer1_M3_N2.csv"),
                                           ("generation", "generation1_M3.csv")])
    def test_export(self, tmp_path, what, name):
        assert run(tmp_path, "export", what, "--layer", "1") == 0
        assert (tmp_path / name).exists()
