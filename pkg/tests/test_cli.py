import csv
import json

import pytest

from covert_qcd.cli import main
from covert_qcd.config import ConfigError, load_config, parse_config, read_config_text
from covert_qcd.dp import BeliefGridPolicy
from covert_qcd.experiments import FIG1_COLUMNS, FIG2_EXTRA


def base_doc(**overrides):
    text, _ = read_config_text("@reference")
    doc = json.loads(text)
    doc.update(overrides)
    return doc


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc, indent=2))
    return str(p)


class TestConfig:
    def test_bundled(self):
        cfg = load_config("@reference")
        assert cfg.grid == tuple(float(L) for L in range(1, 15))
        assert cfg.rho == 0.05 and cfg.delta == pytest.approx(1 / 24)
        assert cfg.channel.chi2_post == pytest.approx(16 / 21)

    def test_empty_grid_rejected_with_line(self):
        text = json.dumps(base_doc(grid=[]), indent=2)
        with pytest.raises(ConfigError) as exc:
            parse_config(text, "x.json")
        expected = next(i for i, line in enumerate(text.splitlines(), 1) if '"grid"' in line)
        assert exc.value.line == expected
        assert f"x.json:{expected}:" in str(exc.value)

    def test_syntax_error_line(self):
        with pytest.raises(ConfigError) as exc:
            parse_config('{\n "schema": "covert-qcd/1",\n "grid": [1,,2]\n}')
        assert exc.value.line == 3

    @pytest.mark.parametrize(
        "override",
        [
            {"grid": [2, 1]},
            {"grid": [0.5]},
            {"n_runs": 99},
            {"schema": "covert-qcd/2"},
            {"policies": ["cusum"]},
            {"seed": -1},
        ],
    )
    def test_invalid_fields(self, override):
        with pytest.raises(ConfigError):
            parse_config(json.dumps(base_doc(**override), indent=2))

    def test_channel_assumption_named(self):
        doc = base_doc()
        doc["scenario"]["channel"]["alice"][0][1] = [0.4, 0.6]
        with pytest.raises(ConfigError, match="no free passive sensing"):
            parse_config(json.dumps(doc, indent=2))

    def test_joint_channel(self):
        from covert_qcd.model import reference_channel

        doc = base_doc()
        doc["scenario"]["channel"] = {"type": "joint", "tables": reference_channel().joint.tolist()}
        assert parse_config(json.dumps(doc)).channel.D == pytest.approx(reference_channel().D)


class TestCommands:
    def test_reproduce_single_point(self, tmp_path, capsys):
        cfg = write(tmp_path, base_doc(grid=[2], n_runs=1000, policies=["innocent", "constant_beta"]))
        assert main(["reproduce", "--config", cfg, "--out", str(tmp_path / "a"), "--quiet"]) == 0
        assert main(["reproduce", "--config", cfg, "--out", str(tmp_path / "b"), "--quiet"]) == 0
        for name in ("fig1.csv", "fig2.csv", "fig1.svg", "fig2.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        raw = (tmp_path / "a" / "fig1.csv").read_bytes()
        assert b"\r\n" in raw
        rows = list(csv.DictReader((tmp_path / "a" / "fig1.csv").open(newline="")))
        assert [r["policy"] for r in rows] == ["innocent", "constant_beta"]
        assert tuple(rows[0].keys()) == FIG1_COLUMNS
        fig2 = list(csv.DictReader((tmp_path / "a" / "fig2.csv").open(newline="")))
        assert tuple(fig2[0].keys()) == FIG1_COLUMNS + FIG2_EXTRA
        r = rows[1]
        assert float(r["add_mean_normalized"] if "add_mean_normalized" in r else fig2[1]["add_mean_normalized"]) == pytest.approx(
            float(r["add_mean"]) / 2.0, rel=1e-11
        )
        for r in rows:
            assert float(r["ecb_mean"]) <= float(r["n_runs"]) and float(r["ecb_mean"]) <= 1 / 24 + 3 * float(r["ecb_stderr"])
            assert float(r["pfa_mean"]) <= float(r["alpha"]) + 3 * float(r["pfa_stderr"])
        assert (tmp_path / "a" / "fig1.svg").read_text().startswith("<?xml")

    def test_verify_passes(self, tmp_path, capsys):
        cfg = write(tmp_path, base_doc(grid=[1, 2, 6], n_runs=2000))
        assert main(["verify", "--config", cfg]) == 0
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 5 and all(line.startswith("[PASS]") for line in out)

    def test_verify_zero_budget(self, tmp_path, capsys):
        doc = base_doc(grid=[2, 3], n_runs=500)
        doc["scenario"]["delta"] = 0.0
        assert main(["verify", "--config", write(tmp_path, doc)]) == 0

    def test_bad_channel_exit_code(self, tmp_path, capsys):
        doc = base_doc()
        doc["scenario"]["channel"]["alice"][0][1] = [0.4, 0.6]
        assert main(["verify", "--config", write(tmp_path, doc)]) == 2
        assert "no free passive sensing" in capsys.readouterr().err

    def test_oracle(self, capsys):
        assert main(["oracle", "--config", "@reference", "--horizon", "3", "--beta", "0.5"]) == 0
        out = capsys.readouterr().out
        assert "true_kl" in out and out.strip().endswith("PASS")

    def test_oracle_infeasible(self, capsys):
        assert main(["oracle", "--config", "@reference", "--horizon", "12", "--beta", "0.5"]) == 2

    def test_dp_solve(self, tmp_path, capsys):
        doc = base_doc(grid=[3])
        doc["dp"] = {"grid_size": 128, "actions": "default"}
        out = tmp_path / "policy.json"
        assert main(["dp-solve", "--config", write(tmp_path, doc), "--out", str(out)]) == 0
        pol = BeliefGridPolicy.from_json(out.read_text())
        assert pol.size == 128
        assert pol.metadata["abs_ln_alpha"] == 3.0
