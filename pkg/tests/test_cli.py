import json
from pathlib import Path

import numpy as np
import pytest

from nlwmix.cli import (
    ConfigError,
    emit_csv,
    format_cell,
    main,
    parse_config,
    parse_csv,
)

BASE = """
[model]
dim = 1
modes_per_axis = 8
gamma = 0.2
nonlinearity = {nonlinearity}
b0 = 0.3
noise_decay_q = 1.0
{extra_model}

[run]
T = {T}
dt = {dt}
n = {n}
seed = {seed}
{checkpoints}

[experiment]
name = {name}
{extra_experiment}

[output]
dir = {outdir}
"""


def write_config(tmp_path, name, *, nonlinearity="sine_gordon", T=2.0, dt=0.005,
                 n=8, seed=1, extra_model="", extra_experiment="", checkpoints=""):
    outdir = tmp_path / f"out_{name.replace('-', '_')}"
    text = BASE.format(
        nonlinearity=nonlinearity, T=T, dt=dt, n=n, seed=seed, name=name,
        extra_model=extra_model, extra_experiment=extra_experiment,
        checkpoints=checkpoints, outdir=outdir,
    )
    path = tmp_path / f"{name}.ini"
    path.write_text(text, encoding="utf-8")
    return path, outdir


class TestConfigParsing:
    def test_unknown_key_rejected(self, tmp_path):
        path, _ = write_config(tmp_path, "energy", extra_model="bogus = 1")
        with pytest.raises(ConfigError, match="bogus"):
            parse_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path, _ = write_config(tmp_path, "energy")
        path.write_text(path.read_text() + "\n[extra]\nx = 1\n")
        with pytest.raises(ConfigError, match="extra"):
            parse_config(path)

    def test_unknown_experiment(self, tmp_path):
        path, _ = write_config(tmp_path, "energy")
        path.write_text(path.read_text().replace("name = energy", "name = nope"))
        with pytest.raises(ConfigError, match="nope"):
            parse_config(path)

    def test_bad_value_reports_key(self, tmp_path):
        path, _ = write_config(tmp_path, "energy", extra_model="gamma = fast")
        with pytest.raises(ConfigError, match="gamma"):
            parse_config(path)

    def test_checkpoint_forms(self, tmp_path):
        path, _ = write_config(tmp_path, "energy", checkpoints="checkpoints = 0:2:5")
        cfg = parse_config(path)
        assert cfg.run["checkpoints"] == [0.0, 0.5, 1.0, 1.5, 2.0]
        path2, _ = write_config(tmp_path, "hitting",
                                checkpoints="checkpoints = 0.5, 1.5")
        cfg2 = parse_config(path2)
        assert cfg2.run["checkpoints"] == [0.5, 1.5]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "absent.ini")


class TestEmitCsv:
    def test_header_only_for_empty_series(self, tmp_path):
        p = emit_csv(tmp_path / "x.csv", ["a", "b"], [])
        assert p.read_text() == "a,b\n"

    def test_tail_report_line_count(self, tmp_path):
        rows = [(r, 0.1, 0.0, 0.2, 0.5) for r in (2.0, 4.0, 8.0, 16.0)]
        p = emit_csv(tmp_path / "tails.csv", ["r", "value", "ci_lo", "ci_hi", "bound"], rows)
        assert len(p.read_text().splitlines()) == 5

    def test_round_trip_byte_identical(self, tmp_path):
        rows = [
            (0.1, 1 / 3, -2.5e-17, "label"),
            (7.25, np.float64(np.pi), 42, ""),
        ]
        p1 = emit_csv(tmp_path / "a.csv", ["w", "x", "y", "z"], rows)
        header, parsed = parse_csv(p1)
        p2 = emit_csv(tmp_path / "b.csv", header, parsed)
        assert p1.read_bytes() == p2.read_bytes()

    def test_float_formatting_is_17_digits(self):
        assert format_cell(1 / 3) == "0.33333333333333331"
        assert float(format_cell(np.pi)) == np.pi


class TestCliCommands:
    def test_list_experiments(self, capsys):
        assert main(["list-experiments"]) == 0
        out = capsys.readouterr().out.split()
        assert "energy" in out and "fp-scan" in out and "mixing" in out

    def test_validate(self, tmp_path, capsys):
        path, _ = write_config(tmp_path, "energy")
        assert main(["validate", str(path)]) == 0
        assert "energy" in capsys.readouterr().out

    def test_validate_bad_config(self, tmp_path, capsys):
        path, _ = write_config(tmp_path, "energy", extra_model="bogus = 1")
        assert main(["validate", str(path)]) == 2

    def test_seed_env_override(self, tmp_path, monkeypatch, capsys):
        path, _ = write_config(tmp_path, "energy", seed=1)
        monkeypatch.setenv("NLWMIX_SEED", "777")
        main(["validate", str(path)])
        assert "seed 777" in capsys.readouterr().out


class TestRunDeterminism:
    def test_energy_run_twice_byte_identical(self, tmp_path):
        path, outdir = write_config(
            tmp_path, "energy", T=1.0, dt=0.01, n=4,
            extra_experiment="y0_hnorm = 1.0",
        )
        assert main(["run", str(path)]) == 0
        first = {f.name: f.read_bytes() for f in Path(outdir).glob("*.csv")}
        manifest1 = json.loads((Path(outdir) / "manifest.json").read_text())
        assert main(["run", str(path)]) == 0
        for f in Path(outdir).glob("*.csv"):
            assert f.read_bytes() == first[f.name], f.name
        manifest2 = json.loads((Path(outdir) / "manifest.json").read_text())
        assert manifest1 == manifest2
        assert set(manifest1["artifacts"]) == set(first)

    def test_linear_energy_monotone_est(self, tmp_path):
        path, outdir = write_config(
            tmp_path, "energy", nonlinearity="zero", T=2.0, dt=0.01, n=2,
            extra_model="noise_cutoff = 0\nh_amplitude = 0.0",
            extra_experiment="y0_hnorm = 1.5",
        )
        assert main(["run", str(path)]) == 0
        header, rows = parse_csv(Path(outdir) / "energy.csv")
        col = header.index("mean_e_st")
        est = [float(r[col]) for r in rows]
        assert all(a >= b - 1e-10 for a, b in zip(est, est[1:]))

    def test_out_flag_overrides_dir(self, tmp_path):
        path, _ = write_config(tmp_path, "dissipativity", T=1.0, n=1)
        target = tmp_path / "elsewhere"
        assert main(["run", str(path), "--out", str(target)]) == 0
        assert (target / "dissipativity.csv").exists()
        assert (target / "manifest.json").exists()
        assert (target / "run_meta.txt").exists()


@pytest.mark.slow
class TestRunExperiments:
    def test_fp_scan_summary_rows(self, tmp_path):
        path, outdir = write_config(
            tmp_path, "fp-scan", T=3.0, dt=0.005, n=4,
            extra_experiment="n_list = 0,2,8\nn_pairs = 4\nbase_hnorm = 1.0\n"
                             "fail_hnorm = 3.0",
        )
        assert main(["run", str(path)]) == 0
        header, rows = parse_csv(Path(outdir) / "fp_scan.csv")
        assert header[0] == "regime"
        regimes = [r[0] for r in rows]
        assert regimes.count("contract") == 3
        assert regimes.count("fail-probe") == 1
        n_star_col = header.index("n_star")
        assert len({r[n_star_col] for r in rows}) == 1

    def test_split_and_hitting_and_girsanov(self, tmp_path):
        for name, extra in (
            ("split", "s = 0.4"),
            ("hitting", "d = 1.0\ny0_hnorm = 1.0"),
            ("girsanov", "deltas = 0.02,0.04\nn_pairs = 4\nn_pinned = 2\n"
                         "base_hnorm = 0.5\nfit_r2 = 0.0"),
        ):
            path, outdir = write_config(tmp_path, name, T=2.0, dt=0.005, n=16,
                                        extra_experiment=extra)
            assert main(["run", str(path)]) == 0, name
            manifest = json.loads((Path(outdir) / "manifest.json").read_text())
            assert manifest["experiment"] == name
            for fname, digest in manifest["artifacts"].items():
                import hashlib

                data = (Path(outdir) / fname).read_bytes()
                assert hashlib.sha256(data).hexdigest() == digest
