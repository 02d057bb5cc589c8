import numpy as np
import pytest

from tqs.cli import main
from tqs.checkpoint import load_checkpoint

MINI_CONFIG = """\
model: {{n_layers: 1, d_e: 8, n_heads: 2}}
family:
  name: tfi
  fixed: {{J: 1.0}}
  prior: {{h: [0.5, 1.5]}}
  sizes: [4, 6]
trainer: {{iterations: {iters}}}
sampler: {{n_batch: 10000, n_unique: 16}}
symmetries: [spin_flip]
seed: {seed}
"""


def write_config(tmp_path, iters=10, seed=11, name="run.yaml"):
    path = tmp_path / name
    path.write_text(MINI_CONFIG.format(iters=iters, seed=seed), encoding="utf-8")
    return path


def read_rows(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# config-hash="), "provenance comment missing"
    header = lines[1].split(",")
    return header, [dict(zip(header, line.split(","))) for line in lines[2:]]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_train")
    cfg = write_config(tmp, iters=10)
    out = tmp / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    return out


class TestTrain:
    def test_outputs_exist_with_expected_rows(self, trained):
        assert (trained / "checkpoint.ckpt").exists()
        assert (trained / "config.yaml").exists()
        header, rows = read_rows(trained / "train_log.csv")
        assert header == ["step", "n", "h", "energy", "scale", "lr", "seconds"]
        assert len(rows) == 10
        assert [r["step"] for r in rows] == [str(i) for i in range(1, 11)]
        # reproducible runs keep the seconds column empty
        assert all(r["seconds"] == "" for r in rows)

    def test_rerun_byte_identical(self, trained, tmp_path):
        cfg = write_config(tmp_path, iters=10)
        out2 = tmp_path / "run2"
        assert main(["train", "--config", str(cfg), "--out", str(out2)]) == 0
        assert (out2 / "checkpoint.ckpt").read_bytes() == (trained / "checkpoint.ckpt").read_bytes()
        assert (out2 / "train_log.csv").read_bytes() == (trained / "train_log.csv").read_bytes()

    def test_config_echoed_verbatim(self, trained, tmp_path):
        cfg = write_config(tmp_path, iters=10)
        assert (trained / "config.yaml").read_bytes() == cfg.read_bytes()

    def test_missing_family_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text(
            "model: {n_layers: 1, d_e: 8, n_heads: 2}\n"
            "trainer: {iterations: 1}\n"
            "sampler: {n_batch: 100, n_unique: 4}\n"
            "seed: 1\n",
            encoding="utf-8",
        )
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
        assert "family" in capsys.readouterr().err

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad2.yaml"
        bad.write_text(
            MINI_CONFIG.format(iters=1, seed=1) + "typo_section: 3\n", encoding="utf-8"
        )
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
        assert "typo_section" in capsys.readouterr().err

    def test_missing_config_file_exits_2(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 2


class TestScan:
    def test_single_point_rows(self, trained, tmp_path):
        out = tmp_path / "scan"
        rc = main(
            [
                "scan",
                "--checkpoint",
                str(trained / "checkpoint.ckpt"),
                "--h-grid",
                "1.0:1.0:0.1",
                "--sizes",
                "4",
                "--out",
                str(out),
                "--n-batch",
                "10000",
                "--n-unique",
                "16",
                "--repeats",
                "10",
            ]
        )
        assert rc == 0
        header, rows = read_rows(out / "observables.csv")
        assert len(rows) == 5  # energy, abs_mz, m2, m4, binder for the one grid point
        energy = next(r for r in rows if r["observable"] == "energy")
        assert energy["extrapolated"] == "false"
        assert float(energy["reference"]) == pytest.approx(-4.7587704831436035, abs=1e-9)
        assert float(energy["delta_e"]) >= 0.0

    def test_extrapolated_flags(self, trained, tmp_path):
        out = tmp_path / "scan2"
        rc = main(
            [
                "scan",
                "--checkpoint",
                str(trained / "checkpoint.ckpt"),
                "--h-grid",
                "1.75:1.75:0.1",
                "--sizes",
                "4,8",
                "--out",
                str(out),
                "--n-batch",
                "1000",
                "--n-unique",
                "8",
                "--repeats",
                "2",
            ]
        )
        assert rc == 0
        _, rows = read_rows(out / "observables.csv")
        # h = 1.75 is outside the prior everywhere; n = 8 is also an unseen size
        assert all(r["extrapolated"] == "true" for r in rows)

    def test_large_chain_uses_free_fermion_reference(self, trained, tmp_path):
        out = tmp_path / "scan3"
        rc = main(
            [
                "scan",
                "--checkpoint",
                str(trained / "checkpoint.ckpt"),
                "--h-grid",
                "1.0:1.0:0.1",
                "--sizes",
                "80",
                "--out",
                str(out),
                "--n-batch",
                "1000",
                "--n-unique",
                "8",
                "--repeats",
                "2",
            ]
        )
        assert rc == 0
        _, rows = read_rows(out / "observables.csv")
        energy = next(r for r in rows if r["observable"] == "energy")
        assert energy["reference"] != ""
        assert np.isfinite(float(energy["reference"]))

    def test_rerun_byte_identical(self, trained, tmp_path):
        args = [
            "scan",
            "--checkpoint",
            str(trained / "checkpoint.ckpt"),
            "--h-grid",
            "0.9:1.1:0.1",
            "--sizes",
            "4",
            "--n-batch",
            "2000",
            "--n-unique",
            "8",
            "--repeats",
            "3",
        ]
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(out_a)]) == 0
        assert main(args + ["--out", str(out_b)]) == 0
        assert (out_a / "observables.csv").read_bytes() == (out_b / "observables.csv").read_bytes()


@pytest.fixture(scope="module")
def measurements(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("meas")
    path = tmp / "meas.txt"
    rc = main(
        ["oracle", "measure", "--model", "tfi", "--n", "4", "--h", "1.0",
         "--count", "200", "--seed", "3", "--out", str(path)]
    )
    assert rc == 0
    return path


class TestPredict:
    def test_single_record_file(self, trained, tmp_path, measurements):
        single = tmp_path / "one.txt"
        lines = measurements.read_text().splitlines()
        single.write_text("\n".join(lines[:2]) + "\n", encoding="utf-8")
        out = tmp_path / "pred"
        rc = main(
            ["predict", "--checkpoint", str(trained / "checkpoint.ckpt"),
             "--measurements", str(single), "--box", "h=0.5:1.5", "--out", str(out)]
        )
        assert rc == 0
        header, rows = read_rows(out / "predictions.csv")
        assert header == ["n_measure", "h_hat", "loglik", "converged", "seed"]
        assert len(rows) == 1 and rows[0]["n_measure"] == "1"
        assert 0.5 <= float(rows[0]["h_hat"]) <= 1.5

    def test_sweep_rows(self, trained, tmp_path, measurements):
        out = tmp_path / "sweep"
        rc = main(
            ["predict", "--checkpoint", str(trained / "checkpoint.ckpt"),
             "--measurements", str(measurements), "--box", "h=0.5:1.5",
             "--sweep", "1,10,100", "--repeats", "4", "--out", str(out)]
        )
        assert rc == 0
        _, rows = read_rows(out / "predictions.csv")
        assert len(rows) == 12
        assert sorted({r["n_measure"] for r in rows}) == ["1", "10", "100"]

    def test_empty_file_exits_2(self, trained, tmp_path):
        empty = tmp_path / "empty.txt"
        empty.write_text("", encoding="utf-8")
        rc = main(
            ["predict", "--checkpoint", str(trained / "checkpoint.ckpt"),
             "--measurements", str(empty), "--box", "h=0.5:1.5", "--out", str(tmp_path / "p")]
        )
        assert rc == 2

    def test_malformed_file_reports_line(self, trained, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("n=4 model=tfi params=h\n0101\n01!1\n", encoding="utf-8")
        rc = main(
            ["predict", "--checkpoint", str(trained / "checkpoint.ckpt"),
             "--measurements", str(bad), "--box", "h=0.5:1.5", "--out", str(tmp_path / "p")]
        )
        assert rc == 2
        assert "line 3" in capsys.readouterr().err


class TestFss:
    def test_injected_curves_exact_crossing(self, tmp_path):
        curves = tmp_path / "curves.csv"
        rows = ["n,h,U"]
        for n, slope in ((8, -1.0), (12, -2.0), (16, -3.0)):
            for h in (1.0, 1.2):
                rows.append(f"{n},{h},{0.5 + slope * (h - 1.1)}")
        curves.write_text("\n".join(rows) + "\n", encoding="utf-8")
        out = tmp_path / "fss"
        assert main(["fss", "--curves-csv", str(curves), "--out", str(out)]) == 0
        _, summary = read_rows(out / "fss_summary.csv")
        assert float(summary[0]["h_c"]) == pytest.approx(1.1, abs=1e-12)
        assert float(summary[0]["spread"]) == pytest.approx(0.0, abs=1e-12)

    def test_single_size_exits_2(self, trained, tmp_path):
        rc = main(
            ["fss", "--checkpoint", str(trained / "checkpoint.ckpt"), "--sizes", "8",
             "--h-grid", "0.9:1.1:0.1", "--out", str(tmp_path / "f")]
        )
        assert rc == 2

    def test_no_crossing_exits_4(self, tmp_path):
        curves = tmp_path / "flat.csv"
        curves.write_text("n,h,U\n8,1.0,0.1\n8,1.2,0.2\n12,1.0,0.5\n12,1.2,0.6\n", encoding="utf-8")
        rc = main(["fss", "--curves-csv", str(curves), "--out", str(tmp_path / "f")])
        assert rc == 4


class TestXyz:
    def test_train_and_scan_with_pinned_delta(self, tmp_path):
        cfg = tmp_path / "xyz.yaml"
        cfg.write_text(
            "model: {n_layers: 1, d_e: 8, n_heads: 2}\n"
            "family:\n"
            "  name: xyz\n"
            "  fixed: {J: 1.0, gamma: 0.2}\n"
            "  prior: {delta: [-1.0, 1.0], h: [0.0, 1.0]}\n"
            "  sizes: [4]\n"
            "trainer: {iterations: 3}\n"
            "sampler: {n_batch: 2000, n_unique: 8}\n"
            "seed: 5\n",
            encoding="utf-8",
        )
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        header, rows = read_rows(out / "train_log.csv")
        assert header[:4] == ["step", "n", "delta", "h"]

        scan_out = tmp_path / "scan"
        rc = main(
            ["scan", "--checkpoint", str(out / "checkpoint.ckpt"), "--h-grid", "0.5:0.5:0.1",
             "--sizes", "4", "--set", "delta=0.5", "--out", str(scan_out),
             "--n-batch", "1000", "--n-unique", "8", "--repeats", "2"]
        )
        assert rc == 0
        _, srows = read_rows(scan_out / "observables.csv")
        energy = next(r for r in srows if r["observable"] == "energy")
        assert energy["reference"] != ""  # ED reference available at n=4

    def test_scan_requires_pinned_parameters(self, tmp_path, capsys):
        cfg = tmp_path / "xyz.yaml"
        cfg.write_text(
            "model: {n_layers: 1, d_e: 8, n_heads: 2}\n"
            "family:\n"
            "  name: xyz\n"
            "  fixed: {J: 1.0, gamma: 0.2}\n"
            "  prior: {delta: [-1.0, 1.0], h: [0.0, 1.0]}\n"
            "  sizes: [4]\n"
            "trainer: {iterations: 1}\n"
            "sampler: {n_batch: 1000, n_unique: 8}\n"
            "seed: 5\n",
            encoding="utf-8",
        )
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        rc = main(
            ["scan", "--checkpoint", str(out / "checkpoint.ckpt"), "--h-grid", "0.5:0.5:0.1",
             "--sizes", "4", "--out", str(tmp_path / "s")]
        )
        assert rc == 2
        assert "delta" in capsys.readouterr().err


class TestOracle:
    def test_ff_prints_energy(self, capsys):
        assert main(["oracle", "ff", "--n", "12", "--h", "1.0"]) == 0
        value = float(capsys.readouterr().out.strip())
        assert value == pytest.approx(-14.925971109908655, abs=1e-9)

    def test_ed_matches_ff(self, capsys):
        assert main(["oracle", "ed", "--model", "tfi", "--n", "6", "--h", "0.5"]) == 0
        ed_value = float(capsys.readouterr().out.strip())
        assert main(["oracle", "ff", "--n", "6", "--h", "0.5"]) == 0
        ff_value = float(capsys.readouterr().out.strip())
        assert ed_value == pytest.approx(ff_value, abs=1e-10)

    def test_ed_size_limit_exit_code(self):
        assert main(["oracle", "ed", "--model", "tfi", "--n", "18", "--h", "1.0"]) == 2

    def test_measure_writes_valid_file(self, tmp_path):
        path = tmp_path / "m.txt"
        assert main(
            ["oracle", "measure", "--model", "tfi", "--n", "5", "--h", "0.8",
             "--count", "20", "--seed", "1", "--out", str(path)]
        ) == 0
        lines = path.read_text().splitlines()
        assert lines[0] == "n=5 model=tfi params=h"
        assert len(lines) == 21 and all(len(l) == 5 for l in lines[1:])

    def test_checkpoint_header_contents(self, trained):
        ck = load_checkpoint(trained / "checkpoint.ckpt")
        assert ck.header["family"]["name"] == "tfi"
        assert ck.header["symmetries"] == ["spin_flip"]
        assert ck.header["train"]["step"] == 10
