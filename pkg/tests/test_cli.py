import json

import numpy as np
import pytest

from contextkey import cli, inequality, protocol, verification


def run_cli(args, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTDIR_ENV, str(tmp_path / "default-out"))
    return cli.main(args)


class TestUsage:
    def test_zero_rounds_is_usage_error(self, tmp_path, monkeypatch, capsys):
        out = tmp_path / "zero"
        code = run_cli(
            ["run", "--kind", "mermin", "--parties", "3", "--rounds", "0",
             "--seed", "1", "--outdir", str(out)],
            tmp_path, monkeypatch,
        )
        assert code == cli.EXIT_USAGE
        assert not (out.exists() and any(out.iterdir()))

    def test_unknown_flag(self, tmp_path, monkeypatch):
        assert run_cli(["run", "--flux-capacitor"], tmp_path, monkeypatch) == cli.EXIT_USAGE

    def test_missing_command_prints_help(self, tmp_path, monkeypatch, capsys):
        assert run_cli([], tmp_path, monkeypatch) == cli.EXIT_USAGE

    def test_list_observables(self, tmp_path, monkeypatch, capsys):
        assert run_cli(["--list-observables"], tmp_path, monkeypatch) == cli.EXIT_OK
        output = capsys.readouterr().out
        assert "XpZ" in output and "ZmX" in output and "Z1" in output

    def test_bad_noise_spec(self, tmp_path, monkeypatch):
        code = run_cli(
            ["run", "--kind", "mermin", "--parties", "3", "--rounds", "10",
             "--prep-noise", "fuzz:0.1"],
            tmp_path, monkeypatch,
        )
        assert code == cli.EXIT_USAGE


class TestRun:
    def test_writes_all_artifacts(self, tmp_path, monkeypatch, capsys):
        out = tmp_path / "runout"
        code = run_cli(
            ["run", "--kind", "mermin", "--parties", "3", "--rounds", "3000",
             "--seed", "9", "--outdir", str(out)],
            tmp_path, monkeypatch,
        )
        assert code == cli.EXIT_OK
        report = json.loads((out / "run-report.json").read_text())
        assert report["violated"] is True
        assert report["key_agreement"] == 1.0
        assert (out / "run-transcript.jsonl").exists()
        for party in (1, 2, 3):
            assert (out / f"run-key-party{party}.txt").exists()
        keys = {p: (out / f"run-key-party{p}.txt").read_text().strip() for p in (1, 2, 3)}
        assert keys[1] == keys[2] == keys[3]
        assert len(keys[1]) == report["sifting"]["key_rounds"]
        summary = capsys.readouterr().out
        assert "violated=True" in summary

    def test_transcript_round_trip(self, tmp_path, monkeypatch):
        out = tmp_path / "rt"
        run_cli(
            ["run", "--kind", "chsh", "--parties", "3", "--rounds", "500",
             "--seed", "11", "--outdir", str(out)],
            tmp_path, monkeypatch,
        )
        config = protocol.ProtocolConfig("chsh", 3, 500, seed=11)
        transcript = cli.read_transcript(out / "run-transcript.jsonl", config)
        direct = protocol.run_protocol(config)
        assert transcript.records == direct.records

    def test_env_var_outdir(self, tmp_path, monkeypatch):
        code = run_cli(
            ["run", "--kind", "mermin", "--parties", "3", "--rounds", "200", "--seed", "2"],
            tmp_path, monkeypatch,
        )
        assert code == cli.EXIT_OK
        assert (tmp_path / "default-out" / "run-report.json").exists()

    def test_config_file_mirrors_flags(self, tmp_path, monkeypatch):
        out = tmp_path / "cfg"
        config_file = tmp_path / "run.conf"
        config_file.write_text(
            "kind = mermin\nparties = 3\nrounds = 400\nseed = 5\n"
            f"outdir = {out}\n# comment line\nno-masking = true\n"
        )
        code = run_cli(["run", "--config", str(config_file)], tmp_path, monkeypatch)
        assert code == cli.EXIT_OK
        report = json.loads((out / "run-report.json").read_text())
        assert report["rounds"] == 400
        assert report["masking"] is False

    def test_cli_flags_override_config_file(self, tmp_path, monkeypatch):
        out = tmp_path / "cfg2"
        config_file = tmp_path / "run.conf"
        config_file.write_text(f"kind = mermin\nparties = 3\nrounds = 400\nseed = 5\noutdir = {out}\n")
        code = run_cli(["run", "--config", str(config_file), "--rounds", "150"], tmp_path, monkeypatch)
        assert code == cli.EXIT_OK
        report = json.loads((out / "run-report.json").read_text())
        assert report["rounds"] == 150


class TestAttack:
    def test_commuting_attack_exit_zero(self, tmp_path, monkeypatch, capsys):
        out = tmp_path / "atk"
        code = run_cli(
            ["attack", "--kind", "mermin", "--parties", "3", "--rounds", "30000",
             "--seed", "13", "--no-masking", "--eve-link", "1", "--eve-obs", "Z1",
             "--outdir", str(out)],
            tmp_path, monkeypatch,
        )
        assert code == cli.EXIT_OK
        report = json.loads((out / "attack-report.json").read_text())
        assert report["eve"]["strategy"] == "commuting-measure"
        assert report["eve"]["detected"] is False
        assert report["eve"]["mutual_information_bits"] > 0.99

    def test_noncommuting_attack_signals_no_violation(self, tmp_path, monkeypatch):
        out = tmp_path / "atk2"
        code = run_cli(
            ["attack", "--kind", "mermin", "--parties", "3", "--rounds", "30000",
             "--seed", "14", "--eve-link", "2", "--eve-obs", "X3", "--outdir", str(out)],
            tmp_path, monkeypatch,
        )
        assert code == cli.EXIT_NO_VIOLATION
        report = json.loads((out / "attack-report.json").read_text())
        assert report["eve"]["strategy"] == "noncommuting-measure"
        assert report["eve"]["detected"] is True

    def test_chsh_attack_reports_localization(self, tmp_path, monkeypatch, capsys):
        out = tmp_path / "atk3"
        code = run_cli(
            ["attack", "--kind", "chsh", "--parties", "4", "--rounds", "30000",
             "--seed", "15", "--eve-link", "2", "--eve-obs", "Z1", "--outdir", str(out)],
            tmp_path, monkeypatch,
        )
        assert code == cli.EXIT_NO_VIOLATION
        report = json.loads((out / "attack-report.json").read_text())
        assert report["eve"]["localized_links"] == [2]
        assert "localization" in capsys.readouterr().out


class TestSweep:
    def test_flip_surface_has_ideal_origin(self, tmp_path, monkeypatch):
        out = tmp_path / "sw"
        code = run_cli(
            ["sweep", "--model", "flip", "--grid", "11", "--outdir", str(out)],
            tmp_path, monkeypatch,
        )
        assert code == cli.EXIT_OK
        lines = (out / "sweep-flip-mermin.csv").read_text().splitlines()
        assert lines[0].startswith("eps1,eps2,mi_12")
        first = lines[1].split(",")
        assert float(first[0]) == 0.0 and float(first[1]) == 0.0
        assert float(first[5]) == pytest.approx(1.0, abs=1e-12)

    def test_detector_surface_contains_reference_point(self, tmp_path, monkeypatch):
        out = tmp_path / "sw2"
        run_cli(["sweep", "--model", "detector", "--grid", "101", "--outdir", str(out)],
                tmp_path, monkeypatch)
        rows = [line.split(",") for line in (out / "sweep-detector-mermin.csv").read_text().splitlines()[1:]]
        by_eta = {float(r[0]): float(r[4]) for r in rows}
        assert by_eta[0.1] == pytest.approx(0.3199, abs=1e-4)

    def test_model1_surface_switches_argmin(self, tmp_path, monkeypatch):
        out = tmp_path / "sw3"
        run_cli(["sweep", "--model", "model1", "--eta", "0.1", "--grid", "11",
                 "--outdir", str(out)], tmp_path, monkeypatch)
        rows = (out / "sweep-model1-mermin-eta0.1.csv").read_text().splitlines()[1:]
        argmins = {row.split(",")[6] for row in rows}
        assert {"2-3", "1-2"} <= argmins

    def test_model2_emits_both_conventions(self, tmp_path, monkeypatch):
        out = tmp_path / "sw4"
        run_cli(["sweep", "--model", "model2", "--eta", "0.7", "--grid", "6",
                 "--outdir", str(out)], tmp_path, monkeypatch)
        header = (out / "sweep-model2-mermin-eta0.7.csv").read_text().splitlines()[0]
        assert "key_rate_conditional" in header and "key_rate_throughput" in header

    def test_model_requires_eta(self, tmp_path, monkeypatch):
        assert run_cli(["sweep", "--model", "model1"], tmp_path, monkeypatch) == cli.EXIT_USAGE

    def test_empirical_column(self, tmp_path, monkeypatch):
        out = tmp_path / "sw5"
        code = run_cli(
            ["sweep", "--model", "white", "--grid", "3", "--empirical-rounds", "8000",
             "--empirical-grid", "2", "--seed", "3", "--outdir", str(out)],
            tmp_path, monkeypatch,
        )
        assert code == cli.EXIT_OK
        emp = (out / "sweep-white-mermin-empirical.csv").read_text().splitlines()
        assert emp[0] == "param,key_rate_empirical"
        assert len(emp) == 3


class TestVerify:
    def test_fresh_build_passes(self, tmp_path, monkeypatch, capsys):
        assert run_cli(["verify"], tmp_path, monkeypatch) == cli.EXIT_OK
        output = capsys.readouterr().out
        assert "FAIL" not in output
        assert "mermin_operator_identity" in output

    def test_mutated_bound_is_named(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setattr(inequality, "mermin_classical_bound", lambda n: 1.5)
        assert run_cli(["verify"], tmp_path, monkeypatch) == cli.EXIT_INTERNAL
        assert "FAIL mermin_bound_N3" in capsys.readouterr().out

    def test_leaking_masking_generator_is_named(self, tmp_path, monkeypatch, capsys):
        true_masking = protocol.masking_unitary

        def leaking(k, spec, rng, indexing=None):
            widened = protocol.MaskingSpec(spec.num_parties, spec.generator_labels + ("X3",))
            return true_masking(k + 10, widened, rng, indexing)

        monkeypatch.setattr(protocol, "masking_unitary", leaking)
        assert run_cli(["verify"], tmp_path, monkeypatch) == cli.EXIT_INTERNAL
        assert "FAIL masking_commutation" in capsys.readouterr().out


class TestDeterminism:
    def test_byte_identical_reruns_and_thread_counts(self, tmp_path, monkeypatch):
        outputs = {}
        for tag, threads in (("a", "1"), ("b", "1"), ("c", "4")):
            out = tmp_path / tag
            code = run_cli(
                ["run", "--kind", "chsh", "--parties", "3", "--rounds", "4000",
                 "--seed", "77", "--threads", threads, "--outdir", str(out)],
                tmp_path, monkeypatch,
            )
            assert code == cli.EXIT_OK
            outputs[tag] = {
                name: (out / name).read_bytes()
                for name in ("run-transcript.jsonl", "run-report.json",
                             "run-key-party1.txt", "run-key-party2.txt", "run-key-party3.txt")
            }
        assert outputs["a"] == outputs["b"] == outputs["c"]

    def test_sweep_csv_reruns_identical(self, tmp_path, monkeypatch):
        blobs = []
        for tag in ("x", "y"):
            out = tmp_path / tag
            run_cli(["sweep", "--model", "flip", "--grid", "7", "--outdir", str(out)],
                    tmp_path, monkeypatch)
            blobs.append((out / "sweep-flip-mermin.csv").read_bytes())
        assert blobs[0] == blobs[1]
