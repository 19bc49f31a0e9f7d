import csv
import json
import shutil
from importlib import resources
from pathlib import Path

import pytest

from kvroof.analytics import kappa_crit, kappa_hw, kappa_model
from kvroof.catalog import by_name, default_catalog, serialize_catalog
from kvroof.cli import EXIT_DATA, EXIT_OK, main

MODELS, HARDWARE = default_catalog()
M = by_name(MODELS)
H = by_name(HARDWARE)


def fixture_path(name: str) -> str:
    return str(resources.files("kvroof").joinpath(f"data/fixtures/{name}"))


def run(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestKappaCommand:
    def test_single_pair_row(self, capsys):
        code, out, _ = run(
            ["kappa", "--models", "Qwen3-235B-A22B", "--hw", "H100-PCIe5"], capsys
        )
        assert code == EXIT_OK
        rows = [line for line in out.splitlines() if line and not line.startswith("#")]
        assert len(rows) == 2  # header + one pair
        assert "Qwen3-235B-A22B" in rows[1]

    def test_numbers_match_library(self, capsys):
        code, out, _ = run(["kappa", "--bandwidth", "peak"], capsys)
        assert code == EXIT_OK
        rows = [line.split() for line in out.splitlines() if line and not line.startswith("#")]
        header, body = rows[0], rows[1:]
        assert len(body) == len(MODELS) * len(HARDWARE)
        for row in body:
            model, hw = M[row[0]], H[row[1]]
            assert row[2] == f"{kappa_model(model) / 1e6:.4f}"
            assert row[3] == f"{kappa_hw(hw, False) * 1e6:.4f}"
            assert row[4] == f"{kappa_crit(model, hw, False):.4f}"

    def test_sustained_flag_h100_measured(self, capsys):
        code, out, _ = run(
            [
                "kappa",
                "--models",
                "Llama-3.1-70B",
                "--hw",
                "H100-PCIe5-measured",
                "--bandwidth",
                "sustained",
            ],
            capsys,
        )
        assert code == EXIT_OK
        row = [line for line in out.splitlines() if "Llama-3.1-70B" in line][0]
        kc = float(row.split()[-1])
        assert kc == pytest.approx(3.3, rel=0.10)

    def test_si_flag(self, capsys):
        code, out, _ = run(
            ["kappa", "--models", "Llama-3.1-70B", "--hw", "H100-PCIe5", "--si"], capsys
        )
        assert code == EXIT_OK
        assert "B/FLOP" in out

    def test_unknown_model_lists_available(self, capsys):
        code, _, err = run(["kappa", "--models", "nope"], capsys)
        assert code == EXIT_DATA
        assert "unknown model" in err
        assert "Qwen3-235B-A22B" in err

    def test_manifest_present(self, capsys):
        _, out, _ = run(["kappa", "--models", "DeepSeek-V3", "--hw", "A100-PCIe4"], capsys)
        manifest_lines = [line for line in out.splitlines() if line.startswith("# manifest")]
        assert len(manifest_lines) == 1
        doc = json.loads(manifest_lines[0].removeprefix("# manifest "))
        assert doc["tool"].startswith("kvroof")
        assert doc["catalog_sha256"]

    def test_usage_error_exit_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["kappa", "--bandwidth", "warp"])
        assert exc.value.code == 2


class TestRooflineCommand:
    def test_writes_csv_with_single_flip(self, tmp_path, capsys):
        out_path = tmp_path / "roof.csv"
        code, _, _ = run(
            ["roofline", "--model", "Qwen3-235B-A22B", "--hw", "H100-PCIe5,B200-PCIe5",
             "--out", str(out_path)],
            capsys,
        )
        assert code == EXIT_OK
        lines = out_path.read_text().splitlines()
        assert lines[0].startswith("# manifest")
        reader = csv.DictReader(lines[1:])
        per_hw = {}
        for row in reader:
            per_hw.setdefault(row["hardware"], []).append(row["regime"])
        for regimes in per_hw.values():
            flips = sum(
                1 for a, b in zip(regimes, regimes[1:]) if a == "compute-bound" and b == "bandwidth-bound"
            )
            assert flips == 1

    def test_what_if_entries_scale_flip(self, tmp_path, capsys):
        out_path = tmp_path / "whatif.csv"
        code, _, _ = run(
            ["roofline", "--model", "Qwen3-235B-A22B",
             "--hw", "H100-PCIe5,GH-NVLink-C2C,Unified-HBM", "--bandwidth", "peak",
             "--out", str(out_path)],
            capsys,
        )
        assert code == EXIT_OK
        rows = list(csv.DictReader(out_path.read_text().splitlines()[1:]))
        crit = {r["hardware"]: float(r["kappa_crit"]) for r in rows}
        assert crit["GH-NVLink-C2C"] / crit["H100-PCIe5"] == pytest.approx(5.3, abs=0.3)
        assert crit["Unified-HBM"] / crit["GH-NVLink-C2C"] == pytest.approx(9, abs=0.5)

    def test_unwritable_out_is_data_error(self, tmp_path, capsys):
        code, _, err = run(
            ["roofline", "--model", "DeepSeek-V3", "--out", str(tmp_path / "no" / "dir.csv")],
            capsys,
        )
        assert code == EXIT_DATA
        assert "error" in err


class TestAnalyzeCommand:
    def test_conversation_table(self, tmp_path, capsys):
        trace = tmp_path / "conv.jsonl"
        trace.write_text(
            json.dumps(
                {
                    "conversation_id": "t1",
                    "turns": [
                        {"query_tokens": 3, "response_tokens": 1},
                        {"query_tokens": 2, "response_tokens": 2},
                        {"query_tokens": 3, "response_tokens": 1},
                    ],
                }
            )
            + "\n"
        )
        records_csv = tmp_path / "records.csv"
        code, out, _ = run(
            ["analyze", str(trace), "--kind", "conversation", "--out", str(records_csv)], capsys
        )
        assert code == EXIT_OK
        assert "requests: 3" in out
        rows = list(csv.DictReader(records_csv.read_text().splitlines()[1:]))
        assert [(int(r["cached_tokens"]), int(r["prefill_tokens"])) for r in rows] == [
            (0, 3),
            (4, 2),
            (8, 3),
        ]

    def test_document_single(self, tmp_path, capsys):
        trace = tmp_path / "doc.jsonl"
        trace.write_text(json.dumps({"doc_id": "d", "doc_tokens": 64, "question_tokens": [8]}) + "\n")
        code, out, _ = run(["analyze", str(trace), "--kind", "document"], capsys)
        assert code == EXIT_OK
        assert "requests: 1" in out

    def test_empty_file_is_error(self, tmp_path, capsys):
        trace = tmp_path / "empty.jsonl"
        trace.write_text("")
        code, _, err = run(["analyze", str(trace), "--kind", "document"], capsys)
        assert code == EXIT_DATA

    def test_malformed_line_reports_number(self, tmp_path, capsys):
        trace = tmp_path / "bad.jsonl"
        trace.write_text('{"doc_id": "d", "doc_tokens": 5, "question_tokens": [1]}\nnot json\n')
        code, _, err = run(["analyze", str(trace), "--kind", "document"], capsys)
        assert code == EXIT_DATA
        assert "line 2" in err


class TestSynthCommand:
    def test_deterministic_output(self, tmp_path, capsys):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        args = ["synth", "--profile", "sharegpt", "--rps", "5", "--duration", "4", "--seed", "9"]
        assert run(args + ["--out", str(a)], capsys)[0] == EXIT_OK
        assert run(args + ["--out", str(b)], capsys)[0] == EXIT_OK
        # identical bytes apart from the output path recorded in the manifest
        strip = lambda p: "\n".join(p.read_text().splitlines()[1:])
        assert strip(a) == strip(b)
        first = json.loads(a.read_text().splitlines()[0])
        assert first["_manifest"]["seed"] == 9

    def test_rerunning_manifest_command_reproduces_bytes(self, tmp_path, capsys):
        out = tmp_path / "s.jsonl"
        args = ["synth", "--profile", "finqa", "--rps", "3", "--duration", "5", "--seed", "1",
                "--out", str(out)]
        assert run(args, capsys)[0] == EXIT_OK
        original = out.read_bytes()
        manifest = json.loads(out.read_text().splitlines()[0])["_manifest"]
        replay = manifest["command"][1:]  # drop argv[0]
        assert run(replay, capsys)[0] == EXIT_OK
        assert out.read_bytes() == original

    def test_unknown_profile(self, tmp_path, capsys):
        code, _, err = run(
            ["synth", "--profile", "mystery", "--rps", "1", "--duration", "1",
             "--out", str(tmp_path / "x.jsonl")],
            capsys,
        )
        assert code == EXIT_DATA
        assert "unknown profile" in err


class TestSimulateCommand:
    def test_fixture_compare_three_vs_two(self, tmp_path, capsys):
        out_dir = tmp_path / "sim"
        code, out, _ = run(
            ["simulate", "--config", fixture_path("scheduling_fixture_config.json"),
             "--stream", fixture_path("scheduling_fixture_stream.jsonl"),
             "--compare", "--out", str(out_dir)],
            capsys,
        )
        assert code == EXIT_OK
        assert "fifo=3" in out and "utilization=2" in out
        doc = json.loads((out_dir / "comparison.json").read_text())
        counts = {p["policy"]: p["iterations"] for p in doc["comparison"]["policies"]}
        assert counts == {"fifo": 3, "utilization": 2}
        iter_csv = (out_dir / "iterations_fifo.csv").read_text().splitlines()
        assert iter_csv[1] == "iter,t_start,t_end,scheduled_tokens,vram_used_bytes,queue_depth,busy"
        assert len(iter_csv) == 2 + 3

    def test_zero_length_stream_empty_report(self, tmp_path, capsys):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        out_dir = tmp_path / "sim"
        code, _, _ = run(
            ["simulate", "--config", fixture_path("scheduling_fixture_config.json"),
             "--stream", str(empty), "--out", str(out_dir)],
            capsys,
        )
        assert code == EXIT_OK
        doc = json.loads((out_dir / "report.json").read_text())
        assert doc["report"]["completed"] == 0
        assert doc["report"]["iterations"] == 0

    def test_config_referencing_catalog_names(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "model": "Qwen3-235B-A22B",
                    "hardware": "H100-PCIe5-measured",
                    "bandwidth_mode": "sustained",
                    "token_budget": 4000,
                }
            )
        )
        stream = tmp_path / "one.jsonl"
        stream.write_text(
            json.dumps(
                {"source_id": "solo", "cached_tokens": 4096, "prefill_tokens": 64,
                 "arrival_time": 0.0}
            )
            + "\n"
        )
        out_dir = tmp_path / "sim"
        code, _, _ = run(
            ["simulate", "--config", str(config), "--stream", str(stream), "--out", str(out_dir)],
            capsys,
        )
        assert code == EXIT_OK
        doc = json.loads((out_dir / "report.json").read_text())
        assert doc["report"]["completed"] == 1

    def test_config_catalog_mismatch(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"model": "NoSuchModel", "hardware": "H100-PCIe5"}))
        stream = tmp_path / "s.jsonl"
        stream.write_text("")
        code, _, err = run(
            ["simulate", "--config", str(config), "--stream", str(stream),
             "--out", str(tmp_path / "o")],
            capsys,
        )
        assert code == EXIT_DATA
        assert "NoSuchModel" in err


class TestCatalogSelection:
    def test_env_var_catalog(self, tmp_path, capsys, monkeypatch):
        models, hardware = default_catalog()
        trimmed = tmp_path / "cat.json"
        trimmed.write_text(serialize_catalog(models[:1], hardware[:1]))
        monkeypatch.setenv("KVROOF_CATALOG", str(trimmed))
        code, out, _ = run(["kappa"], capsys)
        assert code == EXIT_OK
        rows = [line for line in out.splitlines() if line and not line.startswith(("#", "model"))]
        assert len(rows) == 1

    def test_catalog_flag_overrides(self, tmp_path, capsys):
        models, hardware = default_catalog()
        trimmed = tmp_path / "cat.json"
        trimmed.write_text(serialize_catalog(models[:2], hardware[:3]))
        code, out, _ = run(["kappa", "--catalog", str(trimmed)], capsys)
        assert code == EXIT_OK
        rows = [line for line in out.splitlines() if line and not line.startswith(("#", "model"))]
        assert len(rows) == 6
