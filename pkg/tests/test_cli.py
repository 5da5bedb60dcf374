import json
import os
import subprocess
import sys

import numpy as np
import pytest

from domainness import formats
from domainness.cli import build_params, build_parser, main
from domainness.errors import DataError
from domainness.synthgen import SynthConfig, generate


def run_cli(*args):
    return main(list(args))


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    generate(SynthConfig(classes=2, per_domain=10, shift="both", seed=3), root)
    return root


def pipeline_args(data, out, *extra):
    return [
        "pipeline",
        "--src", str(data / "manifest_P.json"),
        "--tgt", str(data / "manifest_Q.json"),
        "--out", str(out),
        "--epochs", "300",
        *extra,
    ]


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert run_cli("synth", "--bogus", "x") == 1

    def test_no_command_is_usage_error(self):
        assert run_cli() == 1

    def test_missing_manifest_is_data_error(self, tmp_path):
        code = run_cli("train-domain", "--src", str(tmp_path / "no.json"),
                       "--tgt", str(tmp_path / "no2.json"), "--out", str(tmp_path / "o"))
        assert code == 2

    def test_bad_extractor_is_bridge_error(self, tiny_data, tmp_path):
        code = run_cli("train-domain",
                       "--src", str(tiny_data / "manifest_P.json"),
                       "--tgt", str(tiny_data / "manifest_Q.json"),
                       "--out", str(tmp_path / "o"),
                       "--extractor", "/not/a/real/bridge --mode x")
        assert code == 3

    def test_same_domain_both_sides_is_data_error(self, tiny_data, tmp_path):
        code = run_cli("train-domain",
                       "--src", str(tiny_data / "manifest_P.json"),
                       "--tgt", str(tiny_data / "manifest_P.json"),
                       "--out", str(tmp_path / "o"))
        assert code == 2


class TestParams:
    def test_flag_beats_config_beats_default(self):
        parser = build_parser()
        args = parser.parse_args(["map", "--src", "s", "--tgt", "t", "--out", "o",
                                  "--patch", "24"])
        params = build_params(args, {"patch": 32, "stride": 4})
        assert params.patch == 24     # flag wins
        assert params.stride == 4     # config fills the gap
        assert params.crop == 227     # default

    def test_unknown_config_key_rejected(self):
        parser = build_parser()
        args = parser.parse_args(["map", "--src", "s", "--tgt", "t", "--out", "o"])
        with pytest.raises(DataError, match="unknown keys"):
            build_params(args, {"patches_per_scale": 5})

    def test_scales_parse(self):
        parser = build_parser()
        args = parser.parse_args(["levels", "--src", "s", "--tgt", "t", "--out", "o",
                                  "--scales", "16,32"])
        assert build_params(args, {}).scales == (16, 32)

    def test_extractor_env_fallback(self, monkeypatch):
        parser = build_parser()
        args = parser.parse_args(["map", "--src", "s", "--tgt", "t", "--out", "o"])
        monkeypatch.setenv("DOMAINNESS_EXTRACTOR", "mybridge --mode builtin-equiv")
        assert build_params(args, {}).extractor == "mybridge --mode builtin-equiv"
        monkeypatch.delenv("DOMAINNESS_EXTRACTOR")
        assert build_params(args, {}).extractor is None


class TestPipeline:
    def test_produces_artifacts_and_is_deterministic(self, tiny_data, tmp_path):
        out1 = tmp_path / "run1"
        out2 = tmp_path / "run2"
        assert run_cli(*pipeline_args(tiny_data, out1, "--jobs", "2")) == 0
        assert run_cli(*pipeline_args(tiny_data, out2)) == 0
        for sub in ("maps", "levels", "models", "report.json", "predictions.csv", "analysis.json"):
            assert (out1 / sub).exists()
        # fresh runs with different worker counts agree byte for byte
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
        assert (out1 / "predictions.csv").read_bytes() == (out2 / "predictions.csv").read_bytes()
        maps1 = sorted(p.name for p in (out1 / "maps").glob("*.dmap"))
        for name in maps1:
            assert (out1 / "maps" / name).read_bytes() == (out2 / "maps" / name).read_bytes()

    def test_rerun_uses_caches_and_keeps_bytes(self, tiny_data, tmp_path):
        out = tmp_path / "run"
        assert run_cli(*pipeline_args(tiny_data, out)) == 0
        before = (out / "report.json").read_bytes()
        stamp = (out / "report.json").stat().st_mtime_ns
        assert run_cli(*pipeline_args(tiny_data, out)) == 0
        assert (out / "report.json").read_bytes() == before
        assert (out / "report.json").stat().st_mtime_ns == stamp  # untouched, not rewritten

    def test_resumes_missing_map(self, tiny_data, tmp_path):
        out = tmp_path / "run"
        assert run_cli(*pipeline_args(tiny_data, out)) == 0
        victim = sorted((out / "maps").glob("*.dmap"))[0]
        keeper = sorted((out / "maps").glob("*.dmap"))[1]
        original = victim.read_bytes()
        keeper_stamp = keeper.stat().st_mtime_ns
        victim.unlink()
        code = run_cli("map", "--src", str(tiny_data / "manifest_P.json"),
                       "--tgt", str(tiny_data / "manifest_Q.json"),
                       "--out", str(out), "--epochs", "300")
        assert code == 0
        assert victim.read_bytes() == original
        assert keeper.stat().st_mtime_ns == keeper_stamp  # untouched sibling

    def test_report_structure(self, tiny_data, tmp_path):
        out = tmp_path / "run"
        assert run_cli(*pipeline_args(tiny_data, out)) == 0
        report = json.loads((out / "report.json").read_text())
        assert len(report["rows"]) == 13
        assert report["pair"] == "P->Q"
        names = [r["name"] for r in report["rows"]]
        assert names[0] == "G" and names[1] == "G-FT"
        assert names[11] == "G + DL" and names[12] == "G + aligned-DL"
        with open(out / "predictions.csv") as fh:
            header = fh.readline().strip().split(",")
        assert header[:3] == ["path", "true_class", "predicted_class"]
        assert all(c.startswith("score_") for c in header[3:])

    def test_heatmaps_flag(self, tiny_data, tmp_path):
        out = tmp_path / "run"
        code = run_cli("map", "--src", str(tiny_data / "manifest_P.json"),
                       "--tgt", str(tiny_data / "manifest_Q.json"),
                       "--out", str(out), "--epochs", "100", "--heatmaps")
        assert code == 0
        assert len(list((out / "maps" / "heatmaps").glob("*.png"))) == 20
        assert len(list((out / "maps" / "overlays").glob("*.png"))) == 20


def test_console_entrypoint_usage():
    proc = subprocess.run(
        [sys.executable, "-m", "domainness.cli", "--definitely-unknown"],
        capture_output=True,
    )
    assert proc.returncode == 1
