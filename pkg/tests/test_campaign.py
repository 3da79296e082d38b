"""Campaign orchestration and the command-line front end."""

import hashlib
import json
import socket

import numpy as np
import pytest

from segevo.campaign import (
    CampaignConfig,
    EvaluateReport,
    cmd_attack,
    cmd_evaluate,
    cmd_replay,
    cmd_stats,
    derive_entry_seed,
    read_iou_table,
    write_evaluate_csv,
    write_stats_outputs,
)
from segevo.cli import main
from segevo.dataset_io import (
    LayoutConfig,
    load_dataset,
    load_image,
    load_manifest,
    manifest_differences,
    save_image,
    write_demo_corpus,
)
from segevo.errors import ConfigError, DriftDetected, IdMismatch
from segevo.evolution import GaConfig
from segevo.imaging import Image
from segevo.oracle import PaletteSegmenter
from segevo.transforms import default_bounds

FAST_GA = GaConfig(population_size=8, max_generations=4, elite_count=2,
                   tournament_size=3, stagnation_window=50, master_seed=13)

FAST_GA_TEXT = (
    "population_size = 8\n"
    "max_generations = 4\n"
    "elite_count = 2\n"
    "tournament_size = 3\n"
    "stagnation_window = 50\n"
    "master_seed = 13\n"
)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_demo_corpus(root, count=3, height=32, width=32, seed=5)
    return root


def _closed_port() -> int:
    probe = socket.create_server(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    return port


class TestDeriveEntrySeed:
    def test_matches_documented_derivation(self):
        blob = "13\x00scene000".encode()
        expected = int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")
        assert derive_entry_seed(13, "scene000") == expected

    def test_entries_and_campaigns_get_distinct_seeds(self):
        assert derive_entry_seed(13, "a") != derive_entry_seed(13, "b")
        assert derive_entry_seed(13, "a") != derive_entry_seed(14, "a")

    def test_independent_of_corpus_composition(self):
        # the seed depends only on (master_seed, id), never on sibling entries
        assert derive_entry_seed(13, "scene001") == derive_entry_seed(13, "scene001")


class TestCampaignConfig:
    def test_validation(self, tmp_path):
        with pytest.raises(ConfigError, match="not a directory"):
            CampaignConfig(dataset_root=tmp_path / "missing", out_root=tmp_path / "o")
        with pytest.raises(ConfigError, match="parallel_workers"):
            CampaignConfig(dataset_root=tmp_path, out_root=tmp_path / "o",
                           parallel_workers=0)
        with pytest.raises(ConfigError, match="time_budget"):
            CampaignConfig(dataset_root=tmp_path, out_root=tmp_path / "o",
                           per_image_time_budget=0.0)


class TestCmdAttack:
    def test_empty_dataset_yields_empty_manifest(self, tmp_path):
        (tmp_path / "empty").mkdir()
        cfg = CampaignConfig(dataset_root=tmp_path / "empty",
                             out_root=tmp_path / "out", ga=FAST_GA)
        manifest = cmd_attack(cfg, quiet=True)
        assert manifest.entries == [] and manifest.failures == []
        assert manifest.summary["entries"] == 0
        assert manifest.summary["clean_miou"] is None

    def test_full_run_exports_a_degraded_loadable_dataset(self, corpus, tmp_path):
        out = tmp_path / "out"
        cfg = CampaignConfig(dataset_root=corpus, out_root=out, ga=FAST_GA)
        manifest = cmd_attack(cfg, quiet=True)
        assert [e["id"] for e in manifest.entries] == ["scene000", "scene001", "scene002"]
        assert manifest.failures == []
        for entry in manifest.entries:
            assert entry["psnr"] > 20.0
            assert (out / "traces" / f"{entry['id']}.json").is_file()
        assert manifest.summary["clean_miou"] == 1.0
        assert manifest.summary["adversarial_miou"] < 1.0
        # the output directory is itself a dataset
        index = load_dataset(out)
        assert len(index) == 3

    def test_dual_runs_are_identical(self, corpus, tmp_path):
        manifests = []
        for name in ("one", "two"):
            cfg = CampaignConfig(dataset_root=corpus, out_root=tmp_path / name,
                                 ga=FAST_GA)
            manifests.append(cmd_attack(cfg, quiet=True))
        assert manifest_differences(manifests[0], manifests[1]) == []
        for rel in sorted(p.relative_to(tmp_path / "one")
                          for p in (tmp_path / "one").rglob("*.png")):
            assert ((tmp_path / "one" / rel).read_bytes()
                    == (tmp_path / "two" / rel).read_bytes())

    def test_worker_count_does_not_change_results(self, corpus, tmp_path):
        manifests = []
        for name, workers in (("serial", 1), ("parallel", 3)):
            cfg = CampaignConfig(dataset_root=corpus, out_root=tmp_path / name,
                                 ga=FAST_GA, parallel_workers=workers)
            manifests.append(cmd_attack(cfg, quiet=True))
        assert manifest_differences(manifests[0], manifests[1]) == []

    def test_unreachable_oracle_fails_every_entry(self, corpus, tmp_path):
        cfg = CampaignConfig(dataset_root=corpus, out_root=tmp_path / "out",
                             ga=FAST_GA, oracle=f"tcp:127.0.0.1:{_closed_port()}",
                             oracle_timeout=2.0)
        manifest = cmd_attack(cfg, quiet=True)
        assert manifest.entries == []
        assert [f["id"] for f in manifest.failures] == ["scene000", "scene001", "scene002"]
        for failure in manifest.failures:
            assert failure["error"].startswith("OracleFailure")


class TestCmdEvaluate:
    def test_clean_corpus_scores_one(self, corpus):
        report = cmd_evaluate(load_dataset(corpus), PaletteSegmenter())
        assert all(row.mean_iou == 1.0 for row in report.rows)
        assert report.aggregate == 1.0

    def test_empty_dataset(self, tmp_path):
        report = cmd_evaluate(load_dataset(tmp_path), PaletteSegmenter())
        assert report == EvaluateReport(rows=(), aggregate=None)

    def test_csv_round_trip(self, corpus, tmp_path):
        report = cmd_evaluate(load_dataset(corpus), PaletteSegmenter())
        path = tmp_path / "table.csv"
        write_evaluate_csv(report, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "id,mean_iou,per_class"
        table = read_iou_table(path)
        assert table == {row.id: row.mean_iou for row in report.rows}

    def test_read_iou_table_rejections(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        with pytest.raises(ConfigError, match="empty"):
            read_iou_table(empty)
        bad_header = tmp_path / "h.csv"
        bad_header.write_text("image,score\nx,1\n")
        with pytest.raises(ConfigError, match="expected header"):
            read_iou_table(bad_header)
        dup = tmp_path / "d.csv"
        dup.write_text("id,mean_iou\nx,0.5\nx,0.6\n")
        with pytest.raises(ConfigError, match="duplicate id"):
            read_iou_table(dup)
        bad_value = tmp_path / "v.csv"
        bad_value.write_text("id,mean_iou\nx,often\n")
        with pytest.raises(ConfigError, match="bad mean_iou"):
            read_iou_table(bad_value)


class TestCmdStats:
    def test_comparison_of_distinct_tables(self):
        a = {"x": 0.9, "y": 0.8, "z": 0.7}
        b = {"x": 0.4, "y": 0.3, "z": 0.5}
        report = cmd_stats(a, b, labels=("clean", "attacked"))
        assert report.n_pairs == 3
        assert report.wilcoxon is not None
        assert report.wilcoxon.statistic == 6.0  # all differences positive
        assert report.cohens is not None and report.cohens.d > 0

    def test_self_comparison_warns_and_scores_zero_effect(self):
        table = {"x": 0.3, "y": 0.5, "z": 0.7}
        report = cmd_stats(table, dict(table))
        assert report.wilcoxon is None
        assert "zero" in report.wilcoxon_warning
        assert report.cohens is not None and report.cohens.d == 0.0

    def test_disjoint_ids_raise_id_mismatch(self):
        with pytest.raises(IdMismatch) as info:
            cmd_stats({"x": 0.5}, {"y": 0.5})
        assert info.value.only_a == ["x"]
        assert info.value.only_b == ["y"]

    def test_empty_tables(self):
        with pytest.raises(ConfigError, match="empty"):
            cmd_stats({}, {})

    def test_written_outputs(self, tmp_path):
        a = {"x": 0.9, "y": 0.8, "z": 0.7}
        b = {"x": 0.4, "y": 0.3, "z": 0.5}
        report = cmd_stats(a, b, labels=("clean", "attacked"))
        write_stats_outputs(report, a, b, tmp_path)
        comparison = (tmp_path / "comparison.csv").read_text().splitlines()
        assert comparison[0] == "method_a,method_b,statistic,p_value,mode,n_effective"
        assert comparison[1].startswith("clean,attacked,6.0,")
        violin = (tmp_path / "violin.csv").read_text().splitlines()
        assert violin[0] == "method,image,iou"
        assert len(violin) == 1 + 6
        assert f"clean,x,{0.9!r}" in violin
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["n_pairs"] == 3
        assert doc["wilcoxon"]["statistic"] == 6.0
        assert doc["summaries"]["clean"]["median"] == 0.8
        assert "quantile_definition" in doc["metadata"]

    def test_warning_row_for_identical_tables(self, tmp_path):
        table = {"x": 0.3, "y": 0.5}
        report = cmd_stats(table, dict(table), labels=("a", "b"))
        write_stats_outputs(report, table, dict(table), tmp_path)
        rows = (tmp_path / "comparison.csv").read_text().splitlines()
        assert rows[1] == "a,b,,,all_zero_differences,0"


class TestCmdReplay:
    @pytest.fixture()
    def attacked(self, corpus, tmp_path):
        out = tmp_path / "out"
        cfg = CampaignConfig(dataset_root=corpus, out_root=out, ga=FAST_GA)
        cmd_attack(cfg, quiet=True)
        return out / "manifest.jsonl"

    def test_faithful_artifacts_verify(self, attacked, corpus):
        report = cmd_replay(attacked, corpus)
        assert report.checked == 3
        assert report.verified == 3

    def test_tampered_pixels_are_detected(self, attacked, corpus):
        manifest = load_manifest(attacked)
        target = attacked.parent / manifest.entries[0]["output_path"]
        img = load_image(target)
        tampered = np.array(img.samples)
        tampered[0, 0, 0] ^= 0x20
        save_image(Image(tampered), target)
        with pytest.raises(DriftDetected, match="1 of 3 entries drifted") as info:
            cmd_replay(attacked, corpus)
        assert info.value.entries[0][0] == manifest.entries[0]["id"]
        assert "pixels differ" in info.value.entries[0][1]

    def test_corrupt_chromosome_is_detected(self, attacked, corpus):
        lines = attacked.read_text().splitlines()
        patched = []
        for line in lines:
            record = json.loads(line)
            if record["type"] == "entry":
                record["chromosome"] = "00ff00ff"
            patched.append(json.dumps(record, sort_keys=True))
        attacked.write_text("\n".join(patched) + "\n")
        with pytest.raises(DriftDetected, match="3 of 3") as info:
            cmd_replay(attacked, corpus)
        assert all("does not decode" in reason for _, reason in info.value.entries)

    def test_recorded_psnr_drift_is_detected(self, attacked, corpus):
        lines = attacked.read_text().splitlines()
        patched = []
        for line in lines:
            record = json.loads(line)
            if record["type"] == "entry" and record["id"] == "scene001":
                record["psnr"] = record["psnr"] + 0.5
            patched.append(json.dumps(record, sort_keys=True))
        attacked.write_text("\n".join(patched) + "\n")
        with pytest.raises(DriftDetected) as info:
            cmd_replay(attacked, corpus)
        assert len(info.value.entries) == 1
        assert info.value.entries[0][0] == "scene001"
        assert "psnr drift" in info.value.entries[0][1]

    def test_missing_export_is_detected(self, attacked, corpus):
        manifest = load_manifest(attacked)
        (attacked.parent / manifest.entries[2]["output_path"]).unlink()
        with pytest.raises(DriftDetected) as info:
            cmd_replay(attacked, corpus)
        assert "exported file missing" in info.value.entries[0][1]

    def test_missing_source_entry_is_detected(self, attacked, tmp_path):
        other = tmp_path / "other-corpus"
        write_demo_corpus(other, count=1, height=32, width=32, seed=5)
        with pytest.raises(DriftDetected) as info:
            cmd_replay(attacked, other)
        assert any("source entry missing" in reason for _, reason in info.value.entries)


class TestCli:
    def test_no_command_prints_help(self, capsys):
        assert main([]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["attack", "--frobnicate"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_missing_dataset_is_config_error(self, capsys):
        assert main(["attack", "--out", "/tmp/never"]) == 1
        assert "config error" in capsys.readouterr().err

    def test_gen_config_writes_loadable_templates(self, tmp_path, capsys):
        out = tmp_path / "cfg"
        assert main(["gen-config", "--out-dir", str(out)]) == 0
        assert GaConfig.from_file(out / "ga.cfg") == GaConfig()
        from segevo.transforms import ParameterBounds

        bounds = ParameterBounds.from_file(out / "bounds.cfg")
        assert bounds.to_snapshot() == default_bounds().to_snapshot()
        assert LayoutConfig.from_file(out / "layout.cfg") == LayoutConfig()
        # the campaign template is all comments: zero keys
        from segevo._kv import read_kv_file

        assert read_kv_file(out / "campaign.cfg") == {}

    def test_attack_evaluate_stats_replay_round_trip(self, corpus, tmp_path, capsys):
        ga_path = tmp_path / "ga.cfg"
        ga_path.write_text(FAST_GA_TEXT)
        out = tmp_path / "out"

        assert main(["attack", "--dataset", str(corpus), "--out", str(out),
                     "--ga-config", str(ga_path)]) == 0
        assert "attack seed=13" in capsys.readouterr().out

        clean_csv = tmp_path / "clean.csv"
        attacked_csv = tmp_path / "attacked.csv"
        assert main(["evaluate", "--dataset", str(corpus),
                     "--out", str(clean_csv)]) == 0
        assert "mean IoU over set: 1.000000" in capsys.readouterr().out
        assert main(["evaluate", "--dataset", str(out),
                     "--out", str(attacked_csv)]) == 0
        capsys.readouterr()

        stats_dir = tmp_path / "stats"
        assert main(["stats", str(clean_csv), str(attacked_csv),
                     "--out-dir", str(stats_dir)]) == 0
        stdout = capsys.readouterr().out
        assert "wilcoxon[clean vs attacked]" in stdout
        assert (stats_dir / "report.json").is_file()

        assert main(["replay", str(out / "manifest.jsonl"),
                     "--dataset", str(corpus)]) == 0
        assert "zero drift" in capsys.readouterr().out

    def test_replay_exit_code_on_drift(self, corpus, tmp_path, capsys):
        ga_path = tmp_path / "ga.cfg"
        ga_path.write_text(FAST_GA_TEXT)
        out = tmp_path / "out"
        assert main(["attack", "--dataset", str(corpus), "--out", str(out),
                     "--ga-config", str(ga_path)]) == 0
        capsys.readouterr()
        manifest_path = out / "manifest.jsonl"
        manifest = load_manifest(manifest_path)
        target = out / manifest.entries[0]["output_path"]
        img = load_image(target)
        tampered = np.array(img.samples)
        tampered[0, 0, 0] ^= 0x10
        save_image(Image(tampered), target)
        assert main(["replay", str(manifest_path), "--dataset", str(corpus)]) == 2
        assert "drift detected" in capsys.readouterr().err

    def test_repeat_runs_with_seed_stride(self, corpus, tmp_path, capsys):
        ga_path = tmp_path / "ga.cfg"
        ga_path.write_text(FAST_GA_TEXT.replace("max_generations = 4",
                                                "max_generations = 1"))
        out = tmp_path / "out"
        assert main(["attack", "--dataset", str(corpus), "--out", str(out),
                     "--ga-config", str(ga_path), "--repeat", "2",
                     "--seed-stride", "10"]) == 0
        capsys.readouterr()
        seeds = [load_manifest(out / f"run{k:03d}" / "manifest.jsonl").header["master_seed"]
                 for k in range(2)]
        assert seeds == [13, 23]

    def test_setting_precedence(self, corpus, tmp_path, capsys, monkeypatch):
        ga_path = tmp_path / "ga.cfg"
        ga_path.write_text(FAST_GA_TEXT.replace("max_generations = 4",
                                                "max_generations = 1"))
        config = tmp_path / "campaign.cfg"
        config.write_text(f"ga_config = {ga_path}\nmaster_seed = 5\n")

        # config file beats the flag
        out1 = tmp_path / "o1"
        assert main(["attack", "--config", str(config), "--dataset", str(corpus),
                     "--out", str(out1), "--seed", "9"]) == 0
        assert load_manifest(out1 / "manifest.jsonl").header["master_seed"] == 5

        # environment beats the config file
        monkeypatch.setenv("SEGEVO_MASTER_SEED", "7")
        out2 = tmp_path / "o2"
        assert main(["attack", "--config", str(config), "--dataset", str(corpus),
                     "--out", str(out2), "--seed", "9"]) == 0
        assert load_manifest(out2 / "manifest.jsonl").header["master_seed"] == 7
        capsys.readouterr()

    def test_flag_used_when_no_higher_source(self, corpus, tmp_path, capsys):
        ga_path = tmp_path / "ga.cfg"
        ga_path.write_text(FAST_GA_TEXT.replace("max_generations = 4",
                                                "max_generations = 1"))
        out = tmp_path / "out"
        assert main(["attack", "--dataset", str(corpus), "--out", str(out),
                     "--ga-config", str(ga_path), "--seed", "99"]) == 0
        assert load_manifest(out / "manifest.jsonl").header["master_seed"] == 99
        capsys.readouterr()

    def test_attack_failure_exit_code(self, corpus, tmp_path, capsys):
        ga_path = tmp_path / "ga.cfg"
        ga_path.write_text(FAST_GA_TEXT)
        out = tmp_path / "out"
        assert main(["attack", "--dataset", str(corpus), "--out", str(out),
                     "--ga-config", str(ga_path),
                     "--oracle", f"tcp:127.0.0.1:{_closed_port()}",
                     "--oracle-timeout", "2"]) == 2
        err = capsys.readouterr().err
        assert "failed scene000" in err

    def test_bad_numeric_setting(self, corpus, capsys):
        assert main(["attack", "--dataset", str(corpus), "--out", "/tmp/x",
                     "--workers", "several"]) == 1
        assert "bad value for parallel_workers" in capsys.readouterr().err
