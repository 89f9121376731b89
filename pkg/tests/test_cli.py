import json
import shutil
from pathlib import Path

import pytest

from ragdep.cli import main
from ragdep.errors import RunConfigError
from ragdep.cli import load_run_config

REPO = Path(__file__).parent.parent
GOLDEN = REPO / "data" / "golden"
DEMO_PROJECT = REPO / "data" / "demo_project"


@pytest.fixture
def workspace(tmp_path):
    """Golden fixtures copied into a scratch directory (without any built stores)."""
    root = tmp_path / "ws"
    shutil.copytree(GOLDEN, root, ignore=shutil.ignore_patterns("out"))
    return root


def run_cli(*argv):
    return main([str(a) for a in argv])


def ingest(root):
    assert run_cli("ingest", "--config", root / "run.yaml") == 0


# --- extract ---------------------------------------------------------------------


def test_extract_demo_project(tmp_path, capsys):
    out = tmp_path / "candidates.jsonl"
    code = run_cli("extract", DEMO_PROJECT, "--out", out)
    assert code == 0
    rows = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(rows) == 1
    assert rows[0]["is_cross_technology"] is True
    names = {rows[0]["option_a"]["name"], rows[0]["option_b"]["name"]}
    assert names == {"server.port", "EXPOSE"}
    assert "1 candidates" in capsys.readouterr().err


def test_extract_empty_directory(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    out = tmp_path / "candidates.jsonl"
    assert run_cli("extract", empty, "--out", out) == 0
    assert out.read_text() == ""


def test_extract_malformed_artifact_exits_2(tmp_path, capsys):
    project = tmp_path / "proj"
    project.mkdir()
    (project / "application.yml").write_text("a:\n  - b\n c: ]\n")
    assert run_cli("extract", project, "--out", tmp_path / "c.jsonl") == 2
    assert "application.yml" in capsys.readouterr().err


def test_extract_unreadable_file_exits_2(tmp_path, capsys):
    project = tmp_path / "proj"
    project.mkdir()
    (project / "application.yml").write_bytes(b"\xff\xfeserver: 1")
    assert run_cli("extract", project, "--out", tmp_path / "c.jsonl") == 2


# --- ingest ----------------------------------------------------------------------


def test_ingest_builds_stores_with_expected_chunks(workspace, capsys):
    ingest(workspace)
    err = capsys.readouterr().err
    # every golden corpus file is shorter than one window: 6 docs -> 6 chunks
    assert "[ada2] 6 documents, 6 chunks (inserted 6, replaced 0)" in err
    assert "[qwen2] 6 documents, 6 chunks (inserted 6, replaced 0)" in err
    assert (workspace / "out/stores/ada2/embeddings.bin").is_file()
    assert (workspace / "out/stores/qwen2/bm25.json").is_file()


def test_reingest_replaces(workspace, capsys):
    ingest(workspace)
    ingest(workspace)
    assert "(inserted 0, replaced 6)" in capsys.readouterr().err


def test_ingest_missing_manifest_exits_2(workspace):
    (workspace / "manifest.yaml").unlink()
    assert run_cli("ingest", "--config", workspace / "run.yaml") == 2


# --- validate ---------------------------------------------------------------------


def test_validate_vanilla_records_have_empty_context(workspace):
    code = run_cli(
        "validate", "--config", workspace / "run.yaml", "--model", "mock-validator",
        "--vanilla", "--run-id", "van",
    )
    assert code == 0
    records = [
        json.loads(l) for l in (workspace / "out/runs/van/records.jsonl").read_text().splitlines()
    ]
    assert len(records) == 12
    assert all(r["rag_variant_id"] == "w/o" for r in records)
    assert all(r["context"] == [] for r in records)


def test_validate_variant4_slots_at_most_3(workspace):
    ingest(workspace)
    code = run_cli(
        "validate", "--config", workspace / "run.yaml", "--model", "mock-validator",
        "--variant", "4", "--run-id", "v4",
    )
    assert code == 0
    records = [
        json.loads(l) for l in (workspace / "out/runs/v4/records.jsonl").read_text().splitlines()
    ]
    assert all(len(r["context"]) <= 3 for r in records)
    assert all(r["top_n"] == 3 for r in records)


def test_validate_unknown_variant_exits_2(workspace):
    code = run_cli(
        "validate", "--config", workspace / "run.yaml", "--model", "mock-validator",
        "--variant", "99",
    )
    assert code == 2


def test_validate_unknown_model_exits_2(workspace):
    code = run_cli(
        "validate", "--config", workspace / "run.yaml", "--model", "gpt-imaginary", "--vanilla"
    )
    assert code == 2


def test_validate_without_store_exits_2(workspace):
    code = run_cli(
        "validate", "--config", workspace / "run.yaml", "--model", "mock-validator", "--variant", "2"
    )
    assert code == 2


# --- evaluate / report / annotate ----------------------------------------------------


def test_evaluate_report_annotate_flow(workspace, capsys):
    ingest(workspace)
    assert run_cli("evaluate", "--config", workspace / "run.yaml", "--run-id", "full") == 0
    run_dir = workspace / "out/runs/full"
    for name in ("metrics.md", "metrics.csv", "records.jsonl", "slot_usage.csv", "failures.csv", "run.json"):
        assert (run_dir / name).is_file(), name
    md = (run_dir / "metrics.md").read_text()
    assert "| w/o | mock-validator | 4 | 0.67 | 0.67 | 0.67 |" in md
    capsys.readouterr()

    # report recomputes the same table from persisted records
    assert run_cli("report", "--config", workspace / "run.yaml", "--run-id", "full") == 0
    assert "| 4 | mock-validator | 4 | 0.67 | 0.67 | 0.67 |" in capsys.readouterr().out

    # pick a false negative and annotate it
    failures = (run_dir / "failures.csv").read_text().splitlines()[1:]
    fn_line = next(l for l in failures if ",false,true," in l)
    candidate_id = fn_line.split(",")[2]
    code = run_cli(
        "annotate", "--config", workspace / "run.yaml", "--run-id", "full",
        "--record", candidate_id, "--category", "inheritance_and_overrides",
    )
    assert code == 0
    dataset = [json.loads(l) for l in (workspace / "dataset.jsonl").read_text().splitlines()]
    annotated = next(r for r in dataset if r["id"] == candidate_id)
    assert annotated["failure_category"] == "inheritance_and_overrides"
    assert (run_dir / "annotations_audit.jsonl").is_file()


def test_annotate_correct_record_exits_2(workspace, capsys):
    ingest(workspace)
    assert run_cli("evaluate", "--config", workspace / "run.yaml", "--run-id", "full") == 0
    run_dir = workspace / "out/runs/full"
    records = [json.loads(l) for l in (run_dir / "records.jsonl").read_text().splitlines()]
    dataset = {r["id"]: r["label"] for r in map(json.loads, (workspace / "dataset.jsonl").read_text().splitlines())}
    correct = next(
        r["candidate_id"]
        for r in records
        if r["verdict"]["isDependency"] == dataset[r["candidate_id"]]
    )
    capsys.readouterr()
    code = run_cli(
        "annotate", "--config", workspace / "run.yaml", "--run-id", "full",
        "--record", correct, "--category", "port_mapping",
    )
    assert code == 2
    assert "correctly" in capsys.readouterr().err


def test_report_missing_run_exits_2(workspace):
    assert run_cli("report", "--config", workspace / "run.yaml", "--run-id", "nope") == 2


def test_evaluate_is_idempotent_byte_identical(workspace, tmp_path):
    ingest(workspace)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run_cli("evaluate", "--config", workspace / "run.yaml", "--run-id", "r", "--output-dir", out_a) == 0
    assert run_cli("evaluate", "--config", workspace / "run.yaml", "--run-id", "r", "--output-dir", out_b) == 0
    for name in ("metrics.md", "metrics.csv", "slot_usage.csv", "failures.csv", "run.json"):
        assert (out_a / "r" / name).read_bytes() == (out_b / "r" / name).read_bytes(), name


# --- run config --------------------------------------------------------------------


def test_run_config_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("dataset: d.jsonl\nmystery_knob: 7\n")
    with pytest.raises(RunConfigError):
        load_run_config(cfg)


def test_run_config_resolves_paths_relative_to_file(tmp_path):
    nested = tmp_path / "configs"
    nested.mkdir()
    cfg = nested / "run.yaml"
    cfg.write_text("dataset: ../data.jsonl\noutput_dir: out\n")
    loaded = load_run_config(cfg)
    assert loaded.dataset == tmp_path / "data.jsonl"
    assert loaded.output_dir == nested / "out"


def test_run_config_validates_variant_ids(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text('variants: ["7"]\n')
    with pytest.raises(RunConfigError):
        load_run_config(cfg)


def test_golden_run_config_parses():
    cfg = load_run_config(GOLDEN / "run.yaml")
    assert [m.model_id for m in cfg.models] == ["mock-validator"]
    assert [v.id for v in cfg.variants] == ["w/o", "1", "2", "3", "4"]
    assert cfg.chunker.chunk_size == 512 and cfg.chunker.overlap == 50
    assert cfg.fusion.k_rrf == 60
