#!/usr/bin/env python3
"""Run the full golden experiment grid and print the effectiveness table.

One mock model crossed with the vanilla baseline and the four built-in
retrieval variants, over the 12 labeled benchmark items. Everything is
offline and deterministic: a second run writes byte-identical metrics.
"""

import sys
import tempfile
from pathlib import Path

from ragdep.evaluation import failure_table, load_dataset, render_metrics_markdown

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
from golden_run import GOLDEN, run_golden  # noqa: E402

with tempfile.TemporaryDirectory() as scratch:
    result, run_dir = run_golden(Path(scratch), run_id="demo")
    print(render_metrics_markdown(result))
    print("per-cell confusion (tp, fp, tn, fn):")
    for cell in result.cells:
        cm = cell.confusion
        print(f"  variant {cell.rag_variant_id:>3} x {cell.model_id}: "
              f"({cm.tp}, {cm.fp}, {cm.tn}, {cm.fn}), defaulted={cell.n_defaulted}")

    items = [it for it in load_dataset(GOLDEN / "dataset.jsonl") if it.split == "benchmark"]
    table = failure_table(items, {"w/o": result.cell("w/o", "mock-validator").records})
    print("\nfailure categories (unannotated failures fall into 'others'):")
    print(table.to_csv())
    print(f"emitted files: {sorted(p.name for p in run_dir.iterdir())}")
