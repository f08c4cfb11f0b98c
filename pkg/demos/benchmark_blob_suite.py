#!/usr/bin/env python3
"""Run the full benchmark pipeline on a small synthetic corpus via the CLI.

Writes the suite (images + manifest with oracle detector specs) under
demos/out/suite/, then invokes the `benchmark` command with both methods and
a reduced sampling budget, and prints the resulting report.
"""

from pathlib import Path

from dclose.cli import main
from dclose.corpus import write_blob_suite

root = Path(__file__).parent / "out" / "suite"
manifest = write_blob_suite(root, per_group=2, seed=7)
print(f"suite manifest: {manifest}")

code = main(
    [
        "benchmark",
        "--corpus", str(manifest),
        "--detector", "synthetic:manifest",
        "--segments", "100,300,900",
        "--masks", "200",
        "--drise-masks", "1000",
        "--steps", "50",
        "--seed", "11",
        "--ablation",
        "--out", str(root / "report"),
    ]
)
raise SystemExit(code)
