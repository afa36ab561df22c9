"""Run prepare -> train (head, then LoRA) -> evaluate on the bundled fixture.

    python scripts/run_pipeline.py [--workdir runs/fixture] [--seed 42] [--skip-lora]

Each stage goes through the installed ``mpsum`` CLI so the artifacts are
exactly what a user would get by hand.
"""
import argparse
import subprocess
import sys
import time
from pathlib import Path

import mpsum


def stage(*args):
    t0 = time.perf_counter()
    cmd = [sys.executable, "-m", "mpsum", *map(str, args)]
    print("$ mpsum " + " ".join(map(str, args)), flush=True)
    subprocess.run(cmd, check=True)
    print(f"  ({time.perf_counter() - t0:.1f}s)\n", flush=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", type=Path, default=Path("runs/fixture"))
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--skip-lora", action="store_true")
    args = ap.parse_args()
    wd = args.workdir
    wd.mkdir(parents=True, exist_ok=True)
    config = mpsum.fixture_config_path()

    stage("prepare", "--input", mpsum.fixture_path(), "--output", wd / "prepared.jsonl")
    stage("train", "--dataset", wd / "prepared.jsonl", "--mode", "head", "--out", wd / "head.json",
          "--config", config, "--seed", args.seed)
    stage("evaluate", "--dataset", wd / "prepared.jsonl", "--ckpt", wd / "head.json",
          "--report", wd / "head_report.json", "--label", "head")
    if not args.skip_lora:
        stage("train", "--dataset", wd / "prepared.jsonl", "--mode", "lora",
              "--out", wd / "lora.json", "--config", config, "--seed", args.seed)
        stage("evaluate", "--dataset", wd / "prepared.jsonl", "--ckpt", wd / "lora.json",
              "--report", wd / "lora_report.json", "--label", "lora")


if __name__ == "__main__":
    main()
