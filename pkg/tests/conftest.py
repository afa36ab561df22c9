import os
import subprocess
import sys

import pytest
from hypothesis import HealthCheck, settings

import mpsum

settings.register_profile("ci", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

FIXTURE = str(mpsum.fixture_path())
FIXTURE_CONFIG = str(mpsum.fixture_config_path())


def run_cli(*args, stdin=None, env=None, cwd=None):
    """Run ``python -m mpsum`` in a subprocess; returns CompletedProcess."""
    full_env = dict(os.environ)
    full_env.pop("MPSUM_SEED", None)
    full_env.update(env or {})
    return subprocess.run([sys.executable, "-m", "mpsum", *map(str, args)], input=stdin,
                          capture_output=True, text=True, env=full_env, cwd=cwd)


def run_pipeline(workdir, seed=42, mode="head", jobs=1):
    """prepare -> train -> evaluate on the bundled fixture inside ``workdir``."""
    prep = workdir / "prepared.jsonl"
    ckpt = workdir / f"{mode}.json"
    report = workdir / "report.json"
    for args in (["prepare", "--input", FIXTURE, "--output", prep],
                 ["train", "--dataset", prep, "--mode", mode, "--out", ckpt,
                  "--config", FIXTURE_CONFIG, "--seed", seed],
                 ["evaluate", "--dataset", prep, "--ckpt", ckpt, "--report", report,
                  "--jobs", jobs]):
        res = run_cli(*args)
        assert res.returncode == 0, res.stderr
    return {"prepared": prep, "ckpt": ckpt, "report": report,
            "trace": workdir / f"{mode}.trace.csv"}


@pytest.fixture(scope="session")
def head_run(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("head_run"))


@pytest.fixture(scope="session")
def lora_run(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("lora_run"), mode="lora")
