"""Acceptance suite at its frozen parameters; one PASS/FAIL line per criterion.

The suite runs once per session (criterion 14 reruns the others in a
subprocess with a different thread count). Set KINLMC_ACCEPT_OUT to keep the
CSV outputs.
"""

import json
import os
from pathlib import Path

import pytest

from conftest import ACCEPTANCE_LINES
from kinlmc.acceptance import DEFAULT_SEED, DEFAULTS, NAMES, load_parameters, run_suite

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "acceptance.ini"


@pytest.fixture(scope="session")
def suite(tmp_path_factory):
    out = Path(os.environ.get("KINLMC_ACCEPT_OUT") or tmp_path_factory.mktemp("acceptance"))
    results = run_suite(out, params_path=CONFIG)
    for r in results:
        ACCEPTANCE_LINES.append(r.line())
    return out, {r.number: r for r in results}


def test_frozen_config_matches_defaults():
    seed, params = load_parameters(CONFIG)
    assert seed == DEFAULT_SEED and params == DEFAULTS


@pytest.mark.parametrize("number", sorted(NAMES), ids=[f"c{n:02d}_{NAMES[n]}" for n in sorted(NAMES)])
def test_criterion(suite, number):
    out, results = suite
    res = results[number]
    print(res.line())
    assert (out / res.filename).is_file()
    assert res.passed, res.line()


def test_summary_written(suite):
    out, results = suite
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["criteria"]) == {str(n) for n in NAMES}
    assert summary["passed"] == all(r.passed for r in results.values())
