"""Shared fixtures: small and desk-scale configurations, plus the acceptance report."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import pytest

from specvoc import harness
from specvoc.config import load_config
from specvoc.models import DraftModel, Featurizer, LowRankAdapter, TargetModel

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"

# (criterion number, title) -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: Dict[Tuple[int, str], Tuple[bool, str]] = {}

# every scenario run of the session, for the budget criterion
RUN_LOG: List[Tuple[str, int, int, int]] = []


def _record_runs():
    original = harness.run_scenario

    def recording(script, cfg, variant="full", bundle=None):
        run = original(script, cfg, variant, bundle)
        RUN_LOG.append((variant, run.peak_dynamic, cfg["dyn_size"], run.budget_violations))
        return run

    return original, recording


@pytest.fixture(scope="session", autouse=True)
def log_scenario_runs():
    original, recording = _record_runs()
    harness.run_scenario = recording
    yield RUN_LOG
    harness.run_scenario = original


def tiny_config(**overrides):
    cfg = load_config(CONFIGS / "tiny.conf", {"model": str(CONFIGS / "tiny.model")})
    return cfg.with_overrides(**overrides) if overrides else cfg


def desk_config(**overrides):
    cfg = load_config(CONFIGS / "desk.conf")
    return cfg.with_overrides(**overrides) if overrides else cfg


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_bundle(tiny_cfg):
    return harness.prepare_bundle(tiny_cfg)


@pytest.fixture(scope="session")
def desk_cfg():
    return desk_config()


@pytest.fixture(scope="session")
def desk_bundle(desk_cfg):
    return harness.prepare_bundle(desk_cfg)


def random_models(vocab_size: int, dim: int, seed: int, window: int = 2, same: bool = False):
    """Gaussian target and draft sharing a featurizer; ``same`` makes them agree exactly."""
    rng = np.random.default_rng(seed)
    feat = Featurizer(rng.normal(size=(vocab_size, dim)), window, rng.normal(size=dim))
    head = rng.normal(size=(vocab_size, dim))
    target = TargetModel(feat, head)
    adapter = LowRankAdapter(dim, 2, 2.0, rng)
    if not same:
        adapter.B = rng.normal(size=adapter.B.shape)
    draft = DraftModel(feat, head if same else rng.normal(size=(vocab_size, dim)), adapter)
    return target, draft


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (n, title), (ok, detail) in sorted(ACCEPTANCE.items()):
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
