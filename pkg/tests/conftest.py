"""Shared pytest fixtures for decoupling simulator tests."""

import importlib.util
import json
import sys
from pathlib import Path

import numpy as np
import pytest

# Add scripts directory to Python path so lib imports work
sys.path.insert(0, str(Path(__file__).parent.parent / "scripts"))

REPO_ROOT = Path(__file__).parent.parent


@pytest.fixture
def fixtures_dir():
    """Return path to test fixtures directory."""
    return Path(__file__).parent / "fixtures"


@pytest.fixture
def configs_dir():
    """Return path to the bundled experiment configs."""
    return REPO_ROOT / "configs"


@pytest.fixture
def global_config():
    """Load the repository config.json."""
    return json.loads((REPO_ROOT / "config.json").read_text())


@pytest.fixture
def experiment_document(fixtures_dir):
    """Factory fixture: the fixture experiment document with overrides applied.

    Overrides use dotted keys, e.g. ``{"sequence.tau_us": 2.0}``; a value of
    None removes the key.
    """
    def _document(overrides=None):
        document = json.loads((fixtures_dir / "experiment.json").read_text())
        for dotted, value in (overrides or {}).items():
            *parents, leaf = dotted.split(".")
            target = document
            for key in parents:
                target = target.setdefault(key, {})
            if value is None:
                target.pop(leaf, None)
            else:
                target[leaf] = value
        return document
    return _document


@pytest.fixture
def write_config(tmp_path, experiment_document):
    """Factory fixture: write an experiment document to tmp_path and return its path."""
    def _write(overrides=None, name="experiment.json"):
        path = tmp_path / name
        path.write_text(json.dumps(experiment_document(overrides)))
        return path
    return _write


@pytest.fixture
def triangle_system():
    """Three unequally coupled spins with distinct offsets (rad/s)."""
    from lib.lattice import SpinSystem

    couplings = 2 * np.pi * np.array([
        [0.0, 3000.0, -1800.0],
        [3000.0, 0.0, 1200.0],
        [-1800.0, 1200.0, 0.0],
    ])
    offsets = 2 * np.pi * np.array([150.0, -90.0, 40.0])
    return SpinSystem(offsets=offsets, couplings=couplings)


@pytest.fixture
def cli_module():
    """Import the hyphenated spin-decouple.py entry point as a module."""
    path = REPO_ROOT / "scripts" / "experiments" / "spin-decouple.py"
    spec = importlib.util.spec_from_file_location("spin_decouple", path)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture
def mock_env(monkeypatch):
    """Factory fixture to set environment variables."""
    def _set_env(**kwargs):
        for key, value in kwargs.items():
            if value is None:
                monkeypatch.delenv(key, raising=False)
            else:
                monkeypatch.setenv(key, value)
    return _set_env
