"""
conftest.py – Gemeinsame Fixtures für die Test-Suite.
"""

import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.abspath(__file__))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from core.manifest import load_manifest, parse_manifest  # noqa: E402

FIXTURE_MANIFEST = os.path.join(ROOT, "config", "yolov5s_like.yaml")

SMALL_MANIFEST = """\
schema: ttconv-manifest/1
name: klein
defaults:
  order: 2
  strategy: balanced
layers:
  - id: l0
    k: 3
    in_channels: 6
    out_channels: 8
    bias: true
    selected: true
    input_size: [7, 7]
  - id: l1
    k: 1
    in_channels: 8
    out_channels: 5
    bias: false
    selected: false
    input_size: [5, 5]
  - id: l2
    k: 3
    in_channels: 8
    out_channels: 12
    bias: false
    selected: true
    input_size: [6, 6]
    in_factors: [2, 4]
    out_factors: [3, 4]
"""


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def fixture_manifest_path():
    return FIXTURE_MANIFEST


@pytest.fixture
def fixture_manifest():
    return load_manifest(FIXTURE_MANIFEST)


@pytest.fixture
def small_manifest_text():
    return SMALL_MANIFEST


@pytest.fixture
def small_manifest():
    return parse_manifest(SMALL_MANIFEST)


@pytest.fixture
def small_manifest_path(tmp_path):
    path = tmp_path / "klein.yaml"
    path.write_text(SMALL_MANIFEST, encoding="utf-8")
    return str(path)
