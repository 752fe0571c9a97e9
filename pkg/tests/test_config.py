import os

import pytest

from core.config import DEFAULT_SETTINGS, Settings, load_settings

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def test_defaults_without_file():
    assert load_settings() is DEFAULT_SETTINGS
    assert DEFAULT_SETTINGS.oracle_tolerance == 1e-6
    assert DEFAULT_SETTINGS.dummy_tolerance == 1e-12


def test_shipped_file_matches_defaults():
    assert load_settings(os.path.join(ROOT, "config", "ttconv.yaml")) == DEFAULT_SETTINGS


def test_unknown_key_warns(tmp_path, caplog):
    path = tmp_path / "s.yaml"
    path.write_text("workers: 3\nfarbe: blau\n", encoding="utf-8")
    settings = load_settings(str(path))
    assert settings.workers == 3
    assert "farbe" in caplog.text


def test_invalid_values_collected():
    with pytest.raises(ValueError) as info:
        Settings(workers=0, default_strategy="greedy")
    assert "workers" in str(info.value) and "default_strategy" in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_settings(str(tmp_path / "fehlt.yaml"))


def test_overrides_ignore_none():
    s = DEFAULT_SETTINGS.with_overrides(workers=4, default_order=None)
    assert s.workers == 4 and s.default_order == DEFAULT_SETTINGS.default_order
