import json
import logging

import numpy as np
import pytest

from app.core import logging as app_logging
from app.core.cache import FactorizationCache
from app.core.config import settings
from app.core.exceptions import (
    ArtifactError,
    BlowUpError,
    ConfigParseError,
    ConfigValidationError,
    NewtonConvergenceError,
    StabilityError,
)
from app.db.artifacts import ArtifactStore, format_float, to_jsonable


class TestFactorizationCache:
    """Test the bounded factorization cache."""

    def test_evicts_least_recently_used(self):
        cache = FactorizationCache(max_entries=2)
        cache.set("a", 1)
        cache.set("b", 2)
        assert cache.get("a") == 1
        cache.set("c", 3)
        assert cache.get("b") is None
        assert cache.get("a") == 1 and cache.get("c") == 3
        assert len(cache) == 2

    def test_delete_and_clear(self):
        cache = FactorizationCache()
        cache.set(("grid", 0.1, 1.0), "solver")
        cache.delete(("grid", 0.1, 1.0))
        cache.delete("absent")
        assert cache.get(("grid", 0.1, 1.0)) is None
        cache.set("x", 1)
        cache.clear()
        assert len(cache) == 0


class TestLogging:
    """Test logging setup."""

    @pytest.fixture(autouse=True)
    def restore_logging(self):
        yield
        app_logging.setup_logging(settings.LOG_LEVEL)

    def test_json_formatter(self):
        """Records become one JSON object with the extra fields merged."""
        record = logging.LogRecord("app.test", logging.WARNING, __file__, 10, "gap %s", ("big",), None)
        record.extra = {"tau": 0.0}
        payload = json.loads(app_logging.JSONFormatter().format(record))
        assert payload["level"] == "WARNING"
        assert payload["logger"] == "app.test"
        assert payload["message"] == "gap big"
        assert payload["tau"] == 0.0

    def test_production_uses_json(self, monkeypatch):
        monkeypatch.setattr(settings, "ENVIRONMENT", "production")
        app_logging.setup_logging("debug")
        logger = logging.getLogger("app")
        assert logger.level == logging.DEBUG
        assert not logger.propagate
        assert len(logger.handlers) == 1
        assert isinstance(logger.handlers[0].formatter, app_logging.JSONFormatter)

    def test_development_uses_text(self, monkeypatch):
        monkeypatch.setattr(settings, "ENVIRONMENT", "development")
        app_logging.setup_logging("INFO")
        formatter = logging.getLogger("app").handlers[0].formatter
        assert not isinstance(formatter, app_logging.JSONFormatter)


class TestExceptions:
    """Test exception details and exit codes."""

    def test_config_errors(self):
        parse = ConfigParseError("exp.yaml", 4, "bad indent")
        assert parse.detail == "Cannot parse exp.yaml:4: bad indent"
        assert parse.exit_code == 2
        invalid = ConfigValidationError(["a", "b"])
        assert invalid.violations == ["a", "b"]
        assert "  - b" in invalid.detail

    def test_solver_errors_carry_time(self):
        assert BlowUpError(0.5).detail.endswith("(t = 0.5)")
        newton = NewtonConvergenceError(1.0, 25, 1e-3)
        assert newton.exit_code == 3 and newton.iterations == 25

    def test_stability_is_a_config_error(self):
        assert StabilityError(1.0, 1.0).exit_code == 2

    def test_artifact_error_lists_missing(self):
        e = ArtifactError("Missing", ["a.json", "b.csv"])
        assert e.detail == "Missing: a.json, b.csv"
        assert e.exit_code == 3


class TestArtifactStore:
    """Test deterministic artifact writers."""

    def test_jsonable(self):
        """Non-finite floats become strings; numpy values become builtins."""
        value = to_jsonable({"a": np.float64(np.inf), "b": (np.int64(2), float("nan")), 3: np.array([1.5])})
        assert value == {"a": "inf", "b": [2, "nan"], "3": [1.5]}

    def test_float_format(self):
        assert format_float(0.1) == "0.10000000000000001"
        assert format_float(3) == "3"

    def test_json_round_trip(self, tmp_path):
        store = ArtifactStore(tmp_path)
        store.write_json("r/report.json", {"b": 1.0 / 3.0, "a": -np.inf})
        text = store.read_text("r/report.json")
        assert text.index('"a"') < text.index('"b"')
        assert store.read_json("r/report.json") == {"a": "-inf", "b": 1.0 / 3.0}
        assert store.inventory() == ["r/report.json"]

    def test_corrupt_json(self, tmp_path):
        (tmp_path / "bad.json").write_text("{", encoding="utf-8")
        with pytest.raises(ArtifactError) as exc:
            ArtifactStore(tmp_path).read_json("bad.json")
        assert exc.value.missing == ["bad.json"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactError):
            ArtifactStore(tmp_path).read_text("absent.txt")

    def test_inventory_of_missing_root(self, tmp_path):
        assert ArtifactStore(tmp_path / "nowhere").inventory() == []
