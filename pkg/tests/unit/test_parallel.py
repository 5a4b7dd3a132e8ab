"""Tests for the bounded solve pool."""

import threading
from unittest.mock import patch

import pytest

from regretfolio.core.parallel import map_solves


class TestMapSolves:
    def test_preserves_order(self) -> None:
        assert map_solves(lambda v: v * v, [3, 1, 2], max_workers=4) == [9, 1, 4]

    def test_serial_runs_on_caller_thread(self) -> None:
        caller = threading.get_ident()
        seen = map_solves(lambda _: threading.get_ident(), [1, 2, 3], max_workers=1)
        assert set(seen) == {caller}

    def test_default_workers_from_settings(self) -> None:
        caller = threading.get_ident()
        with patch("regretfolio.core.parallel.settings") as mock_settings:
            mock_settings.max_workers = 1
            seen = map_solves(lambda _: threading.get_ident(), [1, 2])
        assert set(seen) == {caller}

    def test_empty(self) -> None:
        assert map_solves(lambda v: v, [], max_workers=4) == []

    def test_first_error_propagates(self) -> None:
        def fn(v: int) -> int:
            if v == 2:
                raise RuntimeError("bad item")
            return v

        with pytest.raises(RuntimeError, match="bad item"):
            map_solves(fn, [1, 2, 3], max_workers=3)
