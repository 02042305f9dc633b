import socket
import time

import pytest

from charge.png import bar_chart_pixels, write_png
from charge.providers.base import ProviderClient
from charge.providers.cache import ResponseCache
from charge.providers.scripted import ScriptedProvider


@pytest.fixture(scope="session")
def demo_world(tmp_path_factory):
    """Offline end-to-end pipeline run, built once with networking disabled."""
    from charge.demo import run_demo

    def _refuse(*args, **kwargs):
        raise AssertionError("offline pipeline attempted a network call")

    guard = pytest.MonkeyPatch()
    guard.setattr(socket, "socket", _refuse)
    guard.setattr(socket, "create_connection", _refuse)
    started = time.perf_counter()
    try:
        out = tmp_path_factory.mktemp("demo") / "demo"
        summary = run_demo(out)
    finally:
        guard.undo()
    return {"dir": out, "summary": summary,
            "elapsed": time.perf_counter() - started}


@pytest.fixture
def make_chart_png(tmp_path):
    """Factory writing a small deterministic bar-chart PNG, returning its path."""
    def _make(name="chart.png", values=(3.0, 1.0, 2.0), color=(40, 90, 200)):
        return str(write_png(tmp_path / name, bar_chart_pixels(list(values), color=color)))
    return _make


@pytest.fixture
def scripted():
    """Empty scripted backend; tests script it then wrap it in a client."""
    return ScriptedProvider()


@pytest.fixture
def make_client():
    def _make(backend, cache=None):
        return ProviderClient(backend, cache=cache if cache is not None else ResponseCache(),
                              sleep=lambda _: None)
    return _make
