"""Shared fixtures: trained synthetic-data runs, built once per session."""

import time
from dataclasses import dataclass

import pytest

from ecnu_gnn import data, pipeline, synth
from ecnu_gnn.config import resolve
from ecnu_gnn.synth import SynthSpec


@dataclass
class SynthRun:
    spec: SynthSpec
    train: data.RawSeries
    test: data.RawSeries
    run: pipeline.TrainedRun
    detection: pipeline.Detection
    seconds: float


def build_synth_run(seed: int) -> SynthRun:
    cfg = resolve("synth", seed=seed)
    spec = synth.default_spec(seed=seed)
    raw = synth.generate(spec)
    started = time.perf_counter()
    train, stats = data.preprocess(raw.train, cfg.preprocess)
    test, _ = data.preprocess(raw.test, cfg.preprocess, stats)
    run = pipeline.train_model(train, cfg.model, cfg.train)
    detection = pipeline.detect(
        run.model, run.robust_stats, test, cfg.score.sma_window, cfg.score.grid_size
    )
    return SynthRun(spec, train, test, run, detection, time.perf_counter() - started)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records a criterion outcome, then asserts it."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda x: int(x.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synth_runs():
    """``synth_runs(seed)`` trains the synth profile on the default dataset, cached."""
    cache: dict[int, SynthRun] = {}

    def get(seed: int) -> SynthRun:
        if seed not in cache:
            cache[seed] = build_synth_run(seed)
        return cache[seed]

    return get
