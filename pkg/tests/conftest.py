import numpy as np
import pytest

from breedal.harness.config import RunConfig


def tiny_config(tmp_path, **overrides) -> RunConfig:
    values = dict(M=8, T_steps=6, budget=12, window=12, m=3, hidden_size=8, batch_size=16,
                  capacity=64, watermark=32, period=5, iteration_cap=60, eval_period=10,
                  validation_size=3, train_iters_per_tick=2, sample_log_period=1,
                  output_dir=str(tmp_path / "run"))
    values.update(overrides)
    return RunConfig(**values)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
