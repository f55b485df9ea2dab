import os
import shutil

import numpy as np
import pytest
import torch

from vqanon.config import from_dict
from vqanon.corpus import desk_corpus_dir

# tiny networks keep the pipeline tests fast; the architecture is unchanged
TINY = {
    "encoder": {"channels": 32},
    "generator": {"base_channels": 32},
    "training": {"batch_size": 2, "segment_frames": 8, "disc_width_divisor": 16,
                 "max_steps": 3, "checkpoint_every": 1},
}


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def corpus_dir():
    return desk_corpus_dir()


@pytest.fixture
def tiny_config():
    return from_dict(dict(TINY), seed=7)


@pytest.fixture
def corpus_copy(tmp_path, corpus_dir):
    dst = tmp_path / "corpus"
    shutil.copytree(corpus_dir, dst)
    return dst



# -- acceptance verdict lines -------------------------------------------------

_VERDICTS = []


@pytest.fixture
def verdict(request):
    """``with verdict(n, title):`` prints a PASS or FAIL line for criterion ``n``."""
    from contextlib import contextmanager

    capman = request.config.pluginmanager.getplugin("capturemanager")

    @contextmanager
    def _criterion(n, title):
        try:
            yield
        except BaseException:
            _emit(capman, f"FAIL criterion {n}: {title}")
            raise
        _emit(capman, f"PASS criterion {n}: {title}")

    return _criterion


def _emit(capman, line):
    _VERDICTS.append(line)
    with capman.global_and_fixture_disabled():
        print(f"\n{line}", flush=True)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
