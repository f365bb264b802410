import os

import numpy as np
import pytest

from xmodal import kernels
from xmodal.synthetic import make_dataset, write_corpus

KERNEL_BACKENDS = sorted(kernels.IMPLEMENTATIONS)


@pytest.fixture(params=KERNEL_BACKENDS)
def kernel_impl(request):
    return kernels.IMPLEMENTATIONS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Clean and noisy synthetic manifests with small feature dims."""
    root = tmp_path_factory.mktemp("corpus")
    common = dict(audio_dim=24, text_dim=12, latent_dim=4, map_seed=7)
    clean = make_dataset("clean", 64, seed=1, splits=["train"] * 40 + ["validation"] * 12 + ["test"] * 12, **common)
    noisy = make_dataset("noisy", 40, seed=2, splits=["train"] * 40, id_prefix="n", noise=0.3, **common)
    return {"root": str(root),
            "clean": write_corpus(str(root), "clean", clean),
            "noisy": write_corpus(str(root), "noisy", noisy)}


def write_config(path, corpus, **overrides):
    import json

    cfg = {"seed": 3, "loss": "nt_xent", "mining": "cross_modal_only", "batch_size": 16,
           "hidden": 16, "out_dim": 8, "lr0": 1e-3, "max_epochs": 6, "strategy": "ATAE",
           "datasets": {"clean": {"manifest": os.path.relpath(corpus["clean"], os.path.dirname(path))},
                        "noisy": {"manifest": os.path.relpath(corpus["noisy"], os.path.dirname(path)),
                                  "noise_tier": "noisy"}}}
    cfg.update(overrides)
    with open(path, "w") as fh:
        json.dump(cfg, fh)
    return path


@pytest.fixture
def config_writer():
    return write_config


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(criterion, ok, detail):
        line = f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
