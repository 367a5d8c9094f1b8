"""Shared fixtures plus a terminal summary of acceptance criteria outcomes."""

import time
from types import SimpleNamespace

import numpy as np
import pytest

from patchspot.cli import main as cli_main
from patchspot.data.types import PatchSpotPair
from patchspot.synthetic import generate_dataset

_ACCEPTANCE_RESULTS: dict[int, list] = {}

SYNTH_SEED = 123
SYNTH_DATA_SEED = 2024


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    num, description = marker.args
    entry = _ACCEPTANCE_RESULTS.setdefault(num, [description, "PASS"])
    if call.excinfo is not None:
        entry[1] = "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_ACCEPTANCE_RESULTS):
        description, status = _ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"ACCEPTANCE {num}: {status} - {description}")


def make_pairs(n, d=6, seed=0, slice_id="s"):
    """Random in-memory pairs for unit tests (patches are noise, labels random)."""
    rng = np.random.default_rng(seed)
    return [
        PatchSpotPair(
            patch=rng.random((256, 256, 3)).astype(np.float32),
            expression=rng.random(d).astype(np.float32),
            slice_id=slice_id,
            spot_id=f"p{i}",
        )
        for i in range(n)
    ]


@pytest.fixture(scope="session")
def tiny_synth(tmp_path_factory):
    """Small clustered dataset + config file shared by the CLI tests."""
    root = tmp_path_factory.mktemp("tiny")
    ds = generate_dataset(
        root / "data", n_reference=24, n_query=8, n_clusters=3, n_genes=16,
        reference_slices=2, seed=5,
    )
    config = root / "tiny.cfg"
    config.write_text(
        "panel=heg\npanel_size=16\nholdout=query\n"
        "epochs=2\nbatch_size=4\nd_o=16\nfeature_dim=16\nk=3\n"
    )
    return SimpleNamespace(ds=ds, config=config, root=root)


@pytest.fixture(scope="session")
def synth_run(tmp_path_factory):
    """Full-scale synthetic pipeline (500 reference / 100 query, 5 clusters).

    Runs prepare -> train -> impute -> evaluate once per session with the
    documented defaults (compact backbone, d_o=64, 15 epochs, augmentation on,
    batch 128, K=50) and hands the artifacts to the acceptance tests.
    """
    root = tmp_path_factory.mktemp("synth")
    ds = generate_dataset(
        root / "data", n_reference=500, n_query=100, n_clusters=5, n_genes=64,
        reference_slices=5, seed=SYNTH_DATA_SEED,
    )
    config = root / "run.cfg"
    config.write_text(
        "panel=heg\npanel_size=64\nholdout=query\n"
        "epochs=15\nbatch_size=128\nd_o=64\nk=50\n"
    )
    workdir = root / "run"
    started = time.time()
    for command in ("prepare", "train", "impute", "evaluate"):
        argv = [command, "--config", str(config), "--workdir", str(workdir),
                "--seed", str(SYNTH_SEED)]
        if command == "prepare":
            argv += ["--manifest", str(ds.manifest_path)]
        rc = cli_main(argv)
        assert rc == 0, f"{command} exited {rc}"
    elapsed = time.time() - started
    return SimpleNamespace(
        ds=ds, config=config, workdir=workdir, elapsed=elapsed, seed=SYNTH_SEED, root=root
    )
