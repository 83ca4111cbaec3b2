import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import pytest
from hypothesis import settings

from seilab import harness as H

# criterion -> list of (part, ok, detail), filled by the acceptance suite
ACCEPTANCE: dict = {}
CRITERIA = [
    "structural zeros", "guess baseline", "gradient verification", "architecture conformance",
    "pipeline fidelity", "DGT frame property", "fingerprint oracle equivalence", "classifier sanity",
    "attack direction", "defense direction", "SWaP-C monotonicity", "coffee-shop case 2 control",
]


def record(criterion: str, part: str, ok: bool, detail: str) -> bool:
    assert criterion in CRITERIA
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'}  {criterion} [{part}]: {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in CRITERIA:
        parts = ACCEPTANCE.get(name)
        if not parts:
            terminalreporter.write_line(f"NOT RUN  {name}")
            continue
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{p[0]}: {p[2]}{'' if p[1] else ' (FAIL)'}" for p in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  |  {detail}")


settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def small_config(**kw) -> H.LabConfig:
    base = dict(n_train=30, n_test=15, n_capture=20, ae_max_epochs=50,
                gan={"width_scale": 0.125, "warm_start_epochs": 2, "epochs": 1}, dae_epochs=5, dae_hidden=32,
                cnn_epochs={"time": 2, "frequency": 2, "gabor_image": 1}, targets=[0, 3])
    return H.LabConfig(**(base | kw))


@pytest.fixture(scope="session")
def small_lab() -> H.Lab:
    """Reduced-scale lab shared by unit tests (models are cached inside)."""
    return H.Lab(small_config())
