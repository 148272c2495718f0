import numpy as np
import pytest

from arbkp.dataset_io import save_annotations, save_mask, mask_path
from arbkp.synthetic import synthetic_athlete

_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture(scope="session")
def athlete():
    return synthetic_athlete()


@pytest.fixture(scope="session")
def fixture_dataset():
    """Five images of three athletes with varied poses."""
    rng = np.random.default_rng(11)
    layout = [("ath_a", 2), ("ath_b", 2), ("ath_c", 1)]
    items = []
    index = 0
    for athlete_id, n in layout:
        for _ in range(n):
            sk, mask = synthetic_athlete(
                image_id=f"fx{index}",
                athlete_id=athlete_id,
                dx=float(rng.integers(-15, 16)),
                dy=float(rng.integers(-8, 9)),
                elbow_bend=float(rng.uniform(0, 2)),
                knee_bend=float(rng.uniform(0, 2)),
            )
            items.append((sk, mask))
            index += 1
    return items


@pytest.fixture()
def dataset_dir(tmp_path, fixture_dataset):
    save_annotations([sk for sk, _ in fixture_dataset], tmp_path / "annotations.csv")
    for sk, mask in fixture_dataset:
        save_mask(mask, mask_path(tmp_path / "masks", sk.image_id))
    return tmp_path


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if "test_acceptance.py" not in item.nodeid:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        label = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _ACCEPTANCE[item.name] = f"{label}  {doc}"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in _ACCEPTANCE:
        terminalreporter.write_line(_ACCEPTANCE[name])
