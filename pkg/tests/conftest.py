from __future__ import annotations

import pytest

from pssmp.levy_model import SnlpModel

BM = SnlpModel(1.0, 0.0)
HE = SnlpModel(0.5, 0.3, ((1.0, 2.0), (0.5, 5.0)))
FV = SnlpModel(0.0, 1.5, ((1.0, 3.0),))

MODELS = {"BM": BM, "HE": HE, "FV": FV}


@pytest.fixture(params=sorted(MODELS))
def model(request):
    return MODELS[request.param]


@pytest.fixture
def cfg_dir(tmp_path):
    (tmp_path / "bm.cfg").write_text("sigma2 = 1.0\nmu_tilde = 0.0\njumps = []\np = 0.0\nalpha = 0.0\n")
    (tmp_path / "hyperexp.cfg").write_text(
        "sigma2 = 0.5\nmu_tilde = 0.3\njumps = [[1.0, 2.0], [0.5, 5.0]]\np = 0.2\nalpha = 1.0\n"
    )
    return tmp_path


# acceptance lines: collected by the `criterion` fixture, printed after the run
_CRITERIA: list[tuple[str, bool, str]] = []


class _Recorder:
    def __call__(self, label: str, ok: bool, detail: str) -> bool:
        _CRITERIA.append((label, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
        return bool(ok)


@pytest.fixture(scope="session")
def criterion():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
