import pytest
from hypothesis import HealthCheck, settings

from guardnn.crypto import KeyRole, Rng, SymmetricKey

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def keys():
    rng = Rng(7)
    return SymmetricKey.generate(rng, KeyRole.MEM_ENC), SymmetricKey.generate(rng, KeyRole.MAC)


# -- acceptance summary: one line per criterion -------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    verdict = "PASS" if report.passed else "FAIL"
    _CRITERIA[props["criterion"]] = (verdict, f"{props.get('title', '')}: {props.get('detail', '')}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        verdict, text = _CRITERIA[n]
        terminalreporter.write_line(f"[{verdict}] criterion {n:2d}  {text}")
