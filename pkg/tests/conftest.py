import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_configure(config):
    config._criteria = {}


def pytest_terminal_summary(terminalreporter, config):
    if config._criteria:
        terminalreporter.section("acceptance criteria")
        for n in sorted(config._criteria):
            terminalreporter.write_line(config._criteria[n])
