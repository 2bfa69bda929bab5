import os

import pytest

from dpproofs.mechanisms import NoiseSource


@pytest.fixture
def rng():
    return NoiseSource(20240611)


def pytest_report_header(config):
    from dpproofs import kernels

    forced = " (forced)" if os.environ.get("DPPROOFS_PURE_PYTHON") else ""
    return f"dpproofs kernel backend: {kernels.BACKEND}{forced}"
