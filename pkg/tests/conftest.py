import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

try:
    from threadpoolctl import threadpool_limits
except ImportError:
    threadpool_limits = None


@pytest.fixture(scope="session", autouse=True)
def _single_threaded_blas():
    # tiny GEMMs dominate this workload; BLAS thread ping-pong only slows it
    if threadpool_limits is None:
        yield
    else:
        with threadpool_limits(limits=1):
            yield
