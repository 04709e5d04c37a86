import numpy as np
import pytest

from qstt import keystore
from qstt.timebase import TimeTagArray

# every KeyPool built during the test run; checked for reused key bits
ALL_POOLS = []


@pytest.fixture(autouse=True)
def _track_pools(monkeypatch):
    created = []
    original = keystore.KeyPool.__init__

    def tracking_init(self, *args, **kwargs):
        original(self, *args, **kwargs)
        created.append(self)

    original_copy = keystore.KeyPool.copy

    def tracking_copy(self):
        twin = original_copy(self)
        created.append(twin)
        return twin

    monkeypatch.setattr(keystore.KeyPool, "__init__", tracking_init)
    monkeypatch.setattr(keystore.KeyPool, "copy", tracking_copy)
    yield created
    ALL_POOLS.extend(created)
    for pool in created:
        overlaps = keystore.ledger_overlaps(pool.ledger)
        assert not overlaps, f"key bits handed out twice: {overlaps[:3]}"


def synthetic_tags(rng, n, max_gap=1023, tick=1000, duration=4.0, start=None):
    """n strictly increasing tags whose gaps fit in ceil(log2(max_gap + 1)) bits."""
    gaps = rng.integers(1, max_gap + 1, size=n - 1) * tick
    t1 = int(rng.integers(0, 10**9)) if start is None else start
    tags = np.concatenate([[t1], t1 + np.cumsum(gaps)]).astype(np.int64)
    return TimeTagArray(tags, duration)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE = []


def record_criterion(number, name, ok, detail=""):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
