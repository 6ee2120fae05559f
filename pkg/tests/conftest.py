import numpy as np
import pytest

from dasguard.trace_io import SAMPLES_PER_ZONE, SampleRecord, ThreatClass, ZoneTrace


def make_record(center=5, label=ThreatClass.ALARM, radial=5.0, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    traces = tuple(
        ZoneTrace(center + off, (scale * rng.normal(0, 1, SAMPLES_PER_ZONE)).astype(np.float32))
        for off in (-1, 0, 1)
    )
    return SampleRecord(center, traces, label, radial)


@pytest.fixture
def record():
    return make_record()
