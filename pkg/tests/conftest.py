import numpy as np
import pytest

from src.fault_injection import SchedulePlan, build_labeled_dataset
from src.synthetic import synthesize_trace
from src.trace_ingest import interpolate_missing, normalize, split_indices


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def write_csv(tmp_path):
    """Write lines of text to a CSV file under tmp_path and return its path"""
    def _write(lines, name="trace.csv"):
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path
    return _write


@pytest.fixture(scope="session")
def normalized_trace():
    """A 3000-point synthetic drive, interpolated and z-scored on its training block"""
    trace = interpolate_missing(synthesize_trace(3000, seed=5, profile="zurich"))
    train = split_indices(len(trace))["train"]
    _, stats = normalize(trace.slice(train.start, train.stop))
    normalized, _ = normalize(trace, stats)
    return normalized, stats


@pytest.fixture(scope="session")
def labeled_dataset(normalized_trace):
    trace, _ = normalized_trace
    plan = SchedulePlan.preset("zurich")
    return build_labeled_dataset(trace, plan, seed=3)
