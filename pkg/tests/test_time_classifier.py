import numpy as np
import pytest

from src.fault_injection import TimeType
from src.time_classifier import (
    Episode,
    EpisodeMemory,
    TimeClassifier,
    TimeClassifierConfig,
    TimeClassifierState,
    classify_time,
)


def run(flags, config=TimeClassifierConfig()):
    classifier = TimeClassifier(config)
    return [classifier.step(flag) for flag in flags]


def test_isolated_anomaly_is_transient():
    labels = run([0, 0, 1, 0, 0])
    assert labels == [TimeType.NONE, TimeType.NONE, TimeType.TRANSIENT, TimeType.NONE, TimeType.NONE]


def test_long_run_becomes_permanent():
    labels = run([1] * 25, TimeClassifierConfig(permanent_min=20))
    assert labels[:19] == [TimeType.TRANSIENT] * 19
    assert labels[19:] == [TimeType.PERMANENT] * 6


def test_third_recurring_episode_is_intermittent():
    flags = np.zeros(30, dtype=int)
    for start in (0, 10, 20):
        flags[start:start + 2] = 1
    labels = run(flags)
    assert labels[0:2] == [TimeType.TRANSIENT] * 2
    assert labels[10:12] == [TimeType.TRANSIENT] * 2
    assert labels[20:22] == [TimeType.INTERMITTENT] * 2


def test_episodes_beyond_horizon_are_forgotten():
    flags = np.zeros(130, dtype=int)
    for start in (0, 60, 120):
        flags[start] = 1
    labels = run(flags)
    assert labels[120] is TimeType.TRANSIENT


def test_run_label_never_drops():
    config = TimeClassifierConfig(horizon=15)
    flags = [1, 0, 0, 0, 0, 1, 0, 0, 0, 0] + [1] * 25
    labels = run(flags, config)
    run_labels = labels[10:]
    assert run_labels[0] is TimeType.INTERMITTENT
    # the two earlier episodes expire mid-run; the run keeps its label
    assert run_labels[:19] == [TimeType.INTERMITTENT] * 19
    assert run_labels[19:] == [TimeType.PERMANENT] * 6


def test_memory_respects_horizon():
    rng = np.random.default_rng(0)
    state = TimeClassifierState(TimeClassifierConfig(horizon=30))
    for step, flag in enumerate(rng.random(2000) < 0.15):
        classify_time(state, bool(flag), step)
        assert all(step - e.end <= 30 for e in state.memory.episodes())
        assert state.consecutive_count >= 0


def test_out_of_order_step():
    state = TimeClassifierState()
    classify_time(state, True, 5)
    with pytest.raises(ValueError):
        classify_time(state, False, 5)


def test_run_length_exposed():
    classifier = TimeClassifier()
    for flag in (1, 1, 1):
        classifier.step(flag)
    assert classifier.run_length == 3
    classifier.step(0)
    assert classifier.run_length == 0
    assert len(classifier.state.memory) == 1
    classifier.reset()
    assert len(classifier.state.memory) == 0


def test_episode_memory_cleanup():
    memory = EpisodeMemory(horizon=10)
    memory.record(Episode(0, 2))
    memory.record(Episode(8, 9))
    memory.cleanup(13)
    assert memory.episodes() == [Episode(8, 9)]
    assert Episode(8, 9).length == 2


def test_config_validation():
    with pytest.raises(ValueError):
        TimeClassifierConfig(transient_max=5, permanent_min=5)
