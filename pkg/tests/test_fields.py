import numpy as np
import pytest

from cohesion.fields import ConditioningSequence, Field, Trajectory


def test_field_validation():
    f = Field(np.zeros((8, 8)))
    assert f.grid_size == 8
    assert f.domain_length == pytest.approx(2 * np.pi)
    with pytest.raises(ValueError):
        Field(np.zeros((8, 4)))
    with pytest.raises(ValueError):
        Field(np.zeros((6, 6)))  # not a power of two
    bad = np.zeros((8, 8))
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        Field(bad)


def test_trajectory_validation():
    t = Trajectory(np.zeros((3, 8, 8)), meta={"seed": 1})
    assert len(t) == 3 and t.grid_size == 8
    with pytest.raises(ValueError):
        Trajectory(np.zeros((1, 8, 8)))


def test_conditioning_sequence_mask():
    frames = np.zeros((4, 8, 8))
    c = ConditioningSequence(frames, mask=np.ones((8, 8), dtype=bool))
    assert len(c) == 4
    with pytest.raises(ValueError):
        ConditioningSequence(frames, mask=np.zeros((8, 8), dtype=bool))
    with pytest.raises(ValueError):
        ConditioningSequence(frames, mask=np.ones((4, 4), dtype=bool))
