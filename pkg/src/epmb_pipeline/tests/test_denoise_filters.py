"""Tests for the classical baseline denoisers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epmb_core.core_types import EventStream, SensorGeometry
from epmb_core.errors import ConfigError
from epmb_pipeline.denoise.filters import (
    BASELINES,
    EventRole,
    baf,
    ie_filter,
    ie_label,
    ie_te_filter,
    nn_filter,
    run_baseline,
)


@pytest.mark.unit
class TestBaf:
    """Test the background-activity filter."""

    def test_isolated_event_removed(self, make_stream):
        result = baf(make_stream([(100, 3, 3, 1)]), dt_us=1000)
        assert len(result.kept) == 0
        assert len(result.removed) == 1

    def test_supported_event_kept(self, make_stream):
        """The supporter itself has no earlier neighbour; the supported event has one."""
        result = baf(make_stream([(100, 3, 3, 1), (600, 4, 4, -1)]), dt_us=1000)
        np.testing.assert_array_equal(result.keep, [False, True])

    def test_support_window_is_inclusive(self, make_stream):
        stream = make_stream([(0, 3, 3, 1), (1000, 4, 3, 1), (2001, 3, 3, 1)])
        np.testing.assert_array_equal(baf(stream, dt_us=1000).keep, [False, True, False])

    def test_own_pixel_does_not_support(self, make_stream):
        result = baf(make_stream([(100, 3, 3, 1), (200, 3, 3, 1)]), dt_us=1000)
        assert not result.keep.any()

    def test_radius(self, make_stream):
        stream = make_stream([(100, 1, 1, 1), (200, 3, 3, 1)])
        assert not baf(stream, dt_us=1000, radius=1).keep[1]
        assert baf(stream, dt_us=1000, radius=2).keep[1]

    def test_sensor_corner(self, make_stream):
        stream = make_stream([(0, 0, 0, 1), (10, 7, 5, 1), (20, 1, 0, 1), (30, 6, 5, 1)])
        np.testing.assert_array_equal(baf(stream, dt_us=100).keep, [False, False, True, True])

    def test_invalid_parameters(self, make_stream):
        with pytest.raises(ConfigError, match="dt_us"):
            baf(make_stream([]), dt_us=-1)
        with pytest.raises(ConfigError, match="radius"):
            baf(make_stream([]), radius=0)


@pytest.mark.unit
class TestNn:
    """Test the nearest-neighbour filters."""

    def test_nn2_needs_two_neighbours(self, make_stream):
        stream = make_stream([(100, 2, 2, 1), (200, 3, 3, 1), (300, 4, 4, 1)])
        np.testing.assert_array_equal(nn_filter(stream, 1000, 1, min_count=1).keep, [False, True, True])
        np.testing.assert_array_equal(nn_filter(stream, 1000, 1, min_count=2).keep, [False, False, False])
        stream = make_stream([(100, 2, 2, 1), (200, 4, 2, 1), (300, 3, 3, 1)])
        np.testing.assert_array_equal(nn_filter(stream, 1000, 1, min_count=2).keep, [False, False, True])

    def test_two_events_at_one_neighbour(self, make_stream):
        stream = make_stream([(100, 2, 2, 1), (150, 2, 2, -1), (300, 3, 3, 1)])
        assert nn_filter(stream, 1000, 1, min_count=2).keep[2]

    def test_stale_neighbours(self, make_stream):
        stream = make_stream([(100, 2, 2, 1), (200, 4, 2, 1), (1150, 3, 3, 1)])
        np.testing.assert_array_equal(nn_filter(stream, 1000, 1, min_count=2).keep, [False, False, False])

    def test_invalid_count(self, make_stream):
        with pytest.raises(ConfigError):
            nn_filter(make_stream([]), min_count=0)

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(
            st.tuples(st.integers(0, 5000), st.integers(0, 7), st.integers(0, 5), st.sampled_from([-1, 1])),
            max_size=60,
        ),
        st.integers(0, 2000),
    )
    def test_nn_matches_baf(self, rows, dt_us):
        """With one required neighbour the two filters keep the same events."""
        geometry = SensorGeometry(width=8, height=6)
        rows = sorted(rows, key=lambda row: row[0])
        if rows:
            t, x, y, p = (np.array(column) for column in zip(*rows))
            stream = EventStream(geometry, t, x, y, p)
        else:
            stream = EventStream.empty(geometry)
        np.testing.assert_array_equal(baf(stream, dt_us).keep, nn_filter(stream, dt_us, min_count=1).keep)


@pytest.mark.unit
class TestInceptiveEvents:
    """Test IE and IE+TE."""

    def test_roles(self, make_stream):
        stream = make_stream(
            [
                (100, 2, 2, 1),
                (200, 2, 2, 1),
                (250, 2, 2, -1),
                (300, 2, 2, 1),
                (5000, 2, 2, 1),
                (5100, 5, 5, -1),
            ]
        )
        roles = ie_label(stream, dt_us=1000)
        expected = [EventRole.INCEPTIVE, EventRole.TRAILING, EventRole.INCEPTIVE, EventRole.TRAILING]
        np.testing.assert_array_equal(roles, expected + [EventRole.INCEPTIVE, EventRole.INCEPTIVE])

    def test_ie_keeps_inceptive(self, make_stream):
        stream = make_stream([(100, 2, 2, 1), (200, 2, 2, 1), (300, 2, 2, 1)])
        result = ie_filter(stream, dt_us=1000)
        np.testing.assert_array_equal(result.kept.t, [100])

    def test_ie_te_drops_lonely_inceptive(self, make_stream):
        """An inceptive event is kept only when a trailing event follows it."""
        stream = make_stream([(100, 2, 2, 1), (200, 2, 2, 1), (300, 6, 1, -1), (4000, 2, 2, 1)])
        result, roles = ie_te_filter(stream, dt_us=1000)
        np.testing.assert_array_equal(result.keep, [True, True, False, False])
        assert roles[1] == EventRole.TRAILING

    def test_single_event(self, make_stream):
        stream = make_stream([(100, 2, 2, 1)])
        assert ie_label(stream).tolist() == [EventRole.INCEPTIVE]
        result, _ = ie_te_filter(stream)
        assert len(result.kept) == 0

    def test_negative_window(self, make_stream):
        stream = make_stream([(100, 2, 2, 1), (200, 2, 2, 1)])
        with pytest.raises(ConfigError, match="dt_us"):
            ie_label(stream, dt_us=-1)
        with pytest.raises(ConfigError):
            ie_te_filter(stream, dt_us=-1)


@pytest.mark.unit
class TestRunBaseline:
    """Test dispatch by name."""

    @pytest.mark.parametrize("method", BASELINES)
    def test_partition(self, method, tiny_simulation):
        stream = tiny_simulation.recording.stream
        result = run_baseline(stream, method)
        assert len(result.kept) + len(result.removed) == len(stream)
        assert result.kept == stream.select(result.keep)

    def test_unknown(self, make_stream):
        with pytest.raises(ConfigError, match="Unknown denoiser"):
            run_baseline(make_stream([]), "median")
