"""Tests for EVT1 and CSV event files."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epmb_core.core_types import EventStream, SensorGeometry
from epmb_core.errors import (
    BadMagicError,
    CsvFormatError,
    FormatError,
    OutOfBoundsError,
    TruncatedFileError,
    UnsortedEventsError,
)
from epmb_core.io.events import (
    EVT_HEADER,
    EVT_RECORD,
    decode_events,
    encode_events,
    events_from_csv,
    events_to_csv,
    read_events,
    read_events_csv,
    write_events,
    write_events_csv,
)


@st.composite
def event_streams(draw: st.DrawFn, max_events: int = 200) -> EventStream:
    """Random sorted streams on random small sensors."""
    width = draw(st.integers(1, 40))
    height = draw(st.integers(1, 40))
    count = draw(st.integers(0, max_events))
    t = sorted(draw(st.lists(st.integers(0, 2**40), min_size=count, max_size=count)))
    x = draw(st.lists(st.integers(0, width - 1), min_size=count, max_size=count))
    y = draw(st.lists(st.integers(0, height - 1), min_size=count, max_size=count))
    p = draw(st.lists(st.sampled_from([-1, 1]), min_size=count, max_size=count))
    return EventStream(SensorGeometry(width=width, height=height), np.array(t), np.array(x), np.array(y), np.array(p))


@pytest.mark.unit
class TestEvtLayout:
    """Test the EVT1 byte layout."""

    def test_header_and_record_sizes(self):
        """Header is 18 bytes, records are 14 bytes."""
        assert EVT_HEADER.itemsize == 18
        assert EVT_RECORD.itemsize == 14

    def test_known_bytes(self):
        """One event encodes to the documented little-endian bytes."""
        stream = EventStream(SensorGeometry(width=346, height=260), [258], [3], [4], [-1])
        data = encode_events(stream)
        assert data[:4] == b"EVT1"
        assert data[4:6] == (1).to_bytes(2, "little")
        assert data[6:8] == (346).to_bytes(2, "little")
        assert data[8:10] == (260).to_bytes(2, "little")
        assert data[10:18] == (1).to_bytes(8, "little")
        assert data[18:] == (258).to_bytes(8, "little") + b"\x03\x00\x04\x00\xff\x00"


@pytest.mark.unit
class TestEvtDecoding:
    """Test decode_events on good and malformed input."""

    @pytest.mark.slow
    @given(event_streams())
    @settings(max_examples=1000, deadline=None)
    def test_round_trip(self, stream):
        """decode(encode(s)) == s."""
        assert decode_events(encode_events(stream)) == stream

    def test_bad_magic(self, sample_stream):
        """A wrong magic is reported as such."""
        data = b"EVT2" + encode_events(sample_stream)[4:]
        with pytest.raises(BadMagicError):
            decode_events(data)

    def test_truncated_record(self, sample_stream):
        """A cut record is a truncation error."""
        with pytest.raises(TruncatedFileError):
            decode_events(encode_events(sample_stream)[:-3])

    def test_truncated_header(self, sample_stream):
        """A cut header is a truncation error."""
        with pytest.raises(TruncatedFileError):
            decode_events(encode_events(sample_stream)[:10])

    def test_unsorted_records(self, geometry):
        """Decreasing timestamps are rejected."""
        data = bytearray(encode_events(EventStream(geometry, [1, 2], [0, 0], [0, 0], [1, 1])))
        data[18:26] = (5).to_bytes(8, "little")
        with pytest.raises(UnsortedEventsError):
            decode_events(bytes(data))

    def test_out_of_bounds_record(self, geometry):
        """Coordinates beyond the header geometry are rejected."""
        data = bytearray(encode_events(EventStream(geometry, [1], [0], [0], [1])))
        data[26:28] = (8).to_bytes(2, "little")
        with pytest.raises(OutOfBoundsError):
            decode_events(bytes(data))

    def test_zero_polarity_record(self, geometry):
        """Polarity 0 is a format error."""
        data = bytearray(encode_events(EventStream(geometry, [1], [0], [0], [1])))
        data[30] = 0
        with pytest.raises(FormatError):
            decode_events(bytes(data))

    @pytest.mark.slow
    @given(st.binary(max_size=120))
    @settings(max_examples=1000, deadline=None)
    def test_fuzzed_bytes_raise_typed_errors(self, data):
        """Arbitrary bytes either decode or raise a FormatError."""
        try:
            decode_events(b"EVT1" + data)
        except FormatError:
            pass

    @given(event_streams(max_events=20), st.data())
    @settings(max_examples=300, deadline=None)
    def test_truncations_raise_typed_errors(self, stream, data):
        """Every strict prefix of a valid file fails with a FormatError."""
        encoded = encode_events(stream)
        cut = data.draw(st.integers(0, len(encoded) - 1))
        with pytest.raises(FormatError):
            decode_events(encoded[:cut])

    @pytest.mark.integration
    def test_file_round_trip(self, sample_stream, temp_dir):
        """write_events then read_events returns the stream."""
        path = temp_dir / "events.evt"
        write_events(path, sample_stream)
        assert read_events(path) == sample_stream


@pytest.mark.unit
class TestEventsCsv:
    """Test the t_us,x,y,p CSV format."""

    def test_parses_both_polarities(self, geometry):
        """p in {1, -1} parses."""
        stream = events_from_csv("t_us,x,y,p\n0,1,2,1\n5,3,4,-1\n", geometry)
        assert stream.p.tolist() == [1, -1]
        assert stream.x.tolist() == [1, 3]

    def test_zero_polarity_rejected(self, geometry):
        """p=0 is not a polarity."""
        with pytest.raises(CsvFormatError):
            events_from_csv("t_us,x,y,p\n0,1,2,0\n", geometry)

    def test_wrong_header(self, geometry):
        """The header must be exactly t_us,x,y,p."""
        with pytest.raises(CsvFormatError):
            events_from_csv("t,x,y,p\n0,1,2,1\n", geometry)

    @pytest.mark.parametrize("row", ["0,1,2", "0,1.5,2,1", "a,1,2,1", "0,1,2,1,9", ",1,2,1"])
    def test_malformed_rows(self, geometry, row):
        """Missing, extra and non-integer cells are format errors."""
        with pytest.raises(CsvFormatError):
            events_from_csv(f"t_us,x,y,p\n0,0,0,1\n{row}\n", geometry)

    def test_header_only_is_empty(self, geometry):
        """A table with no rows is an empty stream."""
        assert len(events_from_csv("t_us,x,y,p\n", geometry)) == 0

    def test_empty_text(self, geometry):
        """An empty file has no header."""
        with pytest.raises(CsvFormatError):
            events_from_csv("", geometry)

    def test_unsorted_rows(self, geometry):
        """CSV rows are checked for order too."""
        with pytest.raises(UnsortedEventsError):
            events_from_csv("t_us,x,y,p\n5,0,0,1\n1,0,0,1\n", geometry)

    @given(event_streams(max_events=50))
    @settings(max_examples=100, deadline=None)
    def test_round_trip(self, stream):
        """CSV export then import returns the stream."""
        assert events_from_csv(events_to_csv(stream), stream.geometry) == stream

    @pytest.mark.slow
    @given(st.text(max_size=80))
    @settings(max_examples=1000, deadline=None)
    def test_fuzzed_text_raises_typed_errors(self, text):
        """Arbitrary text either parses or raises a FormatError."""
        try:
            events_from_csv("t_us,x,y,p\n" + text, SensorGeometry(width=4, height=4))
        except FormatError:
            pass

    @pytest.mark.integration
    def test_file_round_trip(self, sample_stream, temp_dir):
        """CSV files round-trip."""
        path = temp_dir / "events.csv"
        write_events_csv(path, sample_stream)
        assert path.read_text().splitlines()[0] == "t_us,x,y,p"
        assert read_events_csv(path, sample_stream.geometry) == sample_stream
