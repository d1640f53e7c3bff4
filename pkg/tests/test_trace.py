"""Record model, codec round trips, and trace validation."""

import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stepscope import trace as T

from oracles import COMM_NAMES, random_record


# --------------------------------------------------------------------------
# codec

def test_randomized_codec_round_trip():
    rng = np.random.default_rng(42)
    for _ in range(500):
        rec = random_record(rng)
        line = T.encode_record(rec)
        back = T.decode_record(line)
        assert back == rec
        # canonical form: compact, sorted keys, no floats
        assert line == T.encode_record(back)
        assert json.loads(line) == json.loads(line)
        assert ": " not in line and "e+" not in line


def _comm_attrs():
    return st.fixed_dictionaries({
        "bytes": st.integers(1, 10 ** 14),
        "group_size": st.integers(2, 4096),
        "collective_seq": st.integers(0, 10 ** 9),
    })


@st.composite
def records(draw):
    kind = draw(st.sampled_from(sorted(T.RECORD_KINDS)))
    issue = draw(st.integers(0, 10 ** 13))
    if kind == T.KIND_PY_API:
        start = issue
    else:
        start = issue + draw(st.integers(0, 10 ** 10))
    end = start + draw(st.integers(0, 10 ** 10))
    if kind == T.KIND_GPU_COMM:
        name = draw(st.sampled_from(COMM_NAMES))
        attrs = draw(_comm_attrs())
    else:
        name = draw(st.text(
            alphabet=st.characters(codec="utf-8", exclude_categories=("C",)),
            min_size=1, max_size=40))
        attrs = draw(st.dictionaries(
            st.text(st.characters(codec="ascii", exclude_categories=("C",)),
                    min_size=1, max_size=12),
            st.integers(0, 10 ** 12), max_size=4))
    return T.TraceRecord(rank=draw(st.integers(0, 4095)),
                         step=draw(st.integers(0, 10 ** 7)), kind=kind,
                         name=name, issue_ts=issue, start_ts=start,
                         end_ts=end, stream=draw(st.integers(0, 15)),
                         attrs=attrs)


@given(records())
@settings(max_examples=200, deadline=None)
def test_codec_round_trip_property(rec):
    assert T.decode_record(T.encode_record(rec)) == rec


def test_encode_refuses_invalid():
    rec = T.TraceRecord(0, 0, T.KIND_GPU_COMPUTE, "matmul.x", 10, 5, 20, 1, {})
    with pytest.raises(T.TraceError, match="issue_ts"):
        T.encode_record(rec)


def test_decode_refuses_invalid():
    rec = T.TraceRecord(0, 0, T.KIND_GPU_COMM, "allreduce", 0, 1, 2, 1,
                        {"bytes": 8, "group_size": 4, "collective_seq": 1})
    line = T.encode_record(rec)
    broken = line.replace('"group_size":4', '"group_size":1')
    with pytest.raises(T.TraceError, match="group_size"):
        T.decode_record(broken)
    with pytest.raises(T.TraceError):
        T.decode_record("not json at all")


def test_encode_records_round_trip_and_order():
    rng = np.random.default_rng(7)
    recs = [random_record(rng) for _ in range(50)]
    data = T.encode_records(recs)
    assert isinstance(data, bytes)
    assert data.endswith(b"\n")
    back = T.decode_records(data)
    assert back == recs


def test_read_trace_round_trip(tmp_path, small_out):
    flat = T.flatten(small_out.timelines)
    path = tmp_path / ("run" + T.TRACE_SUFFIX)
    path.write_bytes(T.encode_records(flat))
    back = T.read_trace(path)
    assert back == list(small_out.timelines)


def test_group_into_steps_windows():
    recs = [
        T.TraceRecord(0, 0, T.KIND_PY_API, T.DATALOADER_NAME, 0, 0, 10, 0,
                      {"samples": 1}),
        T.TraceRecord(0, 0, T.KIND_GPU_COMPUTE, "matmul.a", 10, 12, 30, 1, {}),
        T.TraceRecord(0, 1, T.KIND_PY_API, T.DATALOADER_NAME, 40, 40, 50, 0,
                      {"samples": 1}),
        T.TraceRecord(0, 1, T.KIND_GPU_COMPUTE, "matmul.a", 50, 55, 90, 1, {}),
    ]
    tls = T.group_into_steps(recs)
    assert [(t.step, t.step_begin_ts, t.step_end_ts) for t in tls] == \
        [(0, 0, 40), (1, 40, 90)]


# --------------------------------------------------------------------------
# plain-decimal formatting

@pytest.mark.parametrize("value,expect", [
    (0, "0"), (12345, "12345"), (0.5, "0.5"), (0.1, "0.1"),
    (1e21, "1000000000000000000000.0"),
    (1.5e-7, "0.00000015"),
    (123456789.25, "123456789.25"),
])
def test_format_number_plain(value, expect):
    out = T.format_number(value)
    assert out == expect
    assert "e" not in out and "E" not in out


def test_format_number_rejects_nonfinite():
    with pytest.raises(ValueError):
        T.format_number(float("nan"))
    with pytest.raises(ValueError):
        T.format_number(float("inf"))
    with pytest.raises(TypeError):
        T.format_number(True)


@given(st.floats(allow_nan=False, allow_infinity=False))
@settings(max_examples=300, deadline=None)
def test_format_number_round_trips_floats(x):
    assert float(T.format_number(x)) == x


def test_dumps_plain_sorted_and_plain():
    obj = {"b": 2.5e-8, "a": [1, {"z": 1e20, "y": None}], "c": True}
    text = T.dumps_plain(obj)
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert "e" not in text.replace("true", "").replace("false", "")
    assert json.loads(text) == json.loads(T.dumps_plain(obj))
    line = T.dumps_plain_line({"k": 0.25})
    assert line == '{"k":0.25}'


# --------------------------------------------------------------------------
# frame labels

def test_frame_helpers():
    assert T.frame_function("allreduce@417") == "allreduce"
    assert T.frame_function("loader.py:fetch") == "loader.py:fetch"
    assert T.frame_collective_seq("allreduce@417") == 417
    assert T.frame_collective_seq("train.py:main") is None
    assert T.frame_collective_seq("broadcast@nope") is None


def test_callstack_innermost():
    s = T.CallStackSnapshot(0, ("allreduce@3", "collective.py:wait",
                                "train.py:main"), 100, True)
    assert s.innermost() == "allreduce@3"
    assert T.CallStackSnapshot(0, (), 0, False).innermost() == ""


# --------------------------------------------------------------------------
# validation

def _mutate(out, rank, step, pos, changes):
    tls = list(out.timelines)
    for i, tl in enumerate(tls):
        if tl.rank == rank and tl.step == step:
            recs = list(tl.records)
            recs[pos] = dataclasses.replace(recs[pos], **changes)
            tls[i] = dataclasses.replace(tl, records=tuple(recs))
            return tls
    raise AssertionError("timeline not found")


def test_validate_accepts_simulated_trace(small_out):
    assert T.validate_trace(small_out.timelines)


def test_validate_rejects_bad_timestamps(small_out):
    tls = _mutate(small_out, 0, 1, 1, {"end_ts": 0})
    res = T.validate_trace(tls)
    assert not res.ok
    assert "timestamp" in res.violation.rule or "window" in res.violation.rule


def test_validate_rejects_rank_mismatch(small_out):
    tls = _mutate(small_out, 1, 1, 2, {"rank": 0})
    res = T.validate_trace(tls)
    assert not res.ok


def test_validate_rejects_unsorted_issue(small_out):
    tl = next(t for t in small_out.timelines if t.rank == 0 and t.step == 1)
    recs = list(tl.records)
    recs[1], recs[2] = recs[2], recs[1]
    tls = [dataclasses.replace(t, records=tuple(recs))
           if (t.rank, t.step) == (0, 1) else t for t in small_out.timelines]
    res = T.validate_trace(tls)
    assert not res.ok
    assert "order" in res.violation.rule


def test_validate_rejects_open_collective(small_out):
    # drop rank 3's share of one collective: closure count breaks
    tls = []
    dropped = False
    for tl in small_out.timelines:
        if tl.rank == 3 and tl.step == 2 and not dropped:
            recs = [r for r in tl.records if r.kind != T.KIND_GPU_COMM]
            assert len(recs) < len(tl.records)
            tls.append(dataclasses.replace(tl, records=tuple(recs)))
            dropped = True
        else:
            tls.append(tl)
    res = T.validate_trace(tls)
    assert not res.ok
    assert "collective_seq" in res.violation.rule


def test_validate_rejects_missing_dataloader(small_out):
    tl0 = small_out.timelines[0]
    recs = tuple(r for r in tl0.records if r.name != T.DATALOADER_NAME)
    tls = [dataclasses.replace(tl0, records=recs)] + list(small_out.timelines[1:])
    res = T.validate_trace(tls)
    assert not res.ok
    assert "dataloader" in res.violation.rule
