import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gaze_aware import io
from gaze_aware.grid import FlowField, GazeFrame
from gaze_aware.objective import AnnotationRecord

unit = st.floats(0, 1, allow_nan=False)


# --- gaze ----------------------------------------------------------------------


@settings(max_examples=30)
@given(st.lists(st.tuples(st.integers(0, 10**6), arrays(np.float64, (3, 2), elements=unit), st.lists(st.booleans(), min_size=3, max_size=3)), max_size=8))
def test_gaze_jsonl_roundtrip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("g") / "gaze.jsonl"
    gaze = [GazeFrame(f, p, np.array(v)) for f, p, v in rows]
    io.write_gaze_jsonl(gaze, path)
    if not gaze:
        return
    back = io.read_gaze_jsonl(path)
    assert [g.frame_index for g in back] == [g.frame_index for g in gaze]
    assert all(np.array_equal(a.points, b.points) and np.array_equal(a.valid, b.valid) for a, b in zip(back, gaze))


def test_gaze_bad_line_reports_line_number(tmp_path):
    good = json.dumps(io.gaze_to_json(GazeFrame.at(0, (0.5, 0.5))))
    bad = json.dumps({"frame": 1, "points": [[0.1, 0.1], [0.2, 0.2]], "valid": [True, True]})
    p = tmp_path / "g.jsonl"
    p.write_text(good + "\n" + bad + "\n")
    with pytest.raises(io.FormatError, match=r"g\.jsonl:2: expected 3 gaze slots"):
        io.read_gaze_jsonl(p)


@pytest.mark.parametrize(
    "obj, msg",
    [
        ([], "JSON object"),
        ({"frame": 0}, "missing keys"),
        ({"frame": "0", "points": [[0, 0]] * 3, "valid": [True] * 3}, "integer"),
        ({"frame": 0, "points": [[0, 0]] * 3, "valid": [1, 1, 1]}, "booleans"),
        ({"frame": 0, "points": [[0, 2]] * 3, "valid": [True] * 3}, r"\[0, 1\]"),
    ],
)
def test_gaze_validation(obj, msg):
    with pytest.raises(ValueError, match=msg):
        io.gaze_from_json(obj)


def test_empty_gaze_file_warns(tmp_path, caplog):
    p = tmp_path / "empty.jsonl"
    p.write_text("\n")
    with caplog.at_level(logging.WARNING):
        assert io.read_gaze_jsonl(p) == []
    assert "no gaze frames" in caplog.text


def test_annotations_roundtrip_and_errors(tmp_path):
    ann = [AnnotationRecord(3, 0.25, 0.5, 0.75), AnnotationRecord(0, 1.0, 0.0, 0.0)]
    p = tmp_path / "a.jsonl"
    io.write_annotations_jsonl(ann, p)
    assert io.read_annotations_jsonl(p) == ann
    p.write_text('{"frame": 0, "x": 0.1, "y": 0.1, "label": 2.0}\n')
    with pytest.raises(io.FormatError, match=":1:"):
        io.read_annotations_jsonl(p)


# --- flow ----------------------------------------------------------------------


@settings(max_examples=30)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 3), st.integers(0, 2**16))
def test_flow_roundtrip(w, h, n, seed):
    rng = np.random.default_rng(seed)
    flows = [FlowField(*rng.normal(0, 3, (2, h, w)).astype(np.float32)) for _ in range(n)]
    back = io.decode_flow(io.encode_flow(flows))
    assert len(back) == n
    for a, b in zip(flows, back):
        assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)


def test_flow_layout():
    f = FlowField(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]))
    data = io.encode_flow([f])
    assert data[:4] == b"MFLO"
    assert data[4:12] == (2).to_bytes(4, "little") + (1).to_bytes(4, "little")
    assert np.array_equal(np.frombuffer(data[12:], "<f4"), [1, 2, 3, 4])


def test_flow_errors_name_offsets():
    data = io.encode_flow([FlowField.zeros(3, 4)] * 2)
    with pytest.raises(io.FormatError, match="truncated flow planes"):
        io.decode_flow(data[:-5])
    with pytest.raises(io.FormatError, match="bad magic at byte 0"):
        io.decode_flow(b"XXXX" + data[4:])
    with pytest.raises(io.FormatError, match="truncated flow header at byte"):
        io.decode_flow(data + b"MF")


# --- heatmaps ------------------------------------------------------------------


@settings(max_examples=30)
@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=unit))
def test_pgm_roundtrip_within_quantization(m):
    back = io.decode_pgm(io.encode_pgm(m))
    assert back.shape == m.shape
    assert np.max(np.abs(back - m)) <= 0.5 / 65535 + 1e-12


def test_pgm_header_and_comments():
    data = io.encode_pgm(np.array([[0.0, 1.0]]))
    assert data.startswith(b"P5\n2 1\n65535\n")
    commented = b"P5\n# made by hand\n2 1\n65535\n" + data.split(b"65535\n", 1)[1]
    assert np.array_equal(io.decode_pgm(commented), [[0.0, 1.0]])
    eight_bit = b"P5 2 1 255\n" + bytes([0, 255])
    assert np.array_equal(io.decode_pgm(eight_bit), [[0.0, 1.0]])


def test_pgm_errors():
    with pytest.raises(ValueError):
        io.encode_pgm(np.array([[1.5]]))
    with pytest.raises(io.FormatError, match="not a binary PGM"):
        io.decode_pgm(b"P2\n1 1\n255\n0")
    with pytest.raises(io.FormatError, match="truncated PGM raster"):
        io.decode_pgm(io.encode_pgm(np.zeros((3, 3)))[:-1])
    with pytest.raises(io.FormatError, match="bad PGM header"):
        io.decode_pgm(b"P5\n4")


def test_heatmap_sequence(tmp_path):
    stack = np.random.default_rng(0).random((3, 4, 5))
    paths = io.write_heatmap_sequence(stack, tmp_path / "aw", "aw", start=7)
    assert [p.name for p in paths] == ["aw_000007.pgm", "aw_000008.pgm", "aw_000009.pgm"]
    assert np.allclose(io.read_heatmap_sequence(tmp_path / "aw", "aw"), stack, atol=1e-5)
    with pytest.raises(FileNotFoundError):
        io.read_heatmap_sequence(tmp_path, "missing")


# --- tables --------------------------------------------------------------------


def test_csv_is_byte_stable(tmp_path):
    rows = [(0.1, 3, True), (1 / 3, np.int64(4), np.float32(0.5))]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    io.write_csv(a, ("x", "n", "flag"), rows)
    io.write_csv(b, ("x", "n", "flag"), rows)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text() == "x,n,flag\n0.1,3,true\n0.3333333333333333,4,0.5\n"
    header, body = io.read_csv(a)
    assert header == ["x", "n", "flag"] and float(body[1][0]) == 1 / 3


def test_mass_csv(tmp_path):
    io.write_mass_csv(np.ones((2, 2, 3)), tmp_path / "m.csv", start=5)
    assert (tmp_path / "m.csv").read_text() == "frame,mass\n5,6.0\n6,6.0\n"
