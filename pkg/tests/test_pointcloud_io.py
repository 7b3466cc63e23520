import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wtgplan.errors import EmptyCloud, LengthMismatch, MalformedFile, NonFiniteValue
from wtgplan.pointcloud_io import (PointCloud, dumps_json_document, load_point_cloud,
                                   read_json_document, write_colored_cloud, write_json_document,
                                   write_point_cloud)


def test_xyz_three_points(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("0 0 0\n1 0 0\n0 1 0\n")
    cloud = load_point_cloud(p)
    assert cloud.points.tolist() == [[0, 0, 0], [1, 0, 0], [0, 1, 0]]


def test_xyz_comments_and_colors(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# header line\n0 0 1 255 0 0\n# another\n2 3 4 0 128 255\n")
    cloud = load_point_cloud(p)
    assert len(cloud) == 2
    assert cloud.colors.tolist() == [[255, 0, 0], [0, 128, 255]]


def test_ply_ascii_two_vertices(tmp_path):
    p = tmp_path / "c.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\n"
                 "property float y\nproperty float z\nend_header\n1 2 3\n4 5 6\n")
    assert load_point_cloud(p).points.tolist() == [[1, 2, 3], [4, 5, 6]]


def test_ply_binary_le(tmp_path):
    p = tmp_path / "b.ply"
    header = ("ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\n"
              "property float y\nproperty float z\nproperty uchar red\nproperty uchar green\n"
              "property uchar blue\nelement face 0\nproperty list uchar int vertex_indices\n"
              "end_header\n").encode()
    body = b"".join(struct.pack("<fffBBB", i, -i, 0.5 * i, i, 2 * i, 3 * i) for i in range(3))
    p.write_bytes(header + body)
    cloud = load_point_cloud(p, format="ply-binary-le")
    assert cloud.points[:, 1].tolist() == [0, -1, -2]
    assert cloud.colors[2].tolist() == [2, 4, 6]


def test_truncated_ascii_body(tmp_path):
    p = tmp_path / "t.ply"
    rows = "\n".join(f"{i} {i} {i}" for i in range(7))
    p.write_text("ply\nformat ascii 1.0\nelement vertex 10\nproperty float x\n"
                 f"property float y\nproperty float z\nend_header\n{rows}\n")
    with pytest.raises(MalformedFile):
        load_point_cloud(p)


def test_truncated_binary_body(tmp_path):
    p = tmp_path / "t.ply"
    header = ("ply\nformat binary_little_endian 1.0\nelement vertex 10\nproperty double x\n"
              "property double y\nproperty double z\nend_header\n").encode()
    p.write_bytes(header + np.zeros((7, 3)).tobytes())
    with pytest.raises(MalformedFile):
        load_point_cloud(p)


@pytest.mark.parametrize("text", ["ply\nformat ascii 1.0\nelement vertex 1\nend_header\n1 2 3\n",
                                  "ply\nformat big_endian 1.0\nend_header\n",
                                  "ply\nelement vertex 1\nproperty float x\n"])
def test_bad_headers(tmp_path, text):
    p = tmp_path / "h.ply"
    p.write_text(text)
    with pytest.raises(MalformedFile):
        load_point_cloud(p)


def test_missing_file(tmp_path):
    with pytest.raises(MalformedFile):
        load_point_cloud(tmp_path / "absent.ply")


def test_empty_and_nonfinite(tmp_path):
    e = tmp_path / "e.xyz"
    e.write_text("# nothing\n")
    with pytest.raises(EmptyCloud):
        load_point_cloud(e)
    n = tmp_path / "n.xyz"
    n.write_text("0 0 0\nnan 1 2\n")
    with pytest.raises(NonFiniteValue):
        load_point_cloud(n)
    i = tmp_path / "i.ply"
    i.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n"
                 "property float y\nproperty float z\nend_header\ninf 0 0\n")
    with pytest.raises(NonFiniteValue):
        load_point_cloud(i)


def test_colored_cloud_single_point(tmp_path):
    p = tmp_path / "one.ply"
    write_colored_cloud(PointCloud([[1.0, 2.0, 3.0]]), [[10, 20, 30]], p)
    assert "element vertex 1" in p.read_text().splitlines()
    back = load_point_cloud(p)
    assert back.colors.tolist() == [[10, 20, 30]]


def test_colored_cloud_length_mismatch(tmp_path):
    with pytest.raises(LengthMismatch):
        write_colored_cloud(PointCloud([[0, 0, 0], [1, 1, 1]]), [[0, 0, 0]], tmp_path / "x.ply")


def test_roundtrip_nine_digits(tmp_path):
    rng = np.random.default_rng(3)
    pts = rng.normal(scale=50.0, size=(200, 3))
    p = tmp_path / "r.ply"
    write_colored_cloud(PointCloud(pts), np.zeros((200, 3)), p)
    back = load_point_cloud(p).points
    expect = np.array([[float(f"{v:.9g}") for v in row] for row in pts])
    assert np.array_equal(back, expect)


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)), elements=finite))
def test_roundtrip_property(tmp_path_factory, pts):
    p = tmp_path_factory.mktemp("rt") / "c.ply"
    write_point_cloud(PointCloud(pts), p)
    back = load_point_cloud(p).points
    assert back.shape == pts.shape
    assert np.all(np.isfinite(back))
    assert np.allclose(back, pts, rtol=1e-8, atol=1e-300)


def test_json_empty_and_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_json_document({}, a)
    assert a.read_text() == "{}\n"
    doc = {"z": [1, 2.5], "a": {"y": 1, "b": None}}
    write_json_document(doc, a)
    write_json_document(dict(reversed(list(doc.items()))), b)
    assert a.read_bytes() == b.read_bytes()
    assert read_json_document(a) == doc


def test_json_rejects_nan(tmp_path):
    with pytest.raises(NonFiniteValue):
        write_json_document({"x": math.nan}, tmp_path / "n.json")
    with pytest.raises(NonFiniteValue):
        dumps_json_document({"x": [np.float64("inf")]})


json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-10**6, 10**6) | st.floats(allow_nan=False, allow_infinity=False)
    | st.text(max_size=5),
    lambda kids: st.lists(kids, max_size=4) | st.dictionaries(st.text(max_size=4), kids, max_size=4),
    max_leaves=20)


@settings(max_examples=60, deadline=None)
@given(json_values)
def test_json_equal_documents_equal_bytes(doc):
    import copy
    assert dumps_json_document(doc) == dumps_json_document(copy.deepcopy(doc))
