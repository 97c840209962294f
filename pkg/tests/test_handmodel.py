import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from theta import handmodel as hm
from theta.errors import (
    ArgumentError,
    DegenerateGeometryError,
    ParseError,
    RangeError,
)


class TestJointId:
    def test_flat_roundtrip_is_bijection(self):
        seen = set()
        for finger in hm.Finger:
            for joint in hm.Joint:
                jid = hm.JointId(finger, joint)
                assert hm.JointId.from_flat(jid.flat) == jid
                seen.add(jid.flat)
        assert seen == set(range(15))

    def test_bad_flat_rejected(self):
        with pytest.raises(RangeError):
            hm.JointId.from_flat(15)


class TestBinCodec:
    def test_boundaries(self):
        assert hm.bin_encode(90).index == 0
        assert hm.bin_encode(180).index == 9

    def test_137_maps_to_nearest_center(self):
        # Oracle: brute-force nearest-center search over all 10 centers.
        centers = [90 + 10 * i for i in range(10)]
        nearest = min(range(10), key=lambda i: abs(137 - centers[i]))
        assert hm.bin_encode(137).index == nearest == 5
        assert hm.bin_encode(137).center_deg == 140

    def test_decode(self):
        assert hm.bin_decode(hm.AngleBin(0)) == 90
        assert hm.bin_decode(hm.AngleBin(9)) == 180
        assert hm.bin_decode(hm.AngleBin(5)) == 90 + 10 * 5
        assert hm.bin_decode(5) == 140

    def test_out_of_range_names_value(self):
        with pytest.raises(RangeError, match="200"):
            hm.bin_encode(200.0)
        with pytest.raises(RangeError):
            hm.bin_encode(84.99)

    def test_tie_rounds_half_away_from_zero(self):
        assert hm.bin_encode(95.0).index == 1
        assert hm.bin_encode(105.0).index == 2

    @given(st.floats(min_value=90, max_value=180))
    def test_roundtrip_within_5_degrees(self, angle):
        assert abs(hm.bin_decode(hm.bin_encode(angle)) - angle) <= 5.0

    @given(
        st.floats(min_value=85, max_value=185),
        st.floats(min_value=85, max_value=185),
    )
    def test_encode_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert hm.bin_encode(lo).index <= hm.bin_encode(hi).index

    def test_array_encode_matches_scalar(self):
        angles = np.linspace(85, 185, 501)
        arr = hm.bin_encode_array(angles)
        for a, idx in zip(angles, arr):
            assert hm.bin_encode(float(a)).index == idx


class TestJitter:
    def test_zero_amplitude_is_identity(self):
        angles = np.linspace(90, 180, 15)
        out = hm.jitter(angles, 0.0, np.random.default_rng(0))
        assert np.array_equal(out, angles)

    def test_negative_amplitude_rejected(self):
        with pytest.raises(ArgumentError):
            hm.jitter(np.full(15, 90.0), -1.0, np.random.default_rng(0))

    def test_bins_stable_on_multiples_of_ten(self):
        angles = np.full(15, 90.0)
        for seed in range(50):
            out = hm.jitter(angles, 5.0, np.random.default_rng(seed))
            assert np.all(out >= 85) and np.all(out <= 95)
            assert np.array_equal(hm.bin_encode_array(out), np.zeros(15))

    def test_golden_vector_seed_42(self):
        # Seeded-RNG replay oracle: recorded once from the generator.
        expected = [
            142.73956048555962, 139.3887843975205, 143.58597919911384,
            141.97368029059365, 135.94177347887648, 144.75622351636756,
            142.61139701990354, 142.86064305276955, 136.28113632675547,
            139.50385937895567, 138.70798024232582, 144.267649888486,
            141.43865120080665, 143.2276161327083, 139.43414198827332,
        ]
        out = hm.jitter(np.full(15, 140.0), 5.0, np.random.default_rng(42))
        assert np.allclose(out, expected, rtol=0, atol=1e-12)


class TestJointAngleFromPoints:
    def test_collinear(self):
        assert hm.joint_angle_from_points((0, 0, 0), (1, 0, 0), (2, 0, 0)) == pytest.approx(180.0)

    def test_perpendicular(self):
        assert hm.joint_angle_from_points((0, 0, 0), (1, 0, 0), (1, 1, 0)) == pytest.approx(90.0)

    def test_135_degrees(self):
        # Direct dot-product evaluation oracle.
        a, b, c = np.array([0.0, 0, 0]), np.array([1.0, 0, 0]), np.array([2.0, 1, 0])
        u, v = a - b, c - b
        expected = math.degrees(
            math.acos(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
        )
        got = hm.joint_angle_from_points(a, b, c)
        assert got == pytest.approx(expected) == pytest.approx(135.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            hm.joint_angle_from_points((1, 0, 0), (1, 0, 0), (2, 0, 0))

    @settings(max_examples=50)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_rigid_motion_and_swap_invariance(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-10, 10, size=(3, 3))
        a, b, c = pts
        if np.linalg.norm(a - b) < 1e-6 or np.linalg.norm(c - b) < 1e-6:
            return
        base = hm.joint_angle_from_points(a, b, c)
        # random rotation via QR, plus translation
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        t = rng.uniform(-5, 5, size=3)
        moved = hm.joint_angle_from_points(a @ q.T + t, b @ q.T + t, c @ q.T + t)
        assert moved == pytest.approx(base, abs=1e-9)
        assert hm.joint_angle_from_points(c, b, a) == pytest.approx(base, abs=1e-12)


CSV_HEADER_LINE = ",".join(hm.CSV_HEADER)


def _row(gid, name, angles):
    return f"{gid},{name}," + ",".join(str(a) for a in angles)


class TestGestureTable:
    def test_paper_style_rows(self):
        text = "\n".join(
            [
                CSV_HEADER_LINE,
                _row(1, "Closed Fist", [90] * 15),
                _row(2, "Open Palm", [180] * 15),
            ]
        )
        table = hm.parse_gesture_table(text.encode("utf-8"))
        assert len(table) == 2
        fist, palm = table
        idx_mcp = hm.JointId(hm.Finger.INDEX, hm.Joint.MCP).flat
        idx_pip = hm.JointId(hm.Finger.INDEX, hm.Joint.PIP).flat
        assert fist.angles[idx_mcp] == 90 and fist.angles[idx_pip] == 90
        assert palm.angles[idx_mcp] == 180 and palm.angles[idx_pip] == 180

    def test_empty_data_section(self):
        assert hm.parse_gesture_table((CSV_HEADER_LINE + "\n").encode()) == []

    def test_missing_column(self):
        bad = CSV_HEADER_LINE + "\n1,Fist," + ",".join(["90"] * 14)
        with pytest.raises(ParseError, match="row 1"):
            hm.parse_gesture_table(bad.encode())

    def test_non_numeric_angle(self):
        bad = CSV_HEADER_LINE + "\n" + _row(1, "Fist", ["x"] + ["90"] * 14)
        with pytest.raises(ParseError, match="non-numeric"):
            hm.parse_gesture_table(bad.encode())

    def test_angle_out_of_range(self):
        bad = CSV_HEADER_LINE + "\n" + _row(1, "Fist", [89] + [90] * 14)
        with pytest.raises(ParseError, match="outside"):
            hm.parse_gesture_table(bad.encode())

    def test_duplicate_gesture_id(self):
        bad = "\n".join(
            [CSV_HEADER_LINE, _row(1, "A", [90] * 15), _row(1, "B", [90] * 15)]
        )
        with pytest.raises(ParseError, match="duplicate"):
            hm.parse_gesture_table(bad.encode())

    def test_bad_header(self):
        with pytest.raises(ParseError, match="header"):
            hm.parse_gesture_table(b"nope,nope\n1,2\n")

    def test_serialize_roundtrip(self):
        table = hm.default_gesture_table()
        data = hm.serialize_gesture_table(table)
        parsed = hm.parse_gesture_table(data)
        assert len(parsed) == len(table)
        for a, b in zip(parsed, table):
            assert a.gesture_id == b.gesture_id
            assert a.gesture_name == b.gesture_name
            assert np.array_equal(a.angles, b.angles)
        # and serialization is stable
        assert hm.serialize_gesture_table(parsed) == data

    def test_binary_stream_input(self):
        data = hm.serialize_gesture_table(hm.default_gesture_table())
        parsed = hm.parse_gesture_table(io.BytesIO(data))
        assert len(parsed) == 40


class TestDefaultTable:
    def test_forty_gestures_all_multiples_of_ten(self):
        table = hm.default_gesture_table()
        assert len(table) == 40
        assert {t.gesture_id for t in table} == set(range(1, 41))
        for ann in table:
            assert np.all(ann.angles % 10 == 0)
            assert np.all(ann.angles >= 90) and np.all(ann.angles <= 180)

    def test_label_bins_cover_all_ten(self):
        table = hm.default_gesture_table()
        bins = set()
        for ann in table:
            bins.update(hm.bin_encode_array(ann.angles).tolist())
        assert bins == set(range(10))
