"""Pipeline stages against brute-force oracles and hand-computed values."""

import dataclasses
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsmkit.model import AttackClass, InvalidWindow
from bsmkit.preprocess import (
    NonFinite,
    WindowingConfig,
    dedup,
    group_and_window,
    read_windows,
    round3,
    run_pipeline,
    transform,
    vec_norm,
    window_count,
    write_windows,
)
from bsmkit.traceio import TraceFile
from tests.conftest import make_bsm, make_record, make_window


def oracle_dedup(records):
    """Quadratic reference: scan all pairs for a strictly better duplicate."""
    survivors = []
    for i, r in enumerate(records):
        beaten = False
        for j, other in enumerate(records):
            if (other.sender_pseudo, other.message_id) != (r.sender_pseudo, r.message_id):
                continue
            if other.rcv_time < r.rcv_time or (other.rcv_time == r.rcv_time and j < i):
                beaten = True
                break
        if not beaten:
            survivors.append(r)
    return survivors


class TestDedup:
    def test_keeps_min_rcv_time(self):
        late = make_bsm(rcv_time=10.3, message_id=5)
        early = make_bsm(rcv_time=10.0, message_id=5)
        assert dedup([late, early]) == [early]

    def test_distinct_ids_unchanged(self):
        records = [make_bsm(message_id=i) for i in range(4)]
        assert dedup(records) == records

    def test_multiplicity(self):
        records = []
        for rcv in (10.2, 10.0, 10.1):
            records.append(make_bsm(rcv_time=rcv, message_id=1))
        for rcv in (20.5, 20.4):
            records.append(make_bsm(rcv_time=rcv, message_id=2))
        out = dedup(records)
        assert len(out) == 2
        assert out == oracle_dedup(records)

    def test_tie_keeps_first(self):
        a = make_bsm(rcv_time=10.0, message_id=1, sender_id=1)
        b = make_bsm(rcv_time=10.0, message_id=1, sender_id=2)
        assert dedup([a, b]) == [a]

    def test_idempotent(self):
        records = [make_bsm(rcv_time=10.0 + (i % 3), message_id=i % 4) for i in range(12)]
        once = dedup(records)
        assert dedup(once) == once

    @given(
        st.lists(
            st.tuples(
                st.integers(0, 3),  # pseudo
                st.integers(0, 3),  # message id
                st.floats(0, 100, allow_nan=False),
            ),
            max_size=40,
        )
    )
    @settings(max_examples=200)
    def test_matches_quadratic_oracle(self, triples):
        records = [
            make_bsm(sender_pseudo=100 + p, message_id=m, rcv_time=t) for p, m, t in triples
        ]
        assert dedup(records) == oracle_dedup(records)


class TestVecNorm:
    def test_pythagorean(self):
        assert vec_norm((3.0, 4.0, 0.0)) == 5.0

    def test_zero(self):
        assert vec_norm((0.0, 0.0, 0.0)) == 0.0

    def test_hand_value(self):
        assert vec_norm((1.2, 2.3, 0.0)) == pytest.approx(2.5942243542, abs=1e-9)

    def test_non_finite(self):
        with pytest.raises(NonFinite):
            vec_norm((float("nan"), 0.0, 0.0))
        with pytest.raises(NonFinite):
            vec_norm((float("inf"), 0.0, 0.0))

    @given(
        st.tuples(*[st.floats(-1e6, 1e6, allow_nan=False) for _ in range(3)]),
        st.tuples(*[st.floats(-1e6, 1e6, allow_nan=False) for _ in range(3)]),
    )
    @settings(max_examples=200)
    def test_triangle_inequality(self, u, v):
        s = tuple(a + b for a, b in zip(u, v))
        assert vec_norm(s) <= vec_norm(u) + vec_norm(v) + 1e-9


class TestRound3:
    @pytest.mark.parametrize(
        "x,expected",
        [
            (1.23456, 1.235),
            (-0.0005, -0.001),
            (2.0, 2.0),
            (2.6775, 2.678),
            (1.0005, 1.001),
            (-1.23456, -1.235),
            (0.0004999, 0.0),
            (123456.789123, 123456.789),
        ],
    )
    def test_cases(self, x, expected):
        assert round3(x) == expected

    def test_non_finite(self):
        with pytest.raises(NonFinite):
            round3(float("nan"))

    @given(st.floats(-1e9, 1e9, allow_nan=False))
    @settings(max_examples=300)
    def test_idempotent(self, x):
        once = round3(x)
        assert round3(once) == once

    @given(st.floats(-1e6, 1e6, allow_nan=False), st.floats(-1e6, 1e6, allow_nan=False))
    @settings(max_examples=300)
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert round3(lo) <= round3(hi)

    @given(st.floats(-1e6, 1e6, allow_nan=False))
    @settings(max_examples=300)
    def test_within_half_grid(self, x):
        assert abs(round3(x) - x) <= 0.0005 + 1e-12


class TestTransform:
    def test_hand_composed(self):
        b = make_bsm(spd=(3.0, 4.0, 0.0), pos=(1500.123456, 900.0, 0.0))
        r = transform(b, AttackClass.GENUINE)
        assert r.spd == 5.0
        assert r.pos_x == 1500.123
        assert r.pos_y == 900.0
        assert r.label is AttackClass.GENUINE

    def test_all_zero(self):
        b = make_bsm(pos=(0.0, 0.0, 0.0), spd=(0.0, 0.0, 0.0), hed=(0.0, 0.0, 0.0))
        r = transform(b, AttackClass.DOS)
        assert (r.pos_x, r.pos_y, r.spd, r.acl, r.hed_x, r.hed_y) == (0, 0, 0, 0, 0, 0)

    def test_diagonal_heading(self):
        b = make_bsm(hed=(0.7071067, 0.7071067, 0.0))
        r = transform(b, AttackClass.GENUINE)
        assert r.hed_x == 0.707
        assert r.hed_y == 0.707

    def test_nonzero_z_warns(self, caplog):
        b = make_bsm(pos=(1.0, 2.0, 5.0))
        with caplog.at_level("WARNING"):
            r = transform(b, AttackClass.GENUINE)
        assert r.pos_x == 1.0
        assert any("z" in rec.message for rec in caplog.records)

    def test_identity_fields_survive(self):
        b = make_bsm(sender_id=9, sender_pseudo=901, message_id=44)
        r = transform(b, AttackClass.GENUINE)
        assert (r.sender_id, r.sender_pseudo, r.message_id) == (9, 901, 44)


def oracle_windows(m: int, n: int, stride: int) -> list[tuple[int, int]]:
    """Brute-force enumeration of [start, start+n) spans inside m records."""
    spans = []
    start = 0
    while start + n <= m:
        spans.append((start, start + n))
        start += stride
    return spans


class TestWindowCount:
    def test_spec_cases(self):
        assert window_count(25, WindowingConfig(10)) == 2
        assert window_count(9, WindowingConfig(10)) == 0
        assert window_count(100, WindowingConfig(100)) == 1

    def test_matches_enumeration(self):
        for m in range(0, 41):
            for n in range(2, 7):
                for stride in range(1, n + 1):
                    cfg = WindowingConfig(n, stride)
                    assert window_count(m, cfg) == len(oracle_windows(m, n, stride)), (m, n, stride)


class TestGroupAndWindow:
    def test_single_group_tumbling(self):
        records = [make_record(i) for i in range(25)]
        windows = group_and_window(records, WindowingConfig(10))
        assert len(windows) == 2
        assert [r.message_id for r in windows[0].records] == list(range(10))
        assert [r.message_id for r in windows[1].records] == list(range(10, 20))

    def test_two_pseudonyms(self):
        records = [make_record(i, pseudo=101) for i in range(100)]
        records += [make_record(i, pseudo=102) for i in range(100)]
        windows = group_and_window(records, WindowingConfig(100))
        assert len(windows) == 2
        assert sorted(w.sender_pseudo for w in windows) == [101, 102]

    def test_overlapping_stride(self):
        records = [make_record(i) for i in range(12)]
        windows = group_and_window(records, WindowingConfig(10, stride=1))
        assert len(windows) == 3
        assert [w.records[0].message_id for w in windows] == [0, 1, 2]

    def test_sorts_by_rcv_time_stably(self):
        r0 = make_record(0)
        r1 = dataclasses.replace(make_record(1), rcv_time=r0.rcv_time, message_id=7)
        r2 = make_record(2)
        windows = group_and_window([r2, r0, r1], WindowingConfig(3))
        assert [r.message_id for r in windows[0].records] == [0, 7, 2]

    def test_keep_partial_trailing(self):
        records = [make_record(i) for i in range(7)]
        windows = group_and_window(records, WindowingConfig(5, drop_incomplete=False))
        assert [w.window_size for w in windows] == [5, 2]

    def test_single_record_remainder_never_emitted(self):
        records = [make_record(i) for i in range(6)]
        windows = group_and_window(records, WindowingConfig(5, drop_incomplete=False))
        assert [w.window_size for w in windows] == [5]

    def test_canonical_output_order(self):
        records = [make_record(i, pseudo=202) for i in range(4)]
        records += [make_record(i, pseudo=101) for i in range(4)]
        windows = group_and_window(records, WindowingConfig(2))
        assert [w.sender_pseudo for w in windows] == [101, 101, 202, 202]
        starts = [w.start_time for w in windows[:2]]
        assert starts == sorted(starts)

    @given(
        st.lists(
            st.tuples(st.integers(0, 2), st.floats(0, 50, allow_nan=False)),
            max_size=60,
        ),
        st.integers(2, 6),
        st.integers(1, 6),
    )
    @settings(max_examples=150, deadline=None)
    def test_total_count_matches_oracle(self, pairs, n, stride_raw):
        stride = min(stride_raw, n)
        records = [
            make_record(i, pseudo=100 + p)
            for i, (p, _) in enumerate(pairs)
        ]
        # Overwrite times to the random draws, keeping per-record identity.
        records = [
            dataclasses.replace(r, rcv_time=round3(t)) for r, (_, t) in zip(records, pairs)
        ]
        cfg = WindowingConfig(n, stride)
        windows = group_and_window(records, cfg)
        per_group: dict[int, int] = {}
        for r in records:
            per_group[r.sender_pseudo] = per_group.get(r.sender_pseudo, 0) + 1
        expected = sum(len(oracle_windows(m, n, stride)) for m in per_group.values())
        assert len(windows) == expected
        for w in windows:
            assert w.window_size == n
            times = [r.rcv_time for r in w.records]
            assert times == sorted(times)


class TestRunPipeline:
    def _trace(self, tmp_path, name, records, attack):
        return TraceFile(path=tmp_path / name, attack=attack, records=records)

    def test_single_file_two_windows(self, tmp_path):
        records = [make_bsm(message_id=i, rcv_time=10.0 + i) for i in range(40)]
        tf = self._trace(tmp_path, "t-A0.json", records, AttackClass.GENUINE)
        windows = run_pipeline([tf], WindowingConfig(20))
        assert len(windows) == 2
        assert all(w.label is AttackClass.GENUINE for w in windows)

    def test_labels_follow_files(self, tmp_path):
        a0 = [make_bsm(sender_pseudo=101, message_id=i, rcv_time=float(i)) for i in range(4)]
        a1 = [make_bsm(sender_pseudo=202, message_id=i, rcv_time=float(i)) for i in range(4)]
        files = [
            self._trace(tmp_path, "t-A0.json", a0, AttackClass.GENUINE),
            self._trace(tmp_path, "t-A1.json", a1, AttackClass.CONST_POS),
        ]
        windows = run_pipeline(files, WindowingConfig(4))
        labels = {w.sender_pseudo: w.label for w in windows}
        assert labels == {101: AttackClass.GENUINE, 202: AttackClass.CONST_POS}

    def test_duplicated_content_collapses(self, tmp_path):
        records = [make_bsm(message_id=i, rcv_time=10.0 + i) for i in range(8)]
        one = run_pipeline(
            [self._trace(tmp_path, "t-A0.json", records, AttackClass.GENUINE)],
            WindowingConfig(4),
        )
        twice = run_pipeline(
            [
                self._trace(tmp_path, "t-A0.json", records, AttackClass.GENUINE),
                self._trace(tmp_path, "u-A0.json", list(records), AttackClass.GENUINE),
            ],
            WindowingConfig(4),
        )
        assert twice == one


class TestWindowPersistence:
    def test_round_trip(self, tmp_path):
        windows = [make_window(4, pseudo=101), make_window(3, pseudo=202, label=AttackClass.DOS)]
        path = tmp_path / "windows.jsonl"
        write_windows(windows, path)
        assert read_windows(path) == windows

    def test_fixed_record_key_order(self, tmp_path):
        import json

        path = tmp_path / "windows.jsonl"
        write_windows([make_window(2)], path)
        doc = json.loads(path.read_text().splitlines()[0])
        assert list(doc) == ["pseudo", "label", "n", "records"]
        assert list(doc["records"][0]) == [
            "rcv_time",
            "send_time",
            "sender_id",
            "sender_pseudo",
            "message_id",
            "pos_x",
            "pos_y",
            "spd",
            "acl",
            "hed_x",
            "hed_y",
            "label",
        ]

    def test_label_disagreement_rejected(self, tmp_path):
        import json

        path = tmp_path / "windows.jsonl"
        write_windows([make_window(2)], path)
        doc = json.loads(path.read_text())
        doc["records"][0]["label"] = "A13"
        path.write_text(json.dumps(doc) + "\n")
        with pytest.raises(ValueError):
            read_windows(path)
