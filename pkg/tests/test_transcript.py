"""Tests for the message transcript: ordering, digests, serialization."""

import numpy as np
import pytest

from fedistill.transcript import Transcript, TranscriptRecord, array_digest


def test_array_digest_stable_and_shape_sensitive():
    a = np.arange(6.0).reshape(2, 3)
    assert array_digest(a) == array_digest(a.copy())
    assert array_digest(a) != array_digest(a.reshape(3, 2))
    assert array_digest(a) != array_digest(a + 1e-12)


def test_record_appends_in_order():
    t = Transcript()
    t.record("task", "server", "masked_matrix", np.eye(2))
    t.record("server", "task", "svd_result", np.ones((2, 1)))
    assert [r.step for r in t] == [0, 1]
    assert len(t) == 2
    assert t.records[0].sender == "task"
    assert t.records[1].kind == "svd_result"


def test_record_multi_part_payload():
    t = Transcript()
    vec = np.ones(4)
    rec = t.record("data:0", "server", "eigen_pair", (vec, 2.5))
    assert rec.shapes == ((4,), ())
    assert rec.digests[0] == array_digest(vec)
    assert rec.digests[1] == array_digest(2.5)


def test_records_view_is_immutable():
    t = Transcript()
    t.record("task", "server", "masked_matrix", np.eye(2))
    view = t.records
    assert isinstance(view, tuple)
    with pytest.raises(AttributeError):
        t.records = ()


def test_edges_collects_kinds():
    t = Transcript()
    t.record("task", "server", "masked_matrix", np.eye(2))
    t.record("data:0", "server", "masked_matrix", np.eye(2))
    t.record("server", "task", "svd_result", np.eye(2))
    edges = t.edges()
    assert edges[("task", "server")] == {"masked_matrix"}
    assert edges[("server", "task")] == {"svd_result"}


def test_digest_depends_on_content_and_order():
    def build(order):
        t = Transcript()
        for sender in order:
            t.record(sender, "server", "masked_matrix", np.eye(2))
        return t

    assert build(["task", "data:0"]).digest() == build(["task", "data:0"]).digest()
    assert build(["task", "data:0"]).digest() != build(["data:0", "task"]).digest()


def test_json_round_trip():
    t = Transcript()
    t.record("keygen", "task", "masking_keys", (np.eye(3), np.ones((2, 5))))
    t.record("task", "server", "masked_matrix", np.ones((3, 5)))
    restored = Transcript.from_json(t.to_json())
    assert restored.records == t.records
    assert restored.digest() == t.digest()


def test_record_from_dict_round_trip():
    rec = TranscriptRecord(
        step=3,
        sender="data:1",
        receiver="server",
        kind="eigen_pair",
        shapes=((5,), ()),
        digests=("a" * 64, "b" * 64),
    )
    assert TranscriptRecord.from_dict(rec.to_dict()) == rec
