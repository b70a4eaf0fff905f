import pytest

from zkagg import transcript as tr
from zkagg._bytes import FormatError


def sample():
    return [
        tr.Record(tr.SERVER, 0, "submit", b""),
        tr.Record(0, tr.SERVER, "submit", b"\x00\x01payload"),
        tr.Record(tr.SERVER, 1, "submit", b""),
        tr.Record(1, tr.SERVER, tr.NO_REPLY, b""),
        tr.Record(tr.SERVER, tr.SERVER, "aggregate-fixed", b"d" * 32),
    ]


def test_bytes_round_trip(tmp_path):
    recs = sample()
    assert tr.transcript_from_bytes(tr.transcript_to_bytes(recs)) == recs
    tr.save_transcript(recs, tmp_path / "t.bin")
    assert tr.load_transcript(tmp_path / "t.bin") == recs
    assert tr.transcript_from_bytes(tr.transcript_to_bytes([])) == []


def test_truncated_or_foreign_data_rejected():
    data = tr.transcript_to_bytes(sample())
    with pytest.raises(FormatError):
        tr.transcript_from_bytes(data[:-1])
    with pytest.raises(FormatError):
        tr.transcript_from_bytes(b"ZKTX" + data[4:])


def test_live_channel_records_requests_and_silence():
    ch = tr.LiveChannel({0: lambda tag, p: b"ok:" + p, 1: lambda tag, p: None})
    assert ch.request(0, "ping", b"x") == b"ok:x"
    assert ch.request(1, "ping") is None
    assert ch.request(7, "ping") is None
    ch.announce("done", b"")
    assert [r.tag for r in ch.records] == ["ping", "ping", "ping", tr.NO_REPLY, "ping", tr.NO_REPLY, "done"]


def test_replay_channel_reproduces_and_checks_order():
    live = tr.LiveChannel({0: lambda tag, p: b"a", 1: lambda tag, p: None})
    live.request(0, "submit")
    live.request(1, "submit")
    live.announce("fixed", b"h")

    rep = tr.ReplayChannel(live.records)
    assert rep.request(0, "submit") == b"a"
    assert rep.request(1, "submit") is None
    rep.announce("fixed", b"h")
    assert rep.finished()

    rep = tr.ReplayChannel(live.records)
    with pytest.raises(tr.ReplayMismatch):
        rep.request(1, "submit")
    rep = tr.ReplayChannel(live.records)
    rep.request(0, "submit")
    rep.request(1, "submit")
    with pytest.raises(tr.ReplayMismatch):
        rep.announce("fixed", b"other")
    with pytest.raises(tr.ReplayMismatch):
        tr.ReplayChannel([]).request(0, "submit")
