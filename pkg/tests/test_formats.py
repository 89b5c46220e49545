import io

import numpy as np
import pandas as pd
import pytest

from conftest import closed_loop
from echosense import frontend as fe
from echosense.formats import (
    SAMPLE_HEADER,
    CsvFormatError,
    RunReport,
    format_samples,
    parse_samples,
    summarize_sweep,
    write_samples,
)
from echosense.pipeline import DetectionEvent, IdentificationReport

HEAD = SAMPLE_HEADER + "\n"


def blocks(n=5, receivers=2, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / 80e3
    return [fe.FrameBlock(t, rng.uniform(0, 5, n), rng.uniform(0, 5, n), r) for r in range(receivers)]


def test_rows_sorted_time_then_receiver():
    text = format_samples(blocks(3, 2))
    ids = [int(line.split(",")[1]) for line in text.splitlines()]
    assert ids == [0, 1, 0, 1, 0, 1]
    assert text.splitlines()[0].split(",")[2].count(".") == 1
    assert all(len(f.split(".")[1]) <= 6 for f in text.splitlines()[0].split(",")[2:])


def test_write_then_parse_is_self_consistent():
    src = blocks(200, 4, seed=3)
    buf = io.StringIO()
    rows = write_samples(buf, [src[:]])
    assert rows == 800
    back = parse_samples(buf.getvalue())
    assert [b.receiver_id for b in back] == [0, 1, 2, 3]
    for a, b in zip(src, back):
        np.testing.assert_allclose(b.time, a.time, atol=5e-7)
        np.testing.assert_allclose(b.v1, a.v1, atol=5e-7)
        np.testing.assert_allclose(b.v2, a.v2, atol=5e-7)


def test_simulated_stream_round_trips(db):
    sc = fe.Scenario(db.get("argon"), 10.0, 0.02, 0.01, noise_sigma=0.01, seed=2)
    buf = io.StringIO()
    write_samples(buf, fe.acquire(sc, block=4096))
    again = io.StringIO()
    write_samples(again, [parse_samples(buf.getvalue())])
    assert again.getvalue() == buf.getvalue()


def test_header_only_parses_empty():
    assert parse_samples(HEAD) == []


@pytest.mark.parametrize(
    "body, lineno, msg",
    [
        ("0.0,0,1.0\n", 2, "missing"),
        ("0.0,0,1.0,2.0\n0.0,1,abc,2.0\n", 3, "non-numeric"),
        ("0.0,0,1.0,2.0\n0.0,1,1.0,2.0\n0.0000", 4, "mid-row"),
        ("0.0,0,1.0,2.0\n0.0,0.5,1.0,2.0\n", 3, "receiver_id"),
        ("0.1,0,1.0,2.0\n0.0,0,1.0,2.0\n", 3, "sorted"),
        ("0.0,0,nan,2.0\n", 2, "missing"),
        ("0.0,0,inf,2.0\n", 2, "non-finite"),
    ],
)
def test_malformed_rows_report_line(body, lineno, msg):
    with pytest.raises(CsvFormatError, match=msg) as exc:
        parse_samples(HEAD + body)
    assert exc.value.lineno == lineno


def test_bad_header():
    with pytest.raises(CsvFormatError) as exc:
        parse_samples("t,id,a,b\n")
    assert exc.value.lineno == 1


def test_misaligned_receivers():
    with pytest.raises(CsvFormatError, match="aligned"):
        parse_samples(HEAD + "0.0,0,1,1\n0.0,1,1,1\n0.1,0,1,1\n")


def test_report_round_trip():
    avg, (ev, rep) = closed_loop("hydrogen")
    r = RunReport({"input": "s.csv", "frames": 80000, "onset_s": 0.2, "dist": None}, ev, rep,
                  {"hydrogen": 0.01, "argon": 0.8}, {"wall_clock_s": 0.12})
    back = RunReport.from_text(r.to_text())
    assert back == r
    assert back.to_text() == r.to_text()


def test_report_without_detection():
    r = RunReport({"input": "x"})
    back = RunReport.from_text(r.to_text())
    assert back.event is None and back.report is None
    assert "detection.detected=false" in r.to_text()


def test_report_unmatched_gas_round_trips():
    ev = DetectionEvent(1.0, None, 0.5, 10, 1.0003)
    rep = IdentificationReport(0.5, False, 1e4, None, 16.5, 1.1, "argon", True)
    r = RunReport({}, ev, rep)
    assert RunReport.from_text(r.to_text()) == r


def test_report_grammar_errors():
    with pytest.raises(ValueError, match="line 2"):
        RunReport.from_text("# comment\nnot a pair\n")


def test_summarize_sweep():
    rows = pd.DataFrame(
        {"gas": ["a", "a", "b"], "actual_impedance": [1.0, 1.0, 2.0], "relative_error": [0.1, 0.3, 0.2]}
    )
    s = summarize_sweep(rows)
    assert s["gas"].tolist() == ["a", "b"]
    assert s["mean_relative_error"].tolist() == pytest.approx([0.2, 0.2])
    assert s["max_relative_error"].tolist() == [0.3, 0.2]
    assert s["n"].tolist() == [2, 1]
