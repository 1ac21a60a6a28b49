"""Trace parsing, writing, synthetic generation and chronological splits."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import List

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from canids.core.can_core import CanFrame, Label
from canids.core.errors import ConfigError, IdOverflow, ParseError
from canids.core.trace_io import (
    AttackKind,
    DosParams,
    FuzzyParams,
    GeneratorConfig,
    IdSpec,
    SpoofParams,
    Trace,
    TraceSource,
    format_trace,
    generate_trace,
    parse_lines,
    parse_text_log,
    parse_trace,
    split_sizes,
    split_trace,
    write_trace,
)


def test_parse_table_row_without_label() -> None:
    trace = parse_lines(["1478198376.389427,0316,8,05,21,68,09,21,21,00,6f"], has_labels=False)
    frame = trace.frames[0]
    assert frame.timestamp == 1478198376.389427
    assert frame.id == 0x316
    assert frame.dlc == 8
    assert frame.data == bytes([0x05, 0x21, 0x68, 0x09, 0x21, 0x21, 0x00, 0x6F])
    assert frame.label is Label.UNLABELED


def test_parse_labelled_row() -> None:
    trace = parse_lines(["1478198376.389636,018f,8,fe,5b,00,00,00,3c,00,00,R"], has_labels=True)
    assert trace.frames[0].label is Label.NORMAL
    assert trace.frames[0].id == 0x18F


def test_parse_attack_flag_needs_attack_kind() -> None:
    row = "0.000100,0000,8,00,00,00,00,00,00,00,00,T"
    with pytest.raises(ParseError):
        parse_lines([row], has_labels=True)
    trace = parse_lines([row], has_labels=True, attack_kind=AttackKind.DOS)
    assert trace.frames[0].label is Label.ATTACK


def test_parse_empty_payload() -> None:
    frame = parse_lines(["1.000000,0100,0"]).frames[0]
    assert frame.dlc == 0
    assert frame.data == b""


def test_parse_hex_is_case_insensitive() -> None:
    frame = parse_lines(["1.0,018F,2,FE,5b,r"]).frames[0]
    assert frame.id == 0x18F
    assert frame.data == b"\xfe\x5b"
    assert frame.label is Label.NORMAL


@pytest.mark.parametrize(
    "row, has_labels",
    [
        ("abc,0316,0", None),
        ("1.0,zz,0", None),
        ("1.0,0316,9", None),
        ("1.0,0316,2,05", None),
        ("1.0,0316,1,5", None),
        ("1.0,0316,1,0g", None),
        ("1.0,0316,1,05,X", None),
        ("1.0,0316,1,05", True),
        ("1.0,0316,1,05,R", False),
    ],
)
def test_malformed_rows_report_row_number(row: str, has_labels) -> None:
    """Errors name the 1-based row that failed to parse."""

    first = "0.5,0100,0,R" if has_labels else "0.5,0100,0"
    with pytest.raises(ParseError) as excinfo:
        parse_lines([first, row], has_labels=has_labels)
    assert excinfo.value.row == 2


def test_backwards_timestamp_is_rejected() -> None:
    with pytest.raises(ParseError):
        parse_lines(["2.0,0100,0", "1.0,0100,0"])


def test_oversized_id_overflows() -> None:
    with pytest.raises(IdOverflow):
        parse_lines(["1.0,3fffffff,0"])


def test_header_supplies_attack_kind() -> None:
    trace = parse_lines(["# canids-trace attack=gear", "1.0,043f,1,00,T"])
    assert trace.attack_kind is AttackKind.GEAR


def test_empty_trace_writes_header_only(tmp_path: Path) -> None:
    path = tmp_path / "empty.csv"
    write_trace(Trace(frames=()), path)
    assert path.read_text() == "# canids-trace attack=none\n"
    assert len(parse_trace(path)) == 0


def test_single_frame_round_trips(tmp_path: Path) -> None:
    frame = CanFrame(timestamp=1478198376.389427, id=0x316, dlc=2, data=b"\x05\x21", label=Label.ATTACK)
    trace = Trace(frames=(frame,), attack_kind=AttackKind.RPM)
    path = tmp_path / "one.csv"
    write_trace(trace, path)
    assert path.read_text().splitlines()[1] == "1478198376.389427,0316,2,05,21,T"
    assert parse_trace(path).frames == trace.frames


def test_sub_microsecond_timestamps_survive_writing() -> None:
    frames = (
        CanFrame(0.1234567, 0x316, 0, b"", Label.NORMAL),
        CanFrame(2.0, 0x316, 0, b"", Label.NORMAL),
        CanFrame(1478198376.3894271, 0x316, 0, b"", Label.NORMAL),
    )
    text = format_trace(Trace(frames=frames))
    rows = text.splitlines()[1:]
    assert rows[0].startswith("0.1234567,")
    assert rows[1].startswith("2.000000,")
    assert parse_lines(text.splitlines()).frames == frames


def _random_trace(rng: np.random.Generator, count: int) -> Trace:
    frames: List[CanFrame] = []
    t = 0.0
    for _ in range(count):
        t = t + float(rng.uniform(0, 0.01))
        dlc = int(rng.integers(0, 9))
        extended = bool(rng.random() < 0.1)
        can_id = int(rng.integers(0, 1 << 29)) if extended else int(rng.integers(0, 1 << 11))
        label = [Label.NORMAL, Label.ATTACK, Label.UNLABELED][int(rng.integers(0, 3))]
        data = rng.integers(0, 256, size=dlc, dtype=np.uint8).tobytes()
        frames.append(CanFrame(t, can_id, dlc, data, label, extended))
    return Trace(frames=tuple(frames), attack_kind=AttackKind.FUZZY)


@pytest.mark.parametrize("seed", range(5))
def test_write_parse_identity(seed: int) -> None:
    trace = _random_trace(np.random.default_rng(seed), 300)
    parsed = parse_lines(format_trace(trace).splitlines())
    assert parsed.attack_kind is trace.attack_kind
    assert parsed.frames == trace.frames


def test_formatting_is_a_fixpoint(settings) -> None:
    trace = generate_trace(settings.generator_config(AttackKind.FUZZY))
    text = format_trace(trace)
    assert format_trace(parse_lines(text.splitlines())) == text


def test_parse_text_log(tmp_path: Path) -> None:
    path = tmp_path / "free.txt"
    path.write_text(
        "Timestamp: 1479121434.850202        ID: 0350    000    DLC: 8    05 28 84 66 6d 00 00 a2\n"
        "Timestamp: 1479121434.850423        ID: 02c0    000    DLC: 8    14 00 00 00 00 00 00 00\n"
        "Timestamp: 1479121434.850977        ID: 0430    000    DLC: 0\n"
    )
    trace = parse_text_log(path)
    assert [f.id for f in trace.frames] == [0x350, 0x2C0, 0x430]
    assert trace.frames[0].data == bytes.fromhex("052884666d0000a2")
    assert all(f.label is Label.NORMAL for f in trace.frames)
    assert trace.attack_kind is AttackKind.NONE


# ---------------------------------------------------------------------------
# Generation


def _dos_config(**changes) -> GeneratorConfig:
    base = dict(
        normal_id_pool=(IdSpec(0x316, 0.010),),
        duration=1.0,
        attack_kind=AttackKind.DOS,
        attack_params=DosParams(flood_id=0x000, period=0.0005),
        rng_seed=7,
    )
    base.update(changes)
    return GeneratorConfig(**base)


def test_zero_duration_is_empty() -> None:
    assert len(generate_trace(_dos_config(duration=0.0))) == 0


def test_dos_counts() -> None:
    """One flood frame every 0.5 ms and one pool frame every 10 ms."""

    trace = generate_trace(_dos_config())
    attack = [f for f in trace.frames if f.label is Label.ATTACK]
    normal = [f for f in trace.frames if f.label is Label.NORMAL]
    assert 1995 <= len(attack) <= 2001
    assert 95 <= len(normal) <= 105
    assert all(f.id == 0x000 for f in attack)
    assert all(f.id == 0x316 for f in normal)


def test_generation_is_deterministic() -> None:
    assert generate_trace(_dos_config()).frames == generate_trace(_dos_config()).frames
    assert generate_trace(_dos_config()).frames != generate_trace(_dos_config(rng_seed=8)).frames


def test_timestamps_are_monotonic(dos_trace: Trace) -> None:
    stamps = np.array([f.timestamp for f in dos_trace.frames])
    assert np.all(np.diff(stamps) >= 0)
    assert dos_trace.source is TraceSource.SYNTHETIC


def test_fuzzy_ids_stay_in_range() -> None:
    cfg = _dos_config(attack_kind=AttackKind.FUZZY, attack_params=FuzzyParams(period=0.001, id_min=0x100, id_max=0x1FF))
    attack = [f for f in generate_trace(cfg).frames if f.label is Label.ATTACK]
    assert attack
    assert all(0x100 <= f.id <= 0x1FF for f in attack)


def test_spoof_uses_forged_payload() -> None:
    payload = bytes.fromhex("ffffffffffffffff")
    cfg = _dos_config(attack_kind=AttackKind.RPM, attack_params=SpoofParams(0x316, payload, 0.001))
    trace = generate_trace(cfg)
    attack = [f for f in trace.frames if f.label is Label.ATTACK]
    assert all(f.id == 0x316 and f.data == payload for f in attack)
    # pool traffic on the same id is still Normal
    assert any(f.id == 0x316 and f.label is Label.NORMAL for f in trace.frames)


def test_bursts_leave_gaps() -> None:
    trace = generate_trace(_dos_config(burst_on=0.1, burst_off=0.1))
    stamps = np.array([f.timestamp for f in trace.frames if f.label is Label.ATTACK])
    assert np.all(np.mod(stamps, 0.2) < 0.1 + 1e-6)
    assert 900 <= len(stamps) <= 1100


@pytest.mark.parametrize(
    "changes",
    [
        {"normal_id_pool": ()},
        {"normal_id_pool": (IdSpec(0x10, 0.0),)},
        {"attack_params": None},
        {"attack_params": DosParams(period=0.0)},
        {"burst_on": 0.1},
        {"duration": -1.0},
    ],
)
def test_invalid_generator_config(changes) -> None:
    with pytest.raises(ConfigError):
        generate_trace(_dos_config(**changes))


# ---------------------------------------------------------------------------
# Splits


@pytest.mark.parametrize(
    "total, expected",
    [(100, (80, 15, 5)), (1, (1, 0, 0)), (0, (0, 0, 0)), (50000, (40000, 7500, 2500))],
)
def test_split_sizes(total: int, expected) -> None:
    assert split_sizes(total) == expected
    assert sum(split_sizes(total)) == total


def test_split_is_contiguous(dos_trace: Trace) -> None:
    train, val, test = split_trace(dos_trace)
    assert train.frames + val.frames + test.frames == dos_trace.frames
    assert train.frames[-1].timestamp <= val.frames[0].timestamp <= test.frames[0].timestamp


def test_split_rejects_bad_ratios() -> None:
    with pytest.raises(ConfigError):
        split_sizes(10, (0.5, 0.5, 0.5))
