"""Settings layering: flags over config file over environment over defaults."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from canids.core.errors import ConfigError
from canids.core.trace_io import AttackKind, DosParams, SpoofParams
from canids.utils.config import DEFAULT_ID_POOL, load_settings


def test_defaults() -> None:
    settings = load_settings()
    assert settings.learning_rate == 1e-4
    assert settings.epochs == 20
    assert settings.width == 16
    assert settings.split_ratios == (0.80, 0.15, 0.05)
    assert settings.api_prefix == "/api"


def test_config_file_then_flags(tmp_path: Path) -> None:
    """A flag beats the file, the file beats the default."""

    path = tmp_path / "canids.env"
    path.write_text("SEED=11\nDURATION=0.2\nEPOCHS=3\n")
    settings = load_settings(str(path), {"seed": 12, "epochs": None})
    assert settings.seed == 12
    assert settings.duration == 0.2
    assert settings.epochs == 3


def test_environment_is_below_the_file(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("CANIDS_SEED", "99")
    monkeypatch.setenv("CANIDS_BATCH_SIZE", "32")
    path = tmp_path / "canids.env"
    path.write_text("SEED=5\n")
    settings = load_settings(str(path))
    assert settings.seed == 5
    assert settings.batch_size == 32


@pytest.mark.parametrize(
    "overrides",
    [
        {"batch_size": 1},
        {"learning_rate": 0},
        {"width": 24},
        {"dropout_rate": 1.0},
        {"dos_id": 0x800},
        {"rpm_payload": "00" * 9},
        {"rpm_payload": "xyz"},
    ],
)
def test_invalid_values(overrides) -> None:
    with pytest.raises(ConfigError):
        load_settings(overrides=overrides)


def test_unknown_key_in_file(tmp_path: Path) -> None:
    path = tmp_path / "canids.env"
    path.write_text("LEARNING_RATE=0.001\nLERNING_RATE=0.01\n")
    with pytest.raises(ConfigError, match="lerning_rate"):
        load_settings(str(path))


def test_missing_config_file(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        load_settings(str(tmp_path / "absent.env"))


def test_id_literals() -> None:
    settings = load_settings(overrides={"rpm_id": "0x2C0", "gear_id": "1087"})
    assert settings.rpm_id == 0x2C0
    assert settings.gear_id == 0x43F


@pytest.mark.parametrize(
    "attack, n",
    [(AttackKind.DOS, 4), (AttackKind.FUZZY, 4), (AttackKind.RPM, 8), (AttackKind.GEAR, 8)],
)
def test_default_window_length(attack: AttackKind, n: int) -> None:
    assert load_settings().default_n(attack) == n


def test_generator_config_follows_settings() -> None:
    settings = load_settings(overrides={"seed": 4, "duration": 2.5, "dos_id": "0x010"})
    cfg = settings.generator_config(AttackKind.DOS)
    assert cfg.rng_seed == 4
    assert cfg.duration == 2.5
    assert cfg.attack_params == DosParams(flood_id=0x010, period=0.0005)
    assert len(cfg.normal_id_pool) == len(DEFAULT_ID_POOL)
    cfg.validate()


def test_spoof_payload_is_decoded() -> None:
    params = load_settings(overrides={"gear_payload": "FF00"}).attack_params(AttackKind.GEAR)
    assert params == SpoofParams(target_id=0x43F, payload=b"\xff\x00", period=0.001)


def test_attack_free_generation_has_no_params() -> None:
    assert load_settings().attack_params(AttackKind.NONE) is None
