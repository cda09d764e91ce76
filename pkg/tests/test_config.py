import pytest

from serenade.config import MidiSource, load_settings, parse_overrides, read_config_file
from serenade.pipeline.utils.errors import InvalidInputError, MissingFileError

SAMPLE_CONFIG = """
# configuração de exemplo
seed = 42
EULER_STEPS = 8
AUGMENT_SEMITONES = -2,2
MIDI_SOURCE = score
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "serenade.cfg"
    path.write_text(SAMPLE_CONFIG, encoding="utf-8")
    return str(path)


def test_defaults(monkeypatch):
    """Testa os valores padrão sem arquivo nem ambiente."""
    monkeypatch.delenv("SERENADE_SEED", raising=False)
    settings = load_settings()

    assert settings.SAMPLE_RATE == 24000
    assert settings.SEED == 0
    assert settings.AUGMENT_SEMITONES == [-4, -3, -2, -1, 1, 2, 3, 4]
    assert settings.MIDI_SOURCE == MidiSource.AUDIO
    assert settings.frame_config().n_mels == 80
    assert settings.cfm_config().sigma_min == pytest.approx(1e-4)


def test_config_file(config_file):
    """Testa a leitura do arquivo `chave = valor`."""
    settings = load_settings(config_file)

    # Verificar chaves normalizadas e conversões
    assert settings.SEED == 42
    assert settings.EULER_STEPS == 8
    assert settings.AUGMENT_SEMITONES == [-2, 2]
    assert settings.MIDI_SOURCE == MidiSource.SCORE


def test_precedence(monkeypatch, config_file):
    """Testa a precedência CLI > arquivo > ambiente."""
    monkeypatch.setenv("SERENADE_SEED", "7")
    monkeypatch.setenv("SERENADE_BATCH_SIZE", "2")

    assert load_settings().SEED == 7
    settings = load_settings(config_file, {"SEED": "99"})
    assert settings.SEED == 99
    assert settings.EULER_STEPS == 8
    assert settings.BATCH_SIZE == 2
    assert load_settings(config_file).SEED == 42


def test_unknown_key(config_file):
    """Testa chaves desconhecidas."""
    with pytest.raises(InvalidInputError) as excinfo:
        load_settings(config_file, {"NOT_A_KEY": "1"})

    assert excinfo.value.exit_code == 2
    assert "NOT_A_KEY" in excinfo.value.message


@pytest.mark.parametrize(
    "overrides",
    [
        {"HOP": "2048"},
        {"JOBS": "0"},
        {"SEGMENT_FRAMES": "3"},
        {"AUGMENT_SEMITONES": "1,13"},
        {"LOG_LEVEL": "LOUD"},
        {"MIDI_SOURCE": "guess"},
    ],
)
def test_invalid_values(overrides):
    """Testa valores inválidos."""
    with pytest.raises(InvalidInputError):
        load_settings(None, overrides)


def test_parse_overrides():
    """Testa a conversão de `CHAVE=valor`."""
    assert parse_overrides(["seed=3", "LOG_LEVEL = debug", "X=a=b"]) == {
        "SEED": "3",
        "LOG_LEVEL": "debug",
        "X": "a=b",
    }

    with pytest.raises(InvalidInputError):
        parse_overrides(["SEED"])


def test_missing_config_file(tmp_path):
    """Testa arquivo de configuração ausente."""
    with pytest.raises(MissingFileError):
        read_config_file(str(tmp_path / "nope.cfg"))
