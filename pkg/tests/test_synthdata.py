import numpy as np
import pytest

from serenade.pipeline.models.audio import Waveform
from serenade.pipeline.models.synth import SongSpec, StyleParams
from serenade.pipeline.utils.dsp import extract_f0
from serenade.pipeline.utils.errors import InvalidInputError
from serenade.pipeline.utils.formats import read_manifest, read_songs
from serenade.pipeline.utils.synthdata import (
    MANIFEST_FILE,
    SONGS_FILE,
    default_styles,
    make_corpus,
    render_voice,
    score_map,
    style_proxy_metrics,
)

# Nota longa o bastante para medir vibrato
SAMPLE_PHRASE = SongSpec(notes=[(57, 2.0)])


@pytest.fixture(scope="module")
def proxies(frame_cfg):
    """Medidas de estilo de cada estilo padrão na mesma frase."""
    return {
        style.name: style_proxy_metrics(render_voice(SAMPLE_PHRASE, style, frame_cfg, seed=3), frame_cfg)
        for style in default_styles()
    }


def test_make_corpus_layout(tmp_path, frame_cfg):
    """Testa o corpus de 2 canções x 4 estilos e os arquivos gravados."""
    records = make_corpus(2, default_styles(), tmp_path, frame_cfg, seed=0)

    assert len(records) == 8
    for song_id in ("song000", "song001"):
        styles = [r.style for r in records if r.song_id == song_id]
        assert styles == ["clear", "breathy", "falsetto", "pressed"]

    # Verificar manifesto e partituras
    assert [r.clip_id for r in read_manifest(tmp_path / MANIFEST_FILE)] == [r.clip_id for r in records]
    assert set(read_songs(tmp_path / SONGS_FILE)) == {"song000", "song001"}


def test_make_corpus_is_reproducible(tmp_path, frame_cfg):
    """Testa que a mesma semente gera WAVs idênticos byte a byte."""
    a = make_corpus(1, default_styles(), tmp_path / "a", frame_cfg, seed=11)
    b = make_corpus(1, default_styles(), tmp_path / "b", frame_cfg, seed=11)

    for ra, rb in zip(a, b):
        with open(ra.wav_path, "rb") as fa, open(rb.wav_path, "rb") as fb:
            assert fa.read() == fb.read()


def test_make_corpus_errors(tmp_path, frame_cfg):
    """Testa parâmetros inválidos do corpus."""
    with pytest.raises(InvalidInputError):
        make_corpus(0, default_styles(), tmp_path, frame_cfg)
    with pytest.raises(InvalidInputError):
        make_corpus(1, default_styles()[:1], tmp_path, frame_cfg)
    with pytest.raises(InvalidInputError):
        make_corpus(1, [StyleParams(name="x"), StyleParams(name="x")], tmp_path, frame_cfg)


def test_render_voice_level_and_pitch(frame_cfg):
    """Testa nível, duração e F0 da voz sintética."""
    style = StyleParams(name="plain")
    wav = render_voice(SongSpec(notes=[(69, 1.0)]), style, frame_cfg, seed=0)

    assert len(wav) == frame_cfg.sample_rate
    assert np.max(np.abs(wav.samples)) <= 0.99
    rms_db = 20.0 * np.log10(np.sqrt(np.mean(wav.samples ** 2)))
    # o limitador de pico só pode baixar o nível
    assert -30.0 < rms_db <= -17.99

    f0 = extract_f0(wav, frame_cfg)
    assert np.median(f0.values[f0.voiced]) == pytest.approx(440.0, rel=0.01)


def test_style_proxy_ordering(proxies):
    """Testa que as medidas de estilo separam os estilos padrão."""
    assert proxies["breathy"].nhr > proxies["clear"].nhr
    assert proxies["pressed"].vibrato_depth_cents > proxies["clear"].vibrato_depth_cents
    assert proxies["falsetto"].tilt_db_per_oct < proxies["pressed"].tilt_db_per_oct


def test_style_proxy_vibrato_depth(proxies):
    """Testa a profundidade de vibrato medida contra a sintetizada."""
    assert proxies["pressed"].vibrato_depth_cents == pytest.approx(60.0, rel=0.35)
    assert proxies["falsetto"].vibrato_depth_cents < 10.0


def test_style_proxy_errors(sample_wav, frame_cfg):
    """Testa clipe curto e taxa de amostragem divergente."""
    short = Waveform(samples=sample_wav.samples[: int(0.3 * frame_cfg.sample_rate)],
                     sample_rate=frame_cfg.sample_rate)
    with pytest.raises(InvalidInputError):
        style_proxy_metrics(short, frame_cfg)

    other_rate = Waveform(samples=sample_wav.samples, sample_rate=16000)
    with pytest.raises(InvalidInputError):
        style_proxy_metrics(other_rate, frame_cfg)


def test_style_proxy_silence(frame_cfg):
    """Testa o NHR de um clipe sem vozeamento."""
    silence = Waveform(samples=np.zeros(frame_cfg.sample_rate), sample_rate=frame_cfg.sample_rate)

    assert style_proxy_metrics(silence, frame_cfg).nhr == 1.0


def test_white_noise_nhr(frame_cfg):
    """Testa que ruído branco tem NHR alto."""
    rng = np.random.default_rng(0)
    noise = Waveform.from_array(0.1 * rng.standard_normal(2 * frame_cfg.sample_rate), frame_cfg.sample_rate)

    assert style_proxy_metrics(noise, frame_cfg).nhr > 0.9


def test_nhr_increases_with_breathiness(frame_cfg):
    """Testa que o NHR cresce estritamente com a soprosidade, mesma frase e mesma semente."""
    nhr = [
        style_proxy_metrics(
            render_voice(SAMPLE_PHRASE, StyleParams(breathiness=b, vibrato_depth=0.0), frame_cfg, seed=5), frame_cfg
        ).nhr
        for b in (0.0, 0.2, 0.4, 0.6)
    ]

    assert all(a < b for a, b in zip(nhr, nhr[1:]))


def test_score_map(tiny_corpus):
    """Testa o mapa de partituras com o registro de cada estilo."""
    out, records, _ = tiny_corpus
    mapping = score_map(records, read_songs(out / SONGS_FILE))

    assert set(mapping) == {r.clip_id for r in records}
    assert mapping["song000_falsetto"][1] == 12
    assert mapping["song000_clear"][1] == 0
    assert score_map(records, {}) == {}
