import pytest

from serenade.pipeline.models.audio import FrameConfig
from serenade.pipeline.models.flow import CFMConfig
from serenade.pipeline.models.synth import SongSpec, StyleParams
from serenade.pipeline.utils.features import extract_corpus
from serenade.pipeline.utils.synthdata import default_styles, make_corpus, render_voice

# Modelo reduzido para os testes rápidos
SAMPLE_CFM = CFMConfig(channels=16, style_dim=8, attention_head_dim=8, n_style_tokens=4)
SAMPLE_SONG = SongSpec(notes=[(57, 0.4), (60, 0.4), (62, 0.5)])
SAMPLE_NOTE = SongSpec(notes=[(57, 1.5)])
SAMPLE_STYLE = StyleParams(name="clear", breathiness=0.05, vibrato_depth=20.0)


@pytest.fixture(scope="session")
def frame_cfg():
    return FrameConfig()


@pytest.fixture(scope="session")
def cfm_cfg():
    return SAMPLE_CFM


@pytest.fixture(scope="session")
def sample_wav(frame_cfg):
    """Frase curta de três notas no estilo claro."""
    return render_voice(SAMPLE_SONG, SAMPLE_STYLE, frame_cfg, seed=1)


@pytest.fixture(scope="session")
def sustained_wav(frame_cfg):
    """Uma nota sustentada com vibrato, sem transições."""
    return render_voice(SAMPLE_NOTE, SAMPLE_STYLE, frame_cfg, seed=2)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory, frame_cfg):
    """Corpus sintético de 2 canções x 4 estilos, com trilhas extraídas."""
    out = tmp_path_factory.mktemp("corpus")
    records = make_corpus(2, default_styles(), out, frame_cfg, seed=0)
    features = extract_corpus(records, frame_cfg, cache_dir=out / "cache")
    return out, records, features
