from unittest.mock import patch

import numpy as np
import pytest

from serenade.pipeline.models.audio import Waveform
from serenade.pipeline.models.infill import CorpusRecord
from serenade.pipeline.models.synth import SongSpec
from serenade.pipeline.utils import features as features_module
from serenade.pipeline.utils.dsp import frame_count, save_wav
from serenade.pipeline.utils.features import extract_corpus, source_digest
from serenade.pipeline.utils.formats import write_srnf

SAMPLE_SCORE = SongSpec(notes=[(57, 0.4), (60, 0.4), (62, 0.5)])


@pytest.fixture
def record(tmp_path, sample_wav):
    path = tmp_path / "wavs" / "song000_clear.wav"
    path.parent.mkdir()
    save_wav(path, sample_wav)
    return CorpusRecord(clip_id="song000_clear", wav_path=str(path), style="clear", song_id="song000",
                        phrase_id="p0")


def _extract(record, cfg, cache_dir, **kwargs):
    """Extrai um clipe e devolve (trilhas, número de extrações feitas)."""
    with patch.object(features_module, "_extract_record", wraps=features_module._extract_record) as spy:
        result = extract_corpus([record], cfg, cache_dir=cache_dir, **kwargs)
    return result[0], spy.call_count


def _linguistic_dir(tmp_path, name, record, cfg, sample_wav, value):
    directory = tmp_path / name
    n_frames = frame_count(len(sample_wav), cfg)
    write_srnf(directory / f"{record.clip_id}.srnf", np.full((n_frames, 4), value))
    return str(directory)


def test_cache_hit_skips_extraction(tmp_path, record, frame_cfg):
    """Testa que a segunda execução com as mesmas entradas lê tudo do cache."""
    cache = tmp_path / "cache"
    first, calls = _extract(record, frame_cfg, cache)
    assert calls == 1

    again, calls = _extract(record, frame_cfg, cache)
    assert calls == 0
    assert np.array_equal(first.mel.data, again.mel.data)
    assert np.array_equal(first.f0.values, again.f0.values)


def test_linguistic_dir_change_reextracts(tmp_path, record, frame_cfg, sample_wav):
    """Testa que trocar o diretório linguístico invalida o cache do clipe."""
    cache = tmp_path / "cache"
    first_dir = _linguistic_dir(tmp_path, "ling_a", record, frame_cfg, sample_wav, 0.25)
    second_dir = _linguistic_dir(tmp_path, "ling_b", record, frame_cfg, sample_wav, 0.75)

    _, calls = _extract(record, frame_cfg, cache)
    assert calls == 1

    # Verificar que o linguístico externo substitui o calculado do áudio
    features, calls = _extract(record, frame_cfg, cache, linguistic_dir=first_dir)
    assert calls == 1
    assert np.allclose(features.linguistic.data, 0.25)

    features, calls = _extract(record, frame_cfg, cache, linguistic_dir=second_dir)
    assert calls == 1
    assert np.allclose(features.linguistic.data, 0.75)

    # Verificar que o mesmo diretório volta a vir do cache
    features, calls = _extract(record, frame_cfg, cache, linguistic_dir=second_dir)
    assert calls == 0
    assert np.allclose(features.linguistic.data, 0.75)


def test_midi_source_and_offset_change_reextracts(tmp_path, record, frame_cfg):
    """Testa que MIDI de partitura e deslocamento de registro entram na chave do cache."""
    cache = tmp_path / "cache"
    from_audio, calls = _extract(record, frame_cfg, cache)
    assert calls == 1

    from_score, calls = _extract(record, frame_cfg, cache, scores={record.clip_id: (SAMPLE_SCORE, 0)})
    assert calls == 1
    assert from_score.midi.notes[0] == 57

    shifted, calls = _extract(record, frame_cfg, cache, scores={record.clip_id: (SAMPLE_SCORE, 12)})
    assert calls == 1
    assert shifted.midi.notes[0] == 69

    # Verificar a volta ao MIDI do áudio
    _, calls = _extract(record, frame_cfg, cache)
    assert calls == 1


def test_wav_change_reextracts(tmp_path, record, frame_cfg, sample_wav):
    """Testa que regravar o WAV com outro conteúdo invalida o cache."""
    cache = tmp_path / "cache"
    before, _ = _extract(record, frame_cfg, cache)

    quieter = Waveform(samples=sample_wav.samples * 0.5, sample_rate=sample_wav.sample_rate)
    save_wav(record.wav_path, quieter)
    after, calls = _extract(record, frame_cfg, cache)

    assert calls == 1
    assert after.loudness.values.mean() < before.loudness.values.mean()


def test_source_digest(tmp_path, record, frame_cfg):
    """Testa a impressão: 32 bytes estáveis, None para WAV ausente."""
    digest = source_digest(record, frame_cfg)

    assert digest.shape == (1, 32)
    assert digest.min() >= 0 and digest.max() <= 255
    assert np.array_equal(digest, source_digest(record, frame_cfg))
    assert not np.array_equal(digest, source_digest(record, frame_cfg, SAMPLE_SCORE, 0))

    missing = record.model_copy(update={"wav_path": str(tmp_path / "missing.wav")})
    assert source_digest(missing, frame_cfg) is None
