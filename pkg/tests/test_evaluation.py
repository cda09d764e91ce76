import numpy as np
import pytest

from serenade.pipeline.models.audio import F0Track, MelSpectrogram
from serenade.pipeline.models.evaluation import PairRecord
from serenade.pipeline.utils.checkpoint import init_checkpoint
from serenade.pipeline.utils.errors import InvalidInputError, ShapeError
from serenade.pipeline.utils.evaluation import (
    evaluate_conversion,
    expected_pair_count,
    f0_rmse_cents,
    fad_from_files,
    fixed_references,
    frechet_distance,
    mel_distance,
    nhr_distance,
    summarize,
    vuv_error,
)
from serenade.pipeline.utils.formats import write_srnf

SAMPLE_F0 = np.array([0.0, 220.0, 230.0, 240.0, 0.0, 250.0])


def _pair(**values) -> PairRecord:
    base = dict(source_clip_id="a", source_style="clear", target_style="breathy", reference_clip_id="b")
    base.update(values)
    return PairRecord(**base)


def test_f0_rmse_octave():
    """Testa que uma oitava acima dá exatamente 1200 cents."""
    a = F0Track(values=SAMPLE_F0 * 2.0)
    b = F0Track(values=SAMPLE_F0)

    assert f0_rmse_cents(a, b) == pytest.approx(1200.0)
    assert f0_rmse_cents(b, b) == 0.0


def test_f0_rmse_errors():
    """Testa trilhas sem vozeamento comum e com comprimentos distantes."""
    with pytest.raises(InvalidInputError):
        f0_rmse_cents(F0Track(values=np.zeros(6)), F0Track(values=SAMPLE_F0))
    with pytest.raises(ShapeError):
        f0_rmse_cents(F0Track(values=SAMPLE_F0), F0Track(values=SAMPLE_F0[:3]))


def test_vuv_error_with_one_frame_slack():
    """Testa a fração de decisões divergentes com um quadro a menos."""
    a = F0Track(values=SAMPLE_F0)
    b = F0Track(values=np.array([0.0, 220.0, 0.0, 240.0, 0.0]))

    # Verificar 1 divergência em 5 quadros comuns
    assert vuv_error(a, b) == pytest.approx(0.2)


def test_mel_distance():
    """Testa a diferença absoluta média por célula."""
    a = MelSpectrogram(data=np.zeros((10, 4)), n_mels=4)
    b = MelSpectrogram(data=np.full((11, 4), 0.5), n_mels=4)

    assert mel_distance(a, b) == pytest.approx(0.5)
    with pytest.raises(ShapeError):
        mel_distance(a, MelSpectrogram(data=np.zeros((10, 3)), n_mels=3))


def test_frechet_distance():
    """Testa a distância de Fréchet: conjunto igual e deslocamento da média."""
    rng = np.random.default_rng(0)
    emb = rng.standard_normal((200, 6))
    delta = np.array([1.0, -2.0, 0.0, 0.5, 0.0, 0.0])

    assert frechet_distance(emb, emb) == pytest.approx(0.0, abs=1e-6)
    assert frechet_distance(emb, emb + delta) == pytest.approx(float(delta @ delta), rel=1e-4)

    with pytest.raises(ShapeError):
        frechet_distance(emb, emb[:, :3])
    with pytest.raises(InvalidInputError):
        frechet_distance(emb[:1], emb)


def test_fad_from_files(tmp_path):
    """Testa o FAD entre dois diretórios de embeddings."""
    rng = np.random.default_rng(1)
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
    for i in range(20):
        clip = rng.standard_normal((5, 3))
        write_srnf(tmp_path / "a" / f"{i}.srnf", clip)
        write_srnf(tmp_path / "b" / f"{i}.srnf", clip + 3.0)

    # média por clipe deslocada de 3 em cada dimensão
    assert fad_from_files(tmp_path / "a", tmp_path / "b") == pytest.approx(27.0, rel=1e-3)

    (tmp_path / "empty").mkdir()
    with pytest.raises(InvalidInputError):
        fad_from_files(tmp_path / "a", tmp_path / "empty")


def test_expected_pair_count(tiny_corpus):
    """Testa clipes de teste x (estilos - 1)."""
    _, records, _ = tiny_corpus

    assert expected_pair_count(records) == 24
    assert expected_pair_count(records, ["song001"]) == 12


def test_fixed_references(tiny_corpus):
    """Testa que a referência de cada estilo vem de fora das canções de teste."""
    _, records, _ = tiny_corpus

    references = fixed_references(records, ["song001"])
    assert set(references) == {"clear", "breathy", "falsetto", "pressed"}
    assert all(r.song_id == "song000" for r in references.values())

    # Verificar o recurso quando todas as canções são de teste
    everything = fixed_references(records, ["song000", "song001"])
    assert everything["clear"].clip_id == "song000_clear"


def test_summarize():
    """Testa médias, contagens e as frações derivadas."""
    pairs = [
        _pair(mel_distance=1.0, style_proxy_distance_to_ref=0.1, style_proxy_distance_to_src=0.3),
        _pair(mel_distance=2.0, style_proxy_distance_to_ref=0.5, style_proxy_distance_to_src=0.2),
        _pair(error="falhou"),
    ]
    aggregates = summarize(pairs)

    assert aggregates["mel_distance"].mean == pytest.approx(1.5)
    assert aggregates["mel_distance"].count == 2
    assert aggregates["closer_to_reference"].mean == pytest.approx(0.5)
    assert "f0_rmse_cents" not in aggregates


def test_evaluate_conversion_pairs(tiny_corpus, frame_cfg, cfm_cfg):
    """Testa o protocolo todos-os-pares numa canção de teste."""
    _, records, features = tiny_corpus
    by_id = {f.clip_id: f for f in features}
    ckpt = init_checkpoint(frame_cfg.n_mels, cfm_cfg, 0)

    report = evaluate_conversion(records, by_id, ckpt, frame_cfg, euler_steps=2, griffin_lim_iters=2,
                                 test_songs=["song001"])

    assert len(report.records) == 12
    assert report.metadata["pairs"] == report.metadata["expected_pairs"] == "12"
    for pair in report.records:
        # Verificar que nenhum par converte para o próprio estilo
        assert pair.target_style != pair.source_style
        assert pair.source_clip_id.startswith("song001")
        assert pair.reference_clip_id.startswith("song000")


def test_evaluate_conversion_parallel_matches_serial(tiny_corpus, frame_cfg, cfm_cfg):
    """Testa que a avaliação em dois processos devolve os mesmos pares, na mesma ordem."""
    _, records, features = tiny_corpus
    by_id = {f.clip_id: f for f in features}
    ckpt = init_checkpoint(frame_cfg.n_mels, cfm_cfg, 0)

    serial = evaluate_conversion(records, by_id, ckpt, frame_cfg, euler_steps=2, griffin_lim_iters=2,
                                 test_songs=["song001"], jobs=1)
    parallel = evaluate_conversion(records, by_id, ckpt, frame_cfg, euler_steps=2, griffin_lim_iters=2,
                                   test_songs=["song001"], jobs=2)

    assert len(parallel.records) == len(serial.records) == 12
    for a, b in zip(serial.records, parallel.records):
        assert (a.source_clip_id, a.target_style, a.reference_clip_id) == \
            (b.source_clip_id, b.target_style, b.reference_clip_id)
        assert a.ok == b.ok
        # Verificar o mel convertido: a semente do par não depende do processo
        if a.mel_distance is not None:
            assert b.mel_distance == pytest.approx(a.mel_distance, rel=1e-4)


def test_nhr_distance_is_linear():
    """Testa que uma saída de NHR 0.06 fica mais perto do claro (0.01) que do soproso (0.3)."""
    clear, breathy, output = 0.01, 0.3, 0.06

    assert nhr_distance(output, clear) == pytest.approx(0.05)
    assert nhr_distance(output, breathy) == pytest.approx(0.24)
    assert nhr_distance(output, clear) < nhr_distance(output, breathy)

    # Verificar o resumo: o par não conta como próximo da referência soprosa
    pair = _pair(style_proxy_distance_to_ref=nhr_distance(output, breathy),
                 style_proxy_distance_to_src=nhr_distance(output, clear))
    assert summarize([pair])["closer_to_reference"].mean == 0.0
