"""
Critérios de aceitação de ponta a ponta. Treinam o modelo completo em CPU e
levam dezenas de minutos; rode com `pytest -m slow`.
"""
import numpy as np
import pytest
from scipy.signal import sawtooth

from serenade.pipeline.models.audio import FrameConfig, Waveform
from serenade.pipeline.models.flow import CFMConfig
from serenade.pipeline.models.infill import Mask
from serenade.pipeline.models.synth import SongSpec, StyleParams
from serenade.pipeline.utils.checkpoint import init_checkpoint, load_checkpoint, save_checkpoint
from serenade.pipeline.utils.dsp import extract_f0, griffin_lim_invert, load_wav, stft_mel
from serenade.pipeline.utils.evaluation import evaluate_conversion, expected_pair_count
from serenade.pipeline.utils.features import extract_corpus
from serenade.pipeline.utils.formatter import ReportFormatter
from serenade.pipeline.utils.infill import (
    convert_features,
    evaluate_loss,
    finetune_cyclic,
    generate_cyclic_set,
    natural_items,
    reconstruct_masked,
    train,
)
from serenade.pipeline.utils.synthdata import default_styles, make_corpus, render_voice, style_proxy_metrics
from serenade.pipeline.utils.world import pitch_shift_augment, world_analyze, world_synthesize

pytestmark = pytest.mark.slow

SAMPLE_RATE = 24000
TRAIN_STEPS = 2000
FINETUNE_STEPS = 500


def _saw(freq: float, seconds: float = 1.0) -> Waveform:
    t = np.arange(int(seconds * SAMPLE_RATE)) / SAMPLE_RATE
    return Waveform.from_array(0.3 * sawtooth(2.0 * np.pi * freq * t), SAMPLE_RATE)


def _rmse_cents(a: np.ndarray, b: np.ndarray) -> float:
    n = min(a.size, b.size)
    both = (a[:n] > 0) & (b[:n] > 0)
    return float(np.sqrt(np.mean((1200.0 * np.log2(a[:n][both] / b[:n][both])) ** 2)))


@pytest.fixture(scope="module")
def cfg():
    return FrameConfig()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory, cfg):
    """Corpus de 5 canções x 4 estilos com trilhas extraídas."""
    out = tmp_path_factory.mktemp("acceptance")
    records = make_corpus(5, default_styles(), out, cfg, seed=0)
    features = extract_corpus(records, cfg, cache_dir=out / "cache")
    return out, records, features


@pytest.fixture(scope="module")
def trained(corpus, cfg):
    _, records, features = corpus
    ckpt = init_checkpoint(cfg.n_mels, CFMConfig(), seed=0)
    return train(natural_items(records, features), ckpt, TRAIN_STEPS, batch_size=4, log_every=200)


def test_extract_f0_sawtooth(cfg):
    """Testa o YIN numa dente de serra de 220 Hz."""
    f0 = extract_f0(_saw(220.0), cfg)

    assert abs(np.median(f0.values[f0.voiced]) - 220.0) <= 1.0


def test_griffin_lim_roundtrip(corpus, cfg):
    """Testa mel -> Griffin-Lim -> mel nos clipes do corpus."""
    _, _, features = corpus
    for clip in features[:4]:
        wav = griffin_lim_invert(clip.mel, cfg)
        again = stft_mel(wav, cfg)
        n = min(again.n_frames, clip.n_frames)
        assert np.mean(np.abs(again.data[:n] - clip.mel.data[:n])) < 0.35


def test_world_roundtrip_on_corpus(corpus, cfg):
    """Testa análise e síntese em 20 clipes sintéticos: < 5 cents e < 5% de V/UV."""
    _, _, features = corpus
    for clip in features:
        wav = world_synthesize(world_analyze(_clip_wav(corpus, clip.clip_id), cfg), cfg)
        f0 = extract_f0(wav, cfg)
        assert _rmse_cents(f0.values, clip.f0.values) < 5.0
        n = min(f0.n_frames, clip.n_frames)
        assert np.mean(f0.voiced[:n] != clip.f0.voiced[:n]) < 0.05


def _clip_wav(corpus, clip_id: str) -> Waveform:
    _, records, _ = corpus
    record = next(r for r in records if r.clip_id == clip_id)
    return load_wav(record.wav_path, SAMPLE_RATE)


@pytest.mark.parametrize("semitones", [-4, 2, 4])
def test_pitch_shift_there_and_back(cfg, semitones):
    """Testa +k seguido de -k: < 5 cents."""
    wav = render_voice(SongSpec(notes=[(57, 1.5)]), StyleParams(name="plain"), cfg, seed=0)
    restored = pitch_shift_augment(pitch_shift_augment(wav, semitones, cfg), -semitones, cfg)

    assert _rmse_cents(extract_f0(restored, cfg).values, extract_f0(wav, cfg).values) < 5.0


def test_style_proxy_oracles(cfg):
    """Testa NHR de render harmônico puro e vibrato de 100 cents."""
    pure = render_voice(SongSpec(notes=[(57, 2.0)]), StyleParams(name="pure"), cfg, seed=0)
    vibrato = render_voice(SongSpec(notes=[(57, 2.0)]), StyleParams(name="vib", vibrato_depth=100.0), cfg, seed=0)

    assert style_proxy_metrics(pure, cfg).nhr < 0.1
    assert abs(style_proxy_metrics(vibrato, cfg).vibrato_depth_cents - 100.0) <= 20.0


def test_training_converges(trained, corpus):
    """Testa a queda de 50% da perda e a reconstrução contra a linha de base."""
    _, records, features = corpus
    history = np.asarray(trained.loss_history)
    assert history[-100:].mean() < 0.5 * history[:100].mean()

    wins = 0
    items = natural_items(records, features)
    for i, item in enumerate(items[:8]):
        span = item.n_frames // 2
        mask = Mask(length=item.n_frames, start=item.n_frames // 4, end=item.n_frames // 4 + span)
        result = reconstruct_masked(trained, item, mask, seed=i)
        wins += result.model_distance < result.baseline_distance
    assert wins > 4


def test_cyclic_finetune_and_conversion(trained, corpus, cfg, tmp_path):
    """
    Testa o ajuste fino cíclico (perda cíclica cai, perda natural sobe menos
    de 1.5x) e a conversão clara <-> soprosa medida pelo NHR.
    """
    _, records, features = corpus
    by_id = {f.clip_id: f for f in features}
    natural = natural_items(records, features)
    cyclic, _ = generate_cyclic_set(trained, records, by_id, tmp_path / "cyclic", cfg, seed=0)
    assert len(cyclic) >= 10

    held_out, used = cyclic[::2], cyclic[1::2]
    cyclic_before = evaluate_loss(trained, held_out, seed=1)
    natural_before = evaluate_loss(trained, natural, seed=1)
    # cópia: o ajuste fino altera o checkpoint no lugar
    save_checkpoint(tmp_path / "trained.srnc", trained)
    tuned = finetune_cyclic(load_checkpoint(tmp_path / "trained.srnc"), natural, used, FINETUNE_STEPS, log_every=100)

    assert evaluate_loss(tuned, held_out, seed=1) < cyclic_before
    assert evaluate_loss(tuned, natural, seed=1) <= 1.5 * natural_before

    # Verificar a conversão entre os estilos claro e soproso
    pair_records = [r for r in records if r.style in ("clear", "breathy")]
    report = evaluate_conversion(pair_records, by_id, tuned, cfg)
    closer = [p.style_proxy_distance_to_ref < p.style_proxy_distance_to_src for p in report.records if p.ok]
    assert len(closer) == len(pair_records)
    assert np.mean(closer) >= 0.7


def test_postprocess_corrects_melody(trained, corpus, cfg):
    """Testa que a troca de F0 reduz o erro de melodia em todos os pares."""
    _, records, features = corpus
    by_id = {f.clip_id: f for f in features}
    report = evaluate_conversion(records, by_id, trained, cfg, postprocess=True, test_songs=["song004"])

    assert len(report.records) == expected_pair_count(records, ["song004"]) == 12
    margins = [p.f0_rmse_cents_unprocessed - p.f0_rmse_cents for p in report.records]
    assert all(m > 0 for m in margins)
    assert np.mean(margins) >= 1.0


def test_pipeline_is_deterministic(corpus, cfg, tmp_path):
    """Testa que duas execuções com a mesma semente são idênticas bit a bit."""
    _, records, features = corpus
    by_id = {f.clip_id: f for f in features}
    small = CFMConfig(channels=16, style_dim=8)
    outputs = []
    for run in ("a", "b"):
        ckpt = train(natural_items(records, features), init_checkpoint(cfg.n_mels, small, seed=3), 20, log_every=0)
        path = tmp_path / f"{run}.srnc"
        save_checkpoint(path, ckpt)
        mel = convert_features(ckpt, features[0], features[1], steps=4, seed=0)
        report = evaluate_conversion(records, by_id, ckpt, cfg, euler_steps=4, griffin_lim_iters=4,
                                     test_songs=["song000"])
        outputs.append((path.read_bytes(), mel.data.tobytes(), ReportFormatter.format_report(report)))

    assert outputs[0] == outputs[1]
