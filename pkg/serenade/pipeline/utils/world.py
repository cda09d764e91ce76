"""
Vocoder fonte-filtro no estilo WORLD: análise ⟨F0, mcep, bap⟩, síntese por
excitação harmônica + ruído, deslocamento média-variância de F0, a troca de F0
do pós-processamento e o aumento de dados por deslocamento de tom.
"""
import logging
from pathlib import Path
from typing import List, Sequence

import librosa
import numpy as np
import pysptk
from scipy.ndimage import uniform_filter1d

from serenade.pipeline.models.audio import F0_MAX_HZ, F0_MIN_HZ, LOG_FLOOR, F0Track, FrameConfig, Waveform
from serenade.pipeline.models.infill import CorpusRecord
from serenade.pipeline.models.world import BAP_BANDS_HZ, MCEP_ORDER, F0Stats, WorldFeatures
from serenade.pipeline.utils.dsp import extract_f0, load_wav, magnitude_spectrogram, save_wav
from serenade.pipeline.utils.errors import InvalidInputError, ShapeError

logger = logging.getLogger(__name__)

# c0 do mel-cepstro de um quadro silencioso fica no piso do log-mel
ENVELOPE_FLOOR = float(np.exp(2.0 * LOG_FLOOR))
UNVOICED_SMOOTHING_BINS = 9
NOISE_SEED = 0


def _alpha(cfg: FrameConfig) -> float:
    return float(pysptk.util.mcepalpha(cfg.sample_rate))


def _bin_frequencies(cfg: FrameConfig) -> np.ndarray:
    return np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate / cfg.fft_size


def _band_index(cfg: FrameConfig) -> np.ndarray:
    """Banda de aperiodicidade de cada bin; acima da última banda usa a última."""
    freqs = _bin_frequencies(cfg)
    edges = np.array([high for _, high in BAP_BANDS_HZ[:-1]])
    return np.searchsorted(edges, freqs, side="right")


def _harmonic_distance(f0: float, cfg: FrameConfig) -> np.ndarray:
    """Distância, em bins, de cada bin ao harmônico mais próximo."""
    spacing = f0 * cfg.fft_size / cfg.sample_rate
    position = np.arange(cfg.fft_size // 2 + 1) / spacing
    nearest = np.maximum(np.round(position), 1.0)
    return np.abs(position - nearest) * spacing


def _voiced_envelope(power: np.ndarray, f0: float, cfg: FrameConfig) -> np.ndarray:
    """Envelope por interpolação log-linear dos picos harmônicos."""
    nyquist = cfg.sample_rate / 2
    bin_hz = cfg.sample_rate / cfg.fft_size
    harmonics = np.arange(1, int(nyquist / f0) + 1) * f0
    centers = np.round(harmonics / bin_hz).astype(int)
    peaks = np.empty(len(harmonics))
    for i, c in enumerate(centers):
        lo, hi = max(c - 1, 0), min(c + 2, len(power))
        peaks[i] = power[lo:hi].max()
    log_peaks = np.log(np.maximum(peaks, ENVELOPE_FLOOR))
    return np.exp(np.interp(_bin_frequencies(cfg), harmonics, log_peaks))


def _voiced_aperiodicity(power: np.ndarray, f0: float, cfg: FrameConfig, bands: np.ndarray) -> np.ndarray:
    """
    Razão ruído/(ruído + pico harmônico) por banda. O ruído é a densidade média
    dos bins fora do lóbulo principal de qualquer harmônico.
    """
    distance = _harmonic_distance(f0, cfg)
    noise_bins = distance >= 2.0
    peak_bins = distance <= 0.5
    bap = np.ones(len(BAP_BANDS_HZ))
    for b in range(len(BAP_BANDS_HZ)):
        in_band = bands == b
        noise_sel = in_band & noise_bins
        peak_sel = in_band & peak_bins
        if not noise_sel.any() or not peak_sel.any():
            continue
        noise = power[noise_sel].mean()
        harmonic = max(power[peak_sel].mean() - noise, 0.0)
        total = noise + harmonic
        bap[b] = noise / total if total > 0 else 1.0
    return np.clip(bap, 0.0, 1.0)


def world_analyze(wav: Waveform, cfg: FrameConfig) -> WorldFeatures:
    """
    Extrai F0 (YIN), mel-cepstro de ordem 24 do envelope e aperiodicidade em 4 bandas.

    Quadros vozeados usam o envelope síncrono com o pitch; quadros não vozeados,
    o espectro de potência suavizado.
    """
    f0 = extract_f0(wav, cfg)
    power = magnitude_spectrogram(wav, cfg) ** 2
    bands = _band_index(cfg)
    smoothed = uniform_filter1d(power, size=UNVOICED_SMOOTHING_BINS, axis=1, mode="nearest")

    envelope = np.empty_like(power)
    bap = np.ones((power.shape[0], len(BAP_BANDS_HZ)))
    for t, freq in enumerate(f0.values):
        if freq > 0:
            envelope[t] = _voiced_envelope(power[t], freq, cfg)
            bap[t] = _voiced_aperiodicity(power[t], freq, cfg, bands)
        else:
            envelope[t] = smoothed[t]
    envelope = np.maximum(envelope, ENVELOPE_FLOOR)
    mcep = pysptk.sp2mc(envelope, order=MCEP_ORDER, alpha=_alpha(cfg))
    return WorldFeatures(f0=f0, mcep=mcep, bap=bap)


def _taper(samples: np.ndarray, length: int) -> np.ndarray:
    """Rampa de meia janela de Hann nas bordas, onde a soma de janelas da ISTFT se anula."""
    if length < 1 or samples.size < 2 * length:
        return samples
    ramp = np.sin(0.5 * np.pi * (np.arange(length) + 0.5) / length) ** 2
    samples[:length] *= ramp
    samples[-length:] *= ramp[::-1]
    return samples


def _harmonic_excitation(f0: np.ndarray, length: int, cfg: FrameConfig) -> np.ndarray:
    """Trem de pulsos limitado em banda: soma de cossenos de amplitude unitária."""
    voiced = f0 > 0
    excitation = np.zeros(length)
    if not voiced.any():
        return excitation
    centers = np.arange(f0.size) * cfg.hop + cfg.fft_size / 2
    per_sample = np.interp(np.arange(length), centers[voiced], f0[voiced])
    phase = 2.0 * np.pi * np.cumsum(per_sample) / cfg.sample_rate
    nyquist = cfg.sample_rate / 2
    for k in range(1, int(nyquist / per_sample.min()) + 1):
        active = k * per_sample < nyquist
        if not active.any():
            break
        excitation += np.where(active, np.cos(k * phase), 0.0)
    return excitation


def world_synthesize(feat: WorldFeatures, cfg: FrameConfig) -> Waveform:
    """
    Sintetiza a forma de onda: excitações harmônica e de ruído filtradas pelo
    envelope do mcep e misturadas por banda conforme o bap.
    """
    n_frames = feat.n_frames
    if n_frames == 0:
        return Waveform(samples=np.zeros(0), sample_rate=cfg.sample_rate)
    n_fft, hop = cfg.fft_size, cfg.hop
    length = n_fft + hop * (n_frames - 1)
    window = librosa.filters.get_window("hann", n_fft, fftbins=True)
    stft = dict(n_fft=n_fft, hop_length=hop, win_length=n_fft, window="hann", center=False)

    f0 = feat.f0.values
    harmonic = librosa.stft(_harmonic_excitation(f0, length, cfg), **stft) * (4.0 / n_fft)
    rng = np.random.default_rng(NOISE_SEED)
    noise = librosa.stft(rng.standard_normal(length) / np.sqrt(np.sum(window ** 2)), **stft)

    envelope = pysptk.mc2sp(np.ascontiguousarray(feat.mcep), _alpha(cfg), n_fft)
    aperiodicity = feat.bap[:, _band_index(cfg)]
    aperiodicity[f0 <= 0] = 1.0

    spectrum = np.sqrt(envelope).T * (np.sqrt(1.0 - aperiodicity).T * harmonic + np.sqrt(aperiodicity).T * noise)
    samples = librosa.istft(spectrum, hop_length=hop, win_length=n_fft, n_fft=n_fft, window="hann",
                            center=False, length=length)
    return Waveform.from_array(_taper(samples, hop // 4), cfg.sample_rate)


def f0_stats(f0: F0Track) -> F0Stats:
    """Média e desvio padrão (populacional) de ln F0 nos quadros vozeados."""
    voiced = f0.values[f0.voiced]
    if voiced.size < 2:
        raise InvalidInputError(f"são necessários ao menos 2 quadros vozeados, encontrados {voiced.size}")
    log_f0 = np.log(voiced)
    return F0Stats(mean_logf0=float(log_f0.mean()), std_logf0=float(log_f0.std()), voiced_count=int(voiced.size))


def mean_variance_shift_f0(src: F0Track, ref_stats: F0Stats) -> F0Track:
    """
    Desloca ln F0 da fonte para a média e o desvio da referência; quadros não
    vozeados ficam em 0.

    Cada quadro deslocado é limitado a [F0_MIN_HZ, F0_MAX_HZ]. As estatísticas
    da saída só igualam `ref_stats` quando nenhum quadro cai fora da faixa; os
    que caem ficam presos no limite.
    """
    stats = f0_stats(src)
    scale = ref_stats.std_logf0 / stats.std_logf0 if stats.std_logf0 > 0 else 0.0
    out = np.zeros_like(src.values)
    voiced = src.voiced
    log_f0 = ref_stats.mean_logf0 + (np.log(src.values[voiced]) - stats.mean_logf0) * scale
    out[voiced] = np.clip(np.exp(log_f0), F0_MIN_HZ, F0_MAX_HZ)
    return F0Track(values=out)


def postprocess_swap(src_wav: Waveform, cvt_wav: Waveform, ref_stats: F0Stats, cfg: FrameConfig) -> Waveform:
    """
    Ressintetiza com ⟨F0 da fonte deslocado, mcep convertido, bap convertido⟩,
    corrigindo a melodia da saída convertida.
    """
    src = world_analyze(src_wav, cfg)
    cvt = world_analyze(cvt_wav, cfg)
    if abs(src.n_frames - cvt.n_frames) > 1:
        raise ShapeError(f"fonte com {src.n_frames} quadros e convertido com {cvt.n_frames}")
    n_frames = min(src.n_frames, cvt.n_frames)
    if n_frames == 0:
        raise ShapeError("sem sobreposição entre fonte e convertido")
    shifted = mean_variance_shift_f0(F0Track(values=src.f0.values[:n_frames]), ref_stats)
    swapped = WorldFeatures(f0=shifted, mcep=cvt.mcep[:n_frames], bap=cvt.bap[:n_frames])
    return world_synthesize(swapped, cfg)


def pitch_shift_augment(wav: Waveform, semitones: int, cfg: FrameConfig) -> Waveform:
    """Desloca o F0 vozeado por 2^(k/12) e ressintetiza com o envelope original."""
    if int(semitones) != semitones or not -12 <= semitones <= 12:
        raise InvalidInputError(f"semitons devem ser inteiros em [-12, 12], recebido {semitones}")
    feat = world_analyze(wav, cfg)
    values = feat.f0.values.copy()
    voiced = values > 0
    values[voiced] = np.clip(values[voiced] * 2.0 ** (semitones / 12.0), F0_MIN_HZ, F0_MAX_HZ)
    shifted = WorldFeatures(f0=F0Track(values=values), mcep=feat.mcep, bap=feat.bap)
    return world_synthesize(shifted, cfg)


def augment_corpus(records: Sequence[CorpusRecord], out_dir: Path, semitones: Sequence[int],
                   cfg: FrameConfig) -> List[CorpusRecord]:
    """
    Gera cópias deslocadas em tom de cada clipe do corpus.

    Returns:
        Registros novos, com o estilo do clipe de origem; song_id e phrase_id
        recebem o sufixo +k/-k, já que a tonalidade mudou.
    """
    out_dir = Path(out_dir)
    augmented = []
    for record in records:
        wav = load_wav(record.wav_path, cfg.sample_rate)
        for k in semitones:
            if k == 0:
                continue
            suffix = f"{k:+d}"
            clip_id = f"{record.clip_id}{suffix}"
            path = out_dir / f"{clip_id}.wav"
            save_wav(path, pitch_shift_augment(wav, k, cfg))
            augmented.append(CorpusRecord(
                clip_id=clip_id,
                wav_path=str(path),
                style=record.style,
                song_id=f"{record.song_id}{suffix}",
                phrase_id=f"{record.phrase_id}{suffix}",
            ))
        logger.debug("clipe %s aumentado em %d tons", record.clip_id, len(semitones))
    return augmented
