"""
Análise determinística de sinal: E/S de WAV, mel-espectrograma, F0 (YIN),
quantização MIDI, loudness, coeficientes cepstrais e inversão por Griffin-Lim.

Todos os extratores usam o mesmo enquadramento sem centralização:
T = floor((len - fft_size) / hop) + 1, quadro t cobrindo [t*hop, t*hop + fft_size).
"""
import functools
import logging
import math
from pathlib import Path
from typing import Optional, Union

import librosa
import numpy as np
import soundfile as sf
from scipy.signal import firwin, medfilt, resample_poly

from serenade.pipeline.models.audio import (
    F0_MAX_HZ,
    F0_MIN_HZ,
    LOUDNESS_FLOOR_DB,
    F0Track,
    FrameConfig,
    LinguisticFeatures,
    LoudnessTrack,
    MelSpectrogram,
    MidiTrack,
    Waveform,
)
from serenade.pipeline.models.synth import SongSpec
from serenade.pipeline.utils.errors import InvalidInputError, MissingFileError, ShapeError
from serenade.pipeline.utils.formats import atomic_write, read_srnf

logger = logging.getLogger(__name__)

VOICING_THRESHOLD = 0.35
MEDIAN_WIDTH = 5
MIN_NOTE_SECONDS = 0.05
LINGUISTIC_ORDER = 13
GRIFFIN_LIM_ITERS = 60
# Zeros por lado do filtro de reamostragem (32 taps na taxa de entrada)
RESAMPLE_HALF_TAPS = 16
# Quadros com RMS abaixo disso são tratados como silêncio pelo YIN
SILENCE_RMS = 10.0 ** (LOUDNESS_FLOOR_DB / 20.0)


# ---------------------------------------------------------------------------
# Enquadramento
# ---------------------------------------------------------------------------

def frame_count(n_samples: int, cfg: FrameConfig) -> int:
    """Número de quadros T de um sinal com n_samples amostras."""
    if n_samples < cfg.fft_size:
        return 0
    return (n_samples - cfg.fft_size) // cfg.hop + 1


def _frames(wav: Waveform, cfg: FrameConfig) -> np.ndarray:
    if len(wav) < cfg.fft_size:
        raise ShapeError(f"forma de onda com {len(wav)} amostras é mais curta que fft_size={cfg.fft_size}")
    frames = librosa.util.frame(wav.samples, frame_length=cfg.fft_size, hop_length=cfg.hop, axis=0)
    return np.ascontiguousarray(frames)


@functools.lru_cache(maxsize=8)
def _mel_basis(cfg: FrameConfig) -> np.ndarray:
    return librosa.filters.mel(
        sr=cfg.sample_rate, n_fft=cfg.fft_size, n_mels=cfg.n_mels, fmin=cfg.fmin, fmax=cfg.fmax
    ).astype(np.float64)


def magnitude_spectrogram(wav: Waveform, cfg: FrameConfig) -> np.ndarray:
    """Magnitude da STFT com janela de Hann, forma (T, fft_size/2 + 1)."""
    if len(wav) < cfg.fft_size:
        raise ShapeError(f"forma de onda com {len(wav)} amostras é mais curta que fft_size={cfg.fft_size}")
    spec = librosa.stft(
        wav.samples, n_fft=cfg.fft_size, hop_length=cfg.hop, win_length=cfg.fft_size,
        window="hann", center=False,
    )
    return np.abs(spec).T


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------

def resample(samples: np.ndarray, orig_rate: int, target_rate: int) -> np.ndarray:
    """Reamostragem polifásica com filtro sinc janelado (Hann)."""
    if orig_rate == target_rate:
        return np.asarray(samples, dtype=np.float64)
    g = math.gcd(orig_rate, target_rate)
    up, down = target_rate // g, orig_rate // g
    max_rate = max(up, down)
    taps = firwin(2 * RESAMPLE_HALF_TAPS * max_rate + 1, 1.0 / max_rate, window="hann")
    return resample_poly(np.asarray(samples, dtype=np.float64), up, down, window=taps)


def load_wav(path: Union[str, Path], target_rate: int = 24000) -> Waveform:
    """
    Lê um WAV mono e reamostra para target_rate.

    Args:
        path: Caminho do arquivo.
        target_rate: Taxa de saída em Hz.

    Returns:
        Waveform na taxa pedida.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"WAV não encontrado: {path}")
    try:
        data, rate = sf.read(str(path), dtype="float64", always_2d=True)
    except RuntimeError as e:
        raise InvalidInputError(f"não foi possível ler {path}: {e}") from e
    if data.shape[1] != 1:
        raise InvalidInputError(f"{path}: somente áudio mono é suportado ({data.shape[1]} canais)")
    samples = resample(data[:, 0], rate, target_rate)
    return Waveform.from_array(samples, target_rate)


def save_wav(path: Union[str, Path], wav: Waveform) -> None:
    """Grava PCM 16 bits mono de forma atômica."""
    with atomic_write(path) as handle:
        sf.write(handle, wav.samples, wav.sample_rate, subtype="PCM_16", format="WAV")


# ---------------------------------------------------------------------------
# Mel
# ---------------------------------------------------------------------------

def stft_mel(wav: Waveform, cfg: FrameConfig) -> MelSpectrogram:
    """
    Log-mel natural de magnitude com piso em cfg.log_floor.

    Sem preenchimento nas bordas (center=False): o quadro t cobre as amostras
    [t·hop, t·hop + fft_size) e T = frame_count(len(wav), cfg). Um sinal mais
    curto que fft_size gera ShapeError.
    """
    mag = magnitude_spectrogram(wav, cfg)
    mel = mag @ _mel_basis(cfg).T
    log_mel = np.maximum(np.log(np.maximum(mel, 1e-12)), cfg.log_floor)
    return MelSpectrogram(data=log_mel, hop=cfg.hop, n_mels=cfg.n_mels)


def griffin_lim_invert(mel: MelSpectrogram, cfg: FrameConfig, iters: int = GRIFFIN_LIM_ITERS) -> Waveform:
    """
    Inverte um log-mel: pseudo-inversa não negativa do banco mel e
    recuperação de fase por Griffin-Lim (semente fixa).
    """
    if iters < 1:
        raise InvalidInputError("iters deve ser >= 1")
    magnitude = np.exp(mel.data)
    # células no piso representam energia nula
    magnitude[mel.data <= cfg.log_floor + 1e-6] = 0.0
    stft_mag = librosa.feature.inverse.mel_to_stft(
        magnitude.T, sr=cfg.sample_rate, n_fft=cfg.fft_size, power=1.0, fmin=cfg.fmin, fmax=cfg.fmax,
    )
    length = cfg.fft_size + cfg.hop * (mel.n_frames - 1)
    samples = librosa.griffinlim(
        stft_mag, n_iter=iters, hop_length=cfg.hop, win_length=cfg.fft_size, n_fft=cfg.fft_size,
        window="hann", center=False, length=length, random_state=0,
    )
    return Waveform.from_array(samples, cfg.sample_rate)


# ---------------------------------------------------------------------------
# F0
# ---------------------------------------------------------------------------

def _difference_function(frames: np.ndarray, tau_max: int) -> np.ndarray:
    """d(tau) = sum_j (x_j - x_{j+tau})^2 sobre uma janela de integração fixa."""
    n = frames.shape[1]
    window = n - tau_max
    energy = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    e0 = energy[:, window][:, None]
    taus = np.arange(tau_max + 1)
    e_tau = energy[:, taus + window] - energy[:, taus]
    size = 1 << (n + window).bit_length()
    head = np.fft.rfft(frames[:, :window], n=size, axis=1)
    full = np.fft.rfft(frames, n=size, axis=1)
    cross = np.fft.irfft(np.conj(head) * full, n=size, axis=1)[:, : tau_max + 1]
    return np.maximum(e0 + e_tau - 2.0 * cross, 0.0)


def _cmndf(df: np.ndarray) -> np.ndarray:
    out = np.empty_like(df)
    out[:, 0] = 1.0
    cs = np.cumsum(df[:, 1:], axis=1)
    out[:, 1:] = df[:, 1:] * np.arange(1, df.shape[1]) / np.where(cs > 0, cs, 1.0)
    return out


def _parabolic(arr: np.ndarray, idx: int) -> float:
    if idx <= 0 or idx >= len(arr) - 1:
        return float(idx)
    a, b, c = arr[idx - 1], arr[idx], arr[idx + 1]
    denom = a - 2.0 * b + c
    return float(idx) if denom == 0.0 else idx - 0.5 * (a - c) / denom


def extract_f0(wav: Waveform, cfg: FrameConfig) -> F0Track:
    """
    F0 por YIN: função diferença, normalização pela média cumulativa,
    limiar absoluto de periodicidade e filtro de mediana de 5 quadros.
    """
    frames = _frames(wav, cfg)
    sr = cfg.sample_rate
    tau_max = min(int(sr / F0_MIN_HZ), cfg.fft_size // 2)
    tau_min = max(2, int(sr / F0_MAX_HZ))
    cm = _cmndf(_difference_function(frames, tau_max))
    rms = np.sqrt(np.mean(frames ** 2, axis=1))

    f0 = np.zeros(frames.shape[0])
    for t in range(frames.shape[0]):
        if rms[t] < SILENCE_RMS:
            continue
        row = cm[t]
        below = np.nonzero(row[tau_min: tau_max + 1] < VOICING_THRESHOLD)[0]
        if below.size == 0:
            continue
        tau = int(below[0]) + tau_min
        # desce até o mínimo local do vale
        while tau + 1 <= tau_max and row[tau + 1] < row[tau]:
            tau += 1
        period = _parabolic(row, tau)
        if period <= 0:
            continue
        freq = sr / period
        if F0_MIN_HZ <= freq <= F0_MAX_HZ:
            f0[t] = freq

    if f0.size >= MEDIAN_WIDTH:
        f0 = medfilt(f0, MEDIAN_WIDTH)
    return F0Track(values=f0)


# ---------------------------------------------------------------------------
# MIDI
# ---------------------------------------------------------------------------

def hz_to_midi(f):
    """69 + 12*log2(f/440); aceita escalar ou array de frequências positivas."""
    arr = np.asarray(f, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise InvalidInputError("frequência deve ser positiva")
    midi = librosa.hz_to_midi(arr)
    return float(midi) if np.ndim(midi) == 0 else midi


def _segments(notes: np.ndarray):
    bounds = np.flatnonzero(np.diff(notes)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [notes.size]])
    return list(zip(starts.tolist(), ends.tolist()))


def _merge_short_segments(notes: np.ndarray, min_frames: int) -> np.ndarray:
    notes = notes.copy()
    while True:
        segments = _segments(notes)
        if len(segments) < 2:
            return notes
        lengths = [end - start for start, end in segments]
        short = [i for i, n in enumerate(lengths) if n < min_frames]
        if not short:
            return notes
        i = min(short, key=lambda k: (lengths[k], k))
        left = lengths[i - 1] if i > 0 else -1
        right = lengths[i + 1] if i + 1 < len(segments) else -1
        neighbour = i - 1 if left >= right else i + 1
        start, end = segments[i]
        notes[start:end] = notes[segments[neighbour][0]]


def midi_quantize(f0: F0Track, cfg: Optional[FrameConfig] = None) -> MidiTrack:
    """
    Arredonda cada quadro vozeado para a nota MIDI mais próxima e funde
    segmentos mais curtos que 50 ms no vizinho mais longo.
    """
    cfg = cfg or FrameConfig()
    notes = np.zeros(f0.n_frames, dtype=np.int64)
    voiced = f0.voiced
    if voiced.any():
        notes[voiced] = np.clip(np.round(hz_to_midi(f0.values[voiced])), 1, 127).astype(np.int64)
    min_frames = max(1, math.ceil(MIN_NOTE_SECONDS / cfg.frame_seconds - 1e-9))
    return MidiTrack(notes=_merge_short_segments(notes, min_frames))


def score_midi_track(spec: SongSpec, n_frames: int, cfg: FrameConfig, key_offset: int = 0) -> MidiTrack:
    """Trilha MIDI a partir da partitura, amostrada no centro de cada quadro."""
    centers = (np.arange(n_frames) * cfg.hop + cfg.fft_size / 2) / cfg.sample_rate
    boundaries = np.cumsum([d for _, d in spec.notes])
    pitches = np.array([m for m, _ in spec.notes]) + spec.key_offset + key_offset
    index = np.searchsorted(boundaries, centers, side="right")
    notes = np.zeros(n_frames, dtype=np.int64)
    inside = index < len(pitches)
    notes[inside] = np.clip(pitches[index[inside]], 0, 127)
    return MidiTrack(notes=notes)


# ---------------------------------------------------------------------------
# Loudness e linguístico
# ---------------------------------------------------------------------------

def extract_loudness(wav: Waveform, cfg: FrameConfig) -> LoudnessTrack:
    frames = _frames(wav, cfg)
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    db = 20.0 * np.log10(np.maximum(rms, 1e-12))
    return LoudnessTrack(values=np.clip(db, LOUDNESS_FLOOR_DB, 0.0))


def extract_linguistic(wav: Waveform, cfg: FrameConfig, order: int = LINGUISTIC_ORDER) -> LinguisticFeatures:
    """
    Cepstro real c1..c_order por quadro. O piso de magnitude é relativo ao
    pico do quadro, o que torna os coeficientes invariantes a ganho.
    """
    frames = _frames(wav, cfg) * librosa.filters.get_window("hann", cfg.fft_size, fftbins=True)
    mag = np.abs(np.fft.rfft(frames, axis=1))
    peak = mag.max(axis=1, keepdims=True)
    silent = peak[:, 0] <= 1e-10
    safe_peak = np.where(peak > 0, peak, 1.0)
    log_mag = np.log(np.maximum(mag, 1e-4 * safe_peak))
    cepstrum = np.fft.irfft(log_mag, n=cfg.fft_size, axis=1)[:, 1: order + 1]
    cepstrum[silent] = 0.0
    return LinguisticFeatures(data=cepstrum)


def load_external_linguistic(path: Union[str, Path], n_frames: int) -> LinguisticFeatures:
    """
    Lê coeficientes linguísticos calculados fora do toolkit (SRNF T×L).

    Uma diferença de até um quadro é resolvida cortando o excedente; o chamador
    corta as demais trilhas quando o arquivo tem um quadro a menos.
    """
    data = read_srnf(path)
    if abs(data.shape[0] - n_frames) > 1:
        raise ShapeError(f"{path}: {data.shape[0]} quadros para um mel de {n_frames}")
    return LinguisticFeatures(data=data[:n_frames])
