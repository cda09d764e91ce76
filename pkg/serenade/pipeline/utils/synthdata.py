"""
Corpus sintético de canto com estilos paramétricos e mensuráveis, e as
medidas objetivas (NHR, vibrato, inclinação espectral) usadas como proxy de
similaridade de estilo.
"""
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import librosa
import numpy as np
from scipy.signal import butter, medfilt, sosfiltfilt

from serenade.pipeline.models.audio import FrameConfig, Waveform
from serenade.pipeline.models.infill import MIN_CONVERSION_SECONDS, CorpusRecord
from serenade.pipeline.models.synth import SongSpec, StyleParams, StyleProxy
from serenade.pipeline.utils.dsp import extract_f0, magnitude_spectrogram, save_wav
from serenade.pipeline.utils.errors import InvalidInputError
from serenade.pipeline.utils.formats import write_manifest, write_songs

logger = logging.getLogger(__name__)

# Envelope fixo de três formantes: (frequência, largura de banda) em Hz
FORMANTS = ((600.0, 90.0), (1200.0, 110.0), (2600.0, 160.0))
FORMANT_FLOOR = 0.02
TILT_REFERENCE_HZ = 500.0
TARGET_RMS_DBFS = -18.0
PEAK_LIMIT = 0.99
FADE_SECONDS = 0.03

NOTE_RANGE = (52, 66)
NOTE_SECONDS = (0.25, 0.6)
NOTES_PER_SONG = (6, 10)

MIN_VOICED_FRACTION = 0.1
VIBRATO_BAND_HZ = (4.0, 8.0)
VIBRATO_DETREND_FRAMES = 31
HARMONIC_ZONE_BINS = 2.0
TILT_BAND_HZ = (100.0, 8000.0)

MANIFEST_FILE = "manifest.tsv"
SONGS_FILE = "songs.tsv"


def default_styles() -> List[StyleParams]:
    """Os quatro estilos de referência do corpus sintético."""
    return [
        StyleParams(name="clear", breathiness=0.05, vibrato_depth=20.0),
        StyleParams(name="breathy", breathiness=0.5, vibrato_depth=20.0),
        StyleParams(name="falsetto", breathiness=0.2, tilt=-12.0, key_offset=12),
        StyleParams(name="pressed", breathiness=0.05, tilt=6.0, vibrato_depth=60.0),
    ]


def _envelope(freqs: np.ndarray, tilt: float) -> np.ndarray:
    """Ganho de amplitude: soma de ressonâncias mais inclinação em dB/oitava."""
    gain = np.full_like(freqs, FORMANT_FLOOR, dtype=np.float64)
    for center, bandwidth in FORMANTS:
        gain += 1.0 / (1.0 + ((freqs - center) / bandwidth) ** 2)
    octaves = np.log2(np.maximum(freqs, 1.0) / TILT_REFERENCE_HZ)
    return gain * 10.0 ** (tilt * octaves / 20.0)


def _f0_contour(spec: SongSpec, style: StyleParams, sample_rate: int) -> np.ndarray:
    """F0 por amostra: notas da partitura com vibrato senoidal em cents."""
    offset = spec.key_offset + style.key_offset
    pieces = []
    for midi, duration in spec.notes:
        n = int(round(duration * sample_rate))
        pieces.append(np.full(n, librosa.midi_to_hz(midi + offset)))
    f0 = np.concatenate(pieces)
    if style.vibrato_depth > 0 and style.vibrato_rate > 0:
        t = np.arange(f0.size) / sample_rate
        cents = style.vibrato_depth * np.sin(2.0 * math.pi * style.vibrato_rate * t)
        f0 = f0 * 2.0 ** (cents / 1200.0)
    return f0


def _fades(n: int, sample_rate: int) -> np.ndarray:
    ramp = min(int(FADE_SECONDS * sample_rate), n // 2)
    gain = np.ones(n)
    if ramp > 0:
        gain[:ramp] = np.linspace(0.0, 1.0, ramp)
        gain[n - ramp:] = np.linspace(1.0, 0.0, ramp)
    return gain


def render_voice(spec: SongSpec, style: StyleParams, cfg: FrameConfig, seed: int = 0) -> Waveform:
    """
    Sintetiza uma frase cantada.

    A fonte harmônica (trem de pulsos na F0 da nota, com vibrato) e o ruído
    branco passam pelo mesmo envelope de formantes com inclinação. O ruído
    entra com RMS = breathiness × RMS harmônico. O resultado é normalizado
    para -18 dBFS RMS, com pico limitado, e recebe rampas de 30 ms nas pontas.

    Args:
        spec: Partitura.
        style: Estilo.
        cfg: Enquadramento (usa a taxa de amostragem).
        seed: Semente do ruído.
    """
    sr = cfg.sample_rate
    f0 = _f0_contour(spec, style, sr)
    phase = 2.0 * math.pi * np.cumsum(f0) / sr
    nyquist = sr / 2.0

    harmonic = np.zeros_like(f0)
    for k in range(1, int(nyquist // f0.min()) + 1):
        freqs = k * f0
        audible = freqs < nyquist
        if not audible.any():
            break
        harmonic += np.where(audible, _envelope(freqs, style.tilt) * np.cos(k * phase), 0.0)

    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(f0.size)
    spectrum = np.fft.rfft(noise)
    spectrum *= _envelope(np.fft.rfftfreq(f0.size, 1.0 / sr), style.tilt)
    noise = np.fft.irfft(spectrum, n=f0.size)

    harmonic_rms = np.sqrt(np.mean(harmonic ** 2))
    noise_rms = np.sqrt(np.mean(noise ** 2))
    signal = harmonic + style.breathiness * harmonic_rms / max(noise_rms, 1e-12) * noise
    signal *= _fades(signal.size, sr)

    gain = 10.0 ** (TARGET_RMS_DBFS / 20.0) / max(np.sqrt(np.mean(signal ** 2)), 1e-12)
    peak = np.max(np.abs(signal)) * gain
    if peak > PEAK_LIMIT:
        gain *= PEAK_LIMIT / peak
    return Waveform.from_array(signal * gain, sr)


def random_song(rng: np.random.Generator, key_offset: int = 0) -> SongSpec:
    n_notes = int(rng.integers(NOTES_PER_SONG[0], NOTES_PER_SONG[1] + 1))
    notes = [
        (int(rng.integers(NOTE_RANGE[0], NOTE_RANGE[1] + 1)), round(float(rng.uniform(*NOTE_SECONDS)), 3))
        for _ in range(n_notes)
    ]
    return SongSpec(notes=notes, key_offset=key_offset)


def make_corpus(n_songs: int, styles: Sequence[StyleParams], out_dir: Path, cfg: FrameConfig,
                seed: int = 0) -> List[CorpusRecord]:
    """
    Renderiza cada canção uma vez por estilo (interpretações paralelas) e grava
    WAVs, manifesto e partituras.

    Returns:
        Registros do manifesto, canção por canção, na ordem dos estilos.
    """
    if n_songs < 1:
        raise InvalidInputError("n_songs deve ser >= 1")
    if len(styles) < 2:
        raise InvalidInputError("são necessários pelo menos dois estilos")
    names = [s.name for s in styles]
    if len(set(names)) != len(names):
        raise InvalidInputError(f"nomes de estilo repetidos: {names}")

    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    songs: Dict[str, SongSpec] = {}
    records: List[CorpusRecord] = []
    for song_index in range(n_songs):
        song_id = f"song{song_index:03d}"
        spec = random_song(rng)
        songs[song_id] = spec
        for style_index, style in enumerate(styles):
            clip_id = f"{song_id}_{style.name}"
            relative = Path("wavs") / f"{clip_id}.wav"
            wav = render_voice(spec, style, cfg, seed=seed * 1000003 + song_index * len(styles) + style_index)
            save_wav(out_dir / relative, wav)
            records.append(CorpusRecord(
                clip_id=clip_id,
                wav_path=str(out_dir / relative),
                style=style.name,
                song_id=song_id,
                phrase_id=f"{song_id}.0",
            ))
        logger.debug("canção %s renderizada em %d estilos", song_id, len(styles))

    write_manifest(out_dir / MANIFEST_FILE, records)
    write_songs(out_dir / SONGS_FILE, songs)
    logger.info("corpus sintético: %d canções x %d estilos = %d clipes em %s", n_songs, len(styles),
                len(records), out_dir)
    return records


def score_map(records: Sequence[CorpusRecord], songs: Dict[str, SongSpec],
              styles: Optional[Sequence[StyleParams]] = None) -> Dict[str, Tuple[SongSpec, int]]:
    """clip_id -> (partitura, deslocamento de registro do estilo) para MIDI de partitura."""
    offsets = {s.name: s.key_offset for s in (styles or default_styles())}
    mapping = {}
    for record in records:
        if record.song_id in songs:
            mapping[record.clip_id] = (songs[record.song_id], offsets.get(record.style, 0))
    return mapping


# ---------------------------------------------------------------------------
# Medidas de estilo
# ---------------------------------------------------------------------------

def _harmonic_split(power: np.ndarray, f0: float, cfg: FrameConfig) -> Tuple[float, float, np.ndarray]:
    """
    Separa a energia de um quadro em parte harmônica e residual.

    A parte harmônica é a energia das zonas em torno de k·f0 menos o piso de
    ruído estimado entre harmônicos; o resto é residual.

    Returns:
        (energia harmônica, energia residual, nível dos picos harmônicos por harmônico)
    """
    bin_hz = cfg.sample_rate / cfg.fft_size
    freqs = np.arange(power.size) * bin_hz
    spacing = f0 / bin_hz
    position = freqs / f0
    distance = np.abs(position - np.round(position)) * spacing
    valid = (np.round(position) >= 1) & (freqs < cfg.sample_rate / 2 - f0 / 2)
    zone = valid & (distance <= min(HARMONIC_ZONE_BINS, 0.3 * spacing))
    between = valid & (distance >= 0.4 * spacing)
    floor = float(np.mean(power[between])) if between.any() else float(np.median(power[valid]))

    total = float(power.sum())
    harmonic = max(float(power[zone].sum()) - floor * int(zone.sum()), 0.0)
    harmonics = np.round(position[zone]).astype(int)
    peaks = np.zeros(int(harmonics.max()) + 1 if harmonics.size else 0)
    np.maximum.at(peaks, harmonics, power[zone])
    return harmonic, total - harmonic, peaks


def _vibrato_depth(f0: np.ndarray, cfg: FrameConfig) -> float:
    """Profundidade de vibrato em cents: √2 × RMS do contorno filtrado em 4-8 Hz."""
    voiced = f0 > 0
    if voiced.sum() < 2:
        return 0.0
    frames = np.arange(f0.size)
    cents = 1200.0 * np.log2(np.interp(frames, frames[voiced], f0[voiced]) / 440.0)
    residual = cents - medfilt(cents, VIBRATO_DETREND_FRAMES)
    frame_rate = cfg.sample_rate / cfg.hop
    high = min(VIBRATO_BAND_HZ[1], 0.45 * frame_rate)
    sos = butter(2, [VIBRATO_BAND_HZ[0], high], btype="bandpass", fs=frame_rate, output="sos")
    if residual.size <= 3 * (2 * len(sos) + 1):
        return 0.0
    band = sosfiltfilt(sos, residual)
    # as pontas ficam contaminadas pelo detrend e pelo filtro
    edge = VIBRATO_DETREND_FRAMES // 2
    core = band[edge:-edge] if band.size > 2 * edge + 1 else band
    return float(math.sqrt(2.0) * np.sqrt(np.mean(core ** 2)))


def _tilt(levels_db: np.ndarray, freqs: np.ndarray) -> float:
    """Inclinação em dB/oitava por regressão linear de dB sobre log2(f)."""
    if levels_db.size < 2:
        return 0.0
    slope, _ = np.polyfit(np.log2(freqs), levels_db, 1)
    return float(slope)


def style_proxy_metrics(wav: Waveform, cfg: Optional[FrameConfig] = None) -> StyleProxy:
    """
    Medidas objetivas de estilo de um clipe.

    Returns:
        StyleProxy com NHR (energia residual / harmônica nos quadros vozeados;
        1.0 quando menos de 10% dos quadros são vozeados), profundidade de
        vibrato em cents e inclinação espectral em dB/oitava.
    """
    cfg = cfg or FrameConfig()
    if wav.sample_rate != cfg.sample_rate:
        raise InvalidInputError(f"taxa {wav.sample_rate} Hz difere do enquadramento ({cfg.sample_rate} Hz)")
    if wav.duration < MIN_CONVERSION_SECONDS:
        raise InvalidInputError(f"clipe mais curto que {MIN_CONVERSION_SECONDS} s")
    f0 = extract_f0(wav, cfg).values
    power = magnitude_spectrogram(wav, cfg) ** 2
    voiced = np.flatnonzero(f0 > 0)

    tilt_freqs, tilt_levels = [], []
    harmonic_total, residual_total = 0.0, 0.0
    for t in voiced:
        harmonic, residual, peaks = _harmonic_split(power[t], f0[t], cfg)
        harmonic_total += harmonic
        residual_total += residual
        k = np.arange(peaks.size)
        freqs = k * f0[t]
        keep = (k >= 1) & (peaks > 0) & (freqs >= TILT_BAND_HZ[0]) & (freqs <= TILT_BAND_HZ[1])
        tilt_freqs.append(freqs[keep])
        tilt_levels.append(10.0 * np.log10(peaks[keep]))

    if voiced.size < MIN_VOICED_FRACTION * f0.size or harmonic_total <= 0:
        bin_freqs = np.arange(power.shape[1]) * cfg.sample_rate / cfg.fft_size
        band = (bin_freqs >= TILT_BAND_HZ[0]) & (bin_freqs <= min(TILT_BAND_HZ[1], cfg.sample_rate / 2))
        mean_power = np.maximum(power.mean(axis=0)[band], 1e-20)
        return StyleProxy(nhr=1.0, vibrato_depth_cents=0.0,
                          tilt_db_per_oct=_tilt(10.0 * np.log10(mean_power), bin_freqs[band]))

    return StyleProxy(
        nhr=residual_total / harmonic_total,
        vibrato_depth_cents=_vibrato_depth(f0, cfg),
        tilt_db_per_oct=_tilt(np.concatenate(tilt_levels), np.concatenate(tilt_freqs)),
    )

