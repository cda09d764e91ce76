"""Extração das trilhas de um clipe, cache SRNF e extração paralela do corpus."""
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from serenade.pipeline.models.audio import (
    F0_MAX_HZ,
    F0_MIN_HZ,
    LOG_FLOOR,
    LOUDNESS_FLOOR_DB,
    ClipFeatures,
    F0Track,
    FrameConfig,
    LinguisticFeatures,
    LoudnessTrack,
    MelSpectrogram,
    MidiTrack,
    Waveform,
)
from serenade.pipeline.models.infill import CorpusRecord
from serenade.pipeline.models.synth import SongSpec
from serenade.pipeline.utils.dsp import (
    extract_f0,
    extract_linguistic,
    extract_loudness,
    load_external_linguistic,
    load_wav,
    midi_quantize,
    score_midi_track,
    stft_mel,
)
from serenade.pipeline.utils.errors import FormatError
from serenade.pipeline.utils.formats import read_srnf, write_srnf

logger = logging.getLogger(__name__)

TRACKS = ("mel", "f0", "midi", "loudness", "linguistic")
SOURCE_TRACK = "source"


def extract_clip_features(
    wav: Waveform,
    cfg: FrameConfig,
    clip_id: Optional[str] = None,
    score: Optional[SongSpec] = None,
    score_offset: int = 0,
    linguistic_path: Optional[Path] = None,
) -> ClipFeatures:
    """
    Extrai mel, F0, MIDI, loudness e linguístico no mesmo enquadramento.

    Args:
        wav: Áudio do clipe.
        cfg: Enquadramento.
        clip_id: Identificador gravado nas trilhas.
        score: Partitura; quando presente, o MIDI vem dela e não do F0.
        score_offset: Deslocamento de registro do estilo, somado à partitura.
        linguistic_path: Arquivo SRNF externo com o linguístico.
    """
    mel = stft_mel(wav, cfg)
    n = mel.n_frames
    f0 = extract_f0(wav, cfg)
    midi = score_midi_track(score, n, cfg, score_offset) if score is not None else midi_quantize(f0, cfg)
    loudness = extract_loudness(wav, cfg)
    if linguistic_path is not None:
        linguistic = load_external_linguistic(linguistic_path, n)
    else:
        linguistic = extract_linguistic(wav, cfg)
    n_frames = min(n, f0.n_frames, midi.n_frames, loudness.n_frames, linguistic.n_frames)
    # linguístico externo pode ter um quadro a menos; corta tudo no menor T
    return ClipFeatures(
        mel=MelSpectrogram(data=mel.data[:n_frames], hop=mel.hop, n_mels=mel.n_mels),
        f0=F0Track(values=f0.values[:n_frames]),
        midi=MidiTrack(notes=midi.notes[:n_frames]),
        loudness=LoudnessTrack(values=loudness.values[:n_frames]),
        linguistic=LinguisticFeatures(data=linguistic.data[:n_frames]),
        clip_id=clip_id,
    )


def _frame_signature(cfg: FrameConfig) -> np.ndarray:
    return np.array([[cfg.sample_rate, cfg.fft_size, cfg.hop, cfg.n_mels, cfg.fmin, cfg.fmax]], dtype=np.float64)


def _linguistic_path(clip_id: str, linguistic_dir: Optional[str]) -> Optional[Path]:
    return Path(linguistic_dir) / f"{clip_id}.srnf" if linguistic_dir else None


def source_digest(
    record: CorpusRecord,
    cfg: FrameConfig,
    score: Optional[SongSpec] = None,
    score_offset: int = 0,
    linguistic_dir: Optional[str] = None,
) -> Optional[np.ndarray]:
    """
    Impressão SHA-256 de tudo que determina as trilhas de um clipe: o
    enquadramento, os bytes do WAV, a partitura com o deslocamento e o
    arquivo linguístico externo. Gravada como 32 células f32 de um byte.
    Devolve None se o WAV não existir (a extração reporta o erro).
    """
    wav_path = Path(record.wav_path)
    if not wav_path.is_file():
        return None
    h = hashlib.sha256()
    h.update(_frame_signature(cfg).tobytes())
    h.update(wav_path.read_bytes())
    if score is not None:
        h.update(b"score")
        h.update(score.model_dump_json().encode())
        h.update(str(score_offset).encode())
    linguistic_path = _linguistic_path(record.clip_id, linguistic_dir)
    if linguistic_path is not None:
        h.update(b"linguistic")
        h.update(str(linguistic_path.resolve()).encode())
        if linguistic_path.is_file():
            h.update(linguistic_path.read_bytes())
    return np.frombuffer(h.digest(), dtype=np.uint8).astype(np.float32)[None, :]


def _track_path(cache_dir: Path, clip_id: str, track: str) -> Path:
    return cache_dir / f"{clip_id}.{track}.srnf"


def save_cached_features(cache_dir: Path, features: ClipFeatures, digest: Optional[np.ndarray] = None) -> None:
    cache_dir = Path(cache_dir)
    write_srnf(_track_path(cache_dir, features.clip_id, "mel"), features.mel.data)
    write_srnf(_track_path(cache_dir, features.clip_id, "f0"), features.f0.values)
    write_srnf(_track_path(cache_dir, features.clip_id, "midi"), features.midi.notes)
    write_srnf(_track_path(cache_dir, features.clip_id, "loudness"), features.loudness.values)
    write_srnf(_track_path(cache_dir, features.clip_id, "linguistic"), features.linguistic.data)
    if digest is not None:
        write_srnf(_track_path(cache_dir, features.clip_id, SOURCE_TRACK), digest)


def load_cached_features(cache_dir: Path, clip_id: str, cfg: FrameConfig,
                         digest: Optional[np.ndarray] = None) -> Optional[ClipFeatures]:
    """
    Lê as trilhas do cache; devolve None se faltar alguma ou se a impressão
    gravada não for `digest` (quando informada).
    """
    cache_dir = Path(cache_dir)
    paths = {track: _track_path(cache_dir, clip_id, track) for track in TRACKS}
    if not all(p.is_file() for p in paths.values()):
        return None
    if digest is not None:
        stored = _track_path(cache_dir, clip_id, SOURCE_TRACK)
        if not stored.is_file() or not np.array_equal(read_srnf(stored), digest):
            logger.debug("cache de %s desatualizado", clip_id)
            return None
    # o arredondamento em f32 pode empurrar valores de borda para fora dos limites
    mel = np.maximum(read_srnf(paths["mel"]), LOG_FLOOR)
    f0 = read_srnf(paths["f0"])[:, 0]
    f0 = np.where(f0 > 0, np.clip(f0, F0_MIN_HZ, F0_MAX_HZ), 0.0)
    loudness = np.clip(read_srnf(paths["loudness"])[:, 0], LOUDNESS_FLOOR_DB, 0.0)
    try:
        return ClipFeatures(
            mel=MelSpectrogram(data=mel, hop=cfg.hop, n_mels=cfg.n_mels),
            f0=F0Track(values=f0),
            midi=MidiTrack(notes=np.round(read_srnf(paths["midi"])[:, 0])),
            loudness=LoudnessTrack(values=loudness),
            linguistic=LinguisticFeatures(data=read_srnf(paths["linguistic"])),
            clip_id=clip_id,
        )
    except ValueError as e:
        raise FormatError(f"cache inválido para {clip_id}: {e}") from e


def _extract_record(args: Tuple) -> ClipFeatures:
    record, cfg, score, score_offset, linguistic_dir = args
    wav = load_wav(record.wav_path, cfg.sample_rate)
    linguistic_path = _linguistic_path(record.clip_id, linguistic_dir)
    return extract_clip_features(wav, cfg, record.clip_id, score, score_offset, linguistic_path)


def extract_corpus(
    records: Sequence[CorpusRecord],
    cfg: FrameConfig,
    cache_dir: Optional[Path] = None,
    jobs: int = 1,
    scores: Optional[Dict[str, Tuple[SongSpec, int]]] = None,
    linguistic_dir: Optional[str] = None,
) -> List[ClipFeatures]:
    """
    Extrai (ou lê do cache) as trilhas de cada registro, na ordem do manifesto.
    Um clipe só vem do cache quando sua impressão de origem não mudou.

    Args:
        records: Registros do corpus.
        cfg: Enquadramento.
        cache_dir: Diretório do cache SRNF; None desativa o cache.
        jobs: Processos paralelos.
        scores: clip_id -> (partitura, deslocamento de registro) para MIDI de partitura.
        linguistic_dir: Diretório com linguístico externo por clip_id.
    """
    results: Dict[int, ClipFeatures] = {}
    digests: Dict[int, Optional[np.ndarray]] = {}
    pending = []
    for i, record in enumerate(records):
        score, offset = (scores or {}).get(record.clip_id, (None, 0))
        cached = None
        if cache_dir is not None:
            digests[i] = source_digest(record, cfg, score, offset, linguistic_dir)
            if digests[i] is not None:
                cached = load_cached_features(Path(cache_dir), record.clip_id, cfg, digests[i])
        if cached is not None:
            results[i] = cached
        else:
            pending.append((i, (record, cfg, score, offset, linguistic_dir)))

    if pending:
        logger.info("extraindo trilhas de %d clipes (%d do cache)", len(pending), len(results))
        args = [a for _, a in pending]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                mapped = pool.map(_extract_record, args)
                extracted = list(tqdm(mapped, total=len(args), desc="extract", leave=False, disable=None))
        else:
            extracted = [_extract_record(a) for a in tqdm(args, desc="extract", leave=False, disable=None)]
        for (i, _), features in zip(pending, extracted):
            if cache_dir is not None:
                # devolve o que foi gravado para que a próxima execução, lida do cache, veja os mesmos valores
                save_cached_features(Path(cache_dir), features, digests[i])
                features = load_cached_features(Path(cache_dir), features.clip_id, cfg)
            results[i] = features
    return [results[i] for i in range(len(records))]
