"""Apoio compartilhado pelos subcomandos: configuração, corpus e trilhas."""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import click

from serenade.config import MidiSource, Settings, resolve_path
from serenade.pipeline.models.audio import ClipFeatures
from serenade.pipeline.models.infill import CorpusRecord
from serenade.pipeline.models.synth import SongSpec
from serenade.pipeline.utils.errors import MissingFileError
from serenade.pipeline.utils.features import extract_corpus
from serenade.pipeline.utils.formats import read_manifest, read_songs
from serenade.pipeline.utils.synthdata import SONGS_FILE, score_map

logger = logging.getLogger(__name__)

Scores = Dict[str, Tuple[SongSpec, int]]


def get_settings(ctx: click.Context) -> Settings:
    """Settings montadas pelo grupo principal."""
    settings = ctx.find_object(Settings)
    if settings is None:
        raise click.UsageError("configuração não inicializada")
    return settings


def corpus_scores(settings: Settings, manifest: Path, records: Sequence[CorpusRecord]) -> Optional[Scores]:
    """
    Partituras por clipe quando MIDI_SOURCE=score; lidas do songs.tsv ao lado
    do manifesto.
    """
    if settings.MIDI_SOURCE != MidiSource.SCORE:
        return None
    songs_path = Path(manifest).parent / SONGS_FILE
    if not songs_path.is_file():
        raise MissingFileError(f"MIDI_SOURCE=score exige {songs_path}")
    scores = score_map(records, read_songs(songs_path))
    missing = [r.clip_id for r in records if r.clip_id not in scores]
    if missing:
        # clipes aumentados não têm partitura; caem no MIDI extraído do áudio
        logger.warning("%d clipes sem partitura usam MIDI do áudio", len(missing))
    return scores


def load_corpus(settings: Settings, manifest: str, cache: Optional[str] = None
                ) -> Tuple[List[CorpusRecord], List[ClipFeatures], Optional[Scores]]:
    """
    Lê o manifesto e as trilhas de cada clipe (do cache quando possível).

    Returns:
        (registros, trilhas na ordem do manifesto, partituras ou None)
    """
    records = read_manifest(manifest)
    scores = corpus_scores(settings, Path(manifest), records)
    features = extract_corpus(
        records,
        settings.frame_config(),
        cache_dir=resolve_path(settings, cache, "CACHE_DIR"),
        jobs=settings.JOBS,
        scores=scores,
        linguistic_dir=settings.LINGUISTIC_DIR,
    )
    return records, features, scores


def by_clip_id(features: Sequence[ClipFeatures]) -> Dict[str, ClipFeatures]:
    return {f.clip_id: f for f in features}


def split_list(values: Sequence[str]) -> List[str]:
    """Aceita valores repetidos e/ou separados por vírgula."""
    return [token for value in values for token in value.split(",") if token]
