"""Subcomandos de preparação de dados: corpus sintético, extração e aumento por tom."""
import logging
from pathlib import Path
from typing import Optional, Tuple

import click

from serenade.config import resolve_path
from serenade.pipeline.commands.common import corpus_scores, get_settings
from serenade.pipeline.utils.dsp import load_wav, save_wav
from serenade.pipeline.utils.errors import InvalidInputError
from serenade.pipeline.utils.features import extract_corpus
from serenade.pipeline.utils.formats import read_manifest, write_manifest
from serenade.pipeline.utils.synthdata import MANIFEST_FILE, default_styles, make_corpus
from serenade.pipeline.utils.world import augment_corpus, pitch_shift_augment

logger = logging.getLogger(__name__)


@click.command("synth-corpus")
@click.option("--out", "out_dir", default=None, help="Diretório do corpus (padrão: CORPUS_DIR)")
@click.option("--songs", type=int, default=5, show_default=True, help="Número de canções")
@click.pass_context
def synth_corpus(ctx: click.Context, out_dir: Optional[str], songs: int):
    """Renderiza o corpus sintético: cada canção em cada estilo."""
    settings = get_settings(ctx)
    out = resolve_path(settings, out_dir, "CORPUS_DIR")
    records = make_corpus(songs, default_styles(), out, settings.frame_config(), seed=settings.SEED)
    click.echo(f"{len(records)} clipes -> {out / MANIFEST_FILE}")


@click.command("extract")
@click.option("--manifest", required=True, help="Manifesto do corpus")
@click.option("--cache", default=None, help="Diretório do cache (padrão: CACHE_DIR)")
@click.pass_context
def extract(ctx: click.Context, manifest: str, cache: Optional[str]):
    """Extrai e guarda em cache as trilhas de todos os clipes."""
    settings = get_settings(ctx)
    records = read_manifest(manifest)
    cache_dir = resolve_path(settings, cache, "CACHE_DIR")
    features = extract_corpus(
        records,
        settings.frame_config(),
        cache_dir=cache_dir,
        jobs=settings.JOBS,
        scores=corpus_scores(settings, Path(manifest), records),
        linguistic_dir=settings.LINGUISTIC_DIR,
    )
    frames = sum(f.n_frames for f in features)
    click.echo(f"{len(features)} clipes, {frames} quadros -> {cache_dir}")


@click.command("augment")
@click.option("--in", "in_path", default=None, help="WAV de entrada (modo arquivo único)")
@click.option("--manifest", default=None, help="Manifesto do corpus (modo corpus)")
@click.option("--out", required=True, help="WAV de saída, ou diretório no modo corpus")
@click.option("--semitones", type=int, multiple=True, help="Deslocamento em semitons (repetível)")
@click.pass_context
def augment(ctx: click.Context, in_path: Optional[str], manifest: Optional[str], out: str,
            semitones: Tuple[int, ...]):
    """
    Desloca o tom preservando o envelope. Com --in grava um arquivo; com
    --manifest gera cópias de todo o corpus e um manifesto combinado.
    """
    settings = get_settings(ctx)
    cfg = settings.frame_config()
    if (in_path is None) == (manifest is None):
        raise click.UsageError("use exatamente um de --in ou --manifest")

    if in_path is not None:
        if len(semitones) != 1:
            raise click.UsageError("--in exige exatamente um --semitones")
        wav = load_wav(in_path, cfg.sample_rate)
        save_wav(out, pitch_shift_augment(wav, semitones[0], cfg))
        click.echo(f"{in_path} {semitones[0]:+d} st -> {out}")
        return

    shifts = list(semitones) or list(settings.AUGMENT_SEMITONES)
    if not any(shifts):
        raise InvalidInputError("nenhum deslocamento diferente de zero")
    records = read_manifest(manifest)
    out_dir = Path(out)
    augmented = augment_corpus(records, out_dir / "wavs", shifts, cfg)
    write_manifest(out_dir / MANIFEST_FILE, list(records) + augmented)
    click.echo(f"{len(records)} clipes + {len(augmented)} aumentados -> {out_dir / MANIFEST_FILE}")
