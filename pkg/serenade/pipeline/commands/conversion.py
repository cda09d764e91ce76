"""Subcomandos de inferência: conversão, pós-processamento e avaliação."""
import logging
import math
from typing import Optional, Tuple

import click
from pydantic import ValidationError

from serenade.pipeline.commands.common import by_clip_id, get_settings, load_corpus, split_list
from serenade.pipeline.models.infill import ConversionRequest
from serenade.pipeline.utils.checkpoint import load_checkpoint
from serenade.pipeline.utils.dsp import extract_f0, load_wav, save_wav
from serenade.pipeline.utils.errors import InvalidInputError
from serenade.pipeline.utils.evaluation import evaluate_conversion, fad_from_files
from serenade.pipeline.utils.formats import write_srnf
from serenade.pipeline.utils.formatter import ReportFormatter
from serenade.pipeline.utils.infill import convert
from serenade.pipeline.utils.world import f0_stats, postprocess_swap

logger = logging.getLogger(__name__)


@click.command("convert")
@click.option("--src", required=True, help="WAV da fonte (conteúdo)")
@click.option("--ref", required=True, help="WAV de referência (estilo)")
@click.option("--ckpt", required=True, help="Checkpoint treinado")
@click.option("--out", required=True, help="WAV convertido")
@click.option("--postprocess/--no-postprocess", default=None, help="Troca de F0 (padrão: POSTPROCESS)")
@click.option("--mel-out", default=None, help="Grava também o mel convertido (SRNF)")
@click.pass_context
def convert_command(ctx: click.Context, src: str, ref: str, ckpt: str, out: str, postprocess: Optional[bool],
                    mel_out: Optional[str]):
    """Converte o estilo de canto da fonte para o da referência."""
    settings = get_settings(ctx)
    cfg = settings.frame_config()
    source_wav = load_wav(src, cfg.sample_rate)
    reference_wav = load_wav(ref, cfg.sample_rate)
    checkpoint = load_checkpoint(ckpt, settings.cfm_config())
    try:
        req = ConversionRequest(
            source_wav=source_wav,
            reference_wav=reference_wav,
            checkpoint_id=ckpt,
            euler_steps=settings.EULER_STEPS,
            postprocess=settings.POSTPROCESS if postprocess is None else postprocess,
            seed=settings.SEED,
        )
    except ValidationError as e:
        raise InvalidInputError(f"requisição de conversão inválida: {e.errors()[0]['msg']}",
                                details=e.errors()) from e

    mel, wav = convert(req, checkpoint, cfg, settings.GRIFFIN_LIM_ITERS)
    save_wav(out, wav)
    if mel_out is not None:
        write_srnf(mel_out, mel.data)
    click.echo(f"{mel.n_frames} quadros, {wav.duration:.2f} s -> {out}")


@click.command("postprocess")
@click.option("--src", required=True, help="WAV da fonte (melodia)")
@click.option("--cvt", required=True, help="WAV convertido (timbre)")
@click.option("--ref", required=True, help="WAV de referência (estatísticas de F0)")
@click.option("--out", required=True, help="WAV corrigido")
@click.pass_context
def postprocess(ctx: click.Context, src: str, cvt: str, ref: str, out: str):
    """Ressintetiza o convertido com o F0 da fonte levado ao registro da referência."""
    settings = get_settings(ctx)
    cfg = settings.frame_config()
    ref_stats = f0_stats(extract_f0(load_wav(ref, cfg.sample_rate), cfg))
    wav = postprocess_swap(load_wav(src, cfg.sample_rate), load_wav(cvt, cfg.sample_rate), ref_stats, cfg)
    save_wav(out, wav)
    click.echo(f"F0 médio geométrico da referência {math.exp(ref_stats.mean_logf0):.1f} Hz -> {out}")


@click.command("evaluate")
@click.option("--manifest", required=True, help="Manifesto do corpus")
@click.option("--ckpt", required=True, help="Checkpoint treinado")
@click.option("--out", required=True, help="Relatório TSV")
@click.option("--csv", "csv_path", default=None, help="Exportação CSV dos registros")
@click.option("--test-songs", multiple=True, help="Canções avaliadas (repetível ou separadas por vírgula)")
@click.option("--postprocess/--no-postprocess", default=None, help="Troca de F0 (padrão: POSTPROCESS)")
@click.option("--fad", nargs=2, default=None, help="Dois diretórios de embeddings SRNF para o FAD")
@click.option("--cache", default=None, help="Diretório do cache (padrão: CACHE_DIR)")
@click.pass_context
def evaluate(ctx: click.Context, manifest: str, ckpt: str, out: str, csv_path: Optional[str],
             test_songs: Tuple[str, ...], postprocess: Optional[bool], fad: Optional[Tuple[str, str]],
             cache: Optional[str]):
    """Avaliação todos-os-pares: cada clipe de teste para cada outro estilo."""
    settings = get_settings(ctx)
    records, features, _ = load_corpus(settings, manifest, cache)
    songs = split_list(test_songs)
    unknown = sorted(set(songs) - {r.song_id for r in records})
    if unknown:
        raise InvalidInputError(f"canções de teste fora do manifesto: {', '.join(unknown)}")

    report = evaluate_conversion(
        records,
        by_clip_id(features),
        load_checkpoint(ckpt, settings.cfm_config()),
        settings.frame_config(),
        euler_steps=settings.EULER_STEPS,
        griffin_lim_iters=settings.GRIFFIN_LIM_ITERS,
        postprocess=settings.POSTPROCESS if postprocess is None else postprocess,
        seed=settings.SEED,
        test_songs=songs or None,
        jobs=settings.JOBS,
    )
    if fad:
        report.metadata["fad"] = f"{fad_from_files(*fad):.6f}"
    ReportFormatter.write_report(out, report, csv_path)
    click.echo(ReportFormatter.format_summary(report))
