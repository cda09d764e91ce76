"""Subcomandos de treino: infilling, geração cíclica e ajuste fino."""
import logging
from pathlib import Path
from typing import Optional

import click

from serenade.config import resolve_path
from serenade.pipeline.commands.common import by_clip_id, get_settings, load_corpus
from serenade.pipeline.utils.checkpoint import init_checkpoint, load_checkpoint, save_checkpoint
from serenade.pipeline.utils.formats import read_cyclic_manifest
from serenade.pipeline.utils.infill import (
    CYCLIC_MANIFEST,
    finetune_cyclic,
    generate_cyclic_set,
    load_cyclic_items,
    natural_items,
    train,
)

logger = logging.getLogger(__name__)


@click.command("train")
@click.option("--manifest", required=True, help="Manifesto do corpus")
@click.option("--out", default=None, help="Checkpoint de saída (padrão: CHECKPOINT_PATH)")
@click.option("--steps", type=int, default=None, help="Passos de treino (padrão: TRAIN_STEPS)")
@click.option("--resume", default=None, help="Checkpoint a partir do qual continuar")
@click.option("--cache", default=None, help="Diretório do cache (padrão: CACHE_DIR)")
@click.pass_context
def train_command(ctx: click.Context, manifest: str, out: Optional[str], steps: Optional[int],
                  resume: Optional[str], cache: Optional[str]):
    """Treina o modelo de infilling mascarado sobre o corpus."""
    settings = get_settings(ctx)
    steps = settings.TRAIN_STEPS if steps is None else steps
    if steps < 0:
        raise click.BadParameter("deve ser >= 0", param_hint="--steps")

    records, features, _ = load_corpus(settings, manifest, cache)
    if resume is not None:
        ckpt = load_checkpoint(resume, settings.cfm_config())
        logger.info("retomando de %s no passo %d", resume, ckpt.step)
    else:
        ckpt = init_checkpoint(settings.N_MELS, settings.cfm_config(), settings.SEED)

    ckpt = train(natural_items(records, features), ckpt, steps, settings.BATCH_SIZE, settings.SEGMENT_FRAMES,
                 settings.LOG_EVERY)
    out_path = resolve_path(settings, out, "CHECKPOINT_PATH")
    save_checkpoint(out_path, ckpt)
    click.echo(f"passo {ckpt.step} -> {out_path}")


@click.command("cycle-gen")
@click.option("--manifest", required=True, help="Manifesto do corpus")
@click.option("--ckpt", required=True, help="Checkpoint treinado")
@click.option("--out", "out_dir", required=True, help="Diretório dos itens cíclicos")
@click.option("--cache", default=None, help="Diretório do cache (padrão: CACHE_DIR)")
@click.pass_context
def cycle_gen(ctx: click.Context, manifest: str, ckpt: str, out_dir: str, cache: Optional[str]):
    """Converte cada clipe para outro estilo e grava o manifesto cíclico."""
    settings = get_settings(ctx)
    records, features, scores = load_corpus(settings, manifest, cache)
    checkpoint = load_checkpoint(ckpt, settings.cfm_config())
    items, _ = generate_cyclic_set(
        checkpoint,
        records,
        by_clip_id(features),
        out_dir,
        settings.frame_config(),
        seed=settings.SEED,
        steps=settings.EULER_STEPS,
        griffin_lim_iters=settings.GRIFFIN_LIM_ITERS,
        scores=scores,
    )
    click.echo(f"{len(items)} itens cíclicos -> {Path(out_dir) / CYCLIC_MANIFEST}")


@click.command("finetune")
@click.option("--manifest", required=True, help="Manifesto do corpus")
@click.option("--cyclic", required=True, help="Manifesto cíclico (cyclic.tsv)")
@click.option("--ckpt", required=True, help="Checkpoint treinado")
@click.option("--out", required=True, help="Checkpoint de saída")
@click.option("--steps", type=int, default=None, help="Passos de ajuste (padrão: FINETUNE_STEPS)")
@click.option("--cache", default=None, help="Diretório do cache (padrão: CACHE_DIR)")
@click.pass_context
def finetune(ctx: click.Context, manifest: str, cyclic: str, ckpt: str, out: str, steps: Optional[int],
             cache: Optional[str]):
    """Ajuste fino com lotes 1:1 de itens naturais e cíclicos."""
    settings = get_settings(ctx)
    steps = settings.FINETUNE_STEPS if steps is None else steps
    if steps < 0:
        raise click.BadParameter("deve ser >= 0", param_hint="--steps")

    records, features, scores = load_corpus(settings, manifest, cache)
    rows = read_cyclic_manifest(cyclic)
    cyclic_items = load_cyclic_items(rows, by_clip_id(features), settings.frame_config(), scores)
    checkpoint = load_checkpoint(ckpt, settings.cfm_config())
    checkpoint = finetune_cyclic(checkpoint, natural_items(records, features), cyclic_items, steps,
                                 settings.BATCH_SIZE, settings.SEGMENT_FRAMES, settings.LOG_EVERY)
    save_checkpoint(out, checkpoint)
    click.echo(f"{len(cyclic_items)} itens cíclicos, passo {checkpoint.step} -> {out}")
