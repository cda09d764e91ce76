"""
Orquestração do infilling: sorteio de máscara, montagem de lotes, laço de
treino, conversão por concatenação referência‖fonte e o ciclo de dados
sintéticos (geração e ajuste fino).
"""
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from serenade.pipeline.models.audio import LOG_FLOOR, ClipFeatures, FrameConfig, MelSpectrogram, Waveform
from serenade.pipeline.models.infill import (
    ConditioningBundle,
    ConversionRequest,
    CorpusRecord,
    CyclicRecord,
    Mask,
    Provenance,
    TrainingItem,
)
from serenade.pipeline.models.synth import SongSpec
from serenade.pipeline.utils.checkpoint import Checkpoint, TrainingStage
from serenade.pipeline.utils.dsp import griffin_lim_invert, load_wav, resample, save_wav
from serenade.pipeline.utils.errors import InvalidInputError, NumericError, SerenadeError, ShapeError
from serenade.pipeline.utils.features import extract_clip_features
from serenade.pipeline.utils.flow import (
    check_finite,
    euler_integrate,
    grad_step,
    prior_and_style,
    style_batch,
    total_loss,
    vf_forward,
)
from serenade.pipeline.utils.formats import write_cyclic_manifest
from serenade.pipeline.utils.networks import denormalize_mel, normalize_mel
from serenade.pipeline.utils.world import f0_stats, postprocess_swap

logger = logging.getLogger(__name__)

MASK_MIN_FRACTION = 0.5
MASK_MAX_FRACTION = 0.9
MIN_MASK_FRAMES = 4
SEGMENT_FRAMES = 128
CYCLIC_MANIFEST = "cyclic.tsv"


class TrainingBatch(BaseModel):
    """Lote pronto para a perda: alvo normalizado, condicionamento, máscara, ruído e tempos."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    x1: torch.Tensor = Field(..., description="Mel normalizado (B, T, D)")
    cond: ConditioningBundle
    mask: torch.Tensor = Field(..., description="(B, T), 1 nos quadros alvo")
    x0: torch.Tensor = Field(..., description="Ruído gaussiano (B, T, D)")
    t: torch.Tensor = Field(..., description="Tempos do fluxo (B,)")
    full_mels: List[torch.Tensor] = Field(..., description="Mels completos em log natural, para o estilo")


class ReconstructionResult(BaseModel):
    """Distâncias no trecho mascarado: modelo contra a cópia do quadro não mascarado mais próximo."""
    model_distance: float = Field(..., ge=0.0)
    baseline_distance: float = Field(..., ge=0.0)
    span_frames: int = Field(..., ge=1)


def sample_mask(n_frames: int, rng: np.random.Generator, span: Optional[Tuple[int, int]] = None) -> Mask:
    """
    Sorteia o trecho mascarado: comprimento uniforme entre 50% e 90% de T,
    início uniforme sobre as posições válidas.

    Args:
        n_frames: Número de quadros T.
        rng: Gerador numpy.
        span: Trecho [início, fim) forçado, sem sorteio.
    """
    if n_frames < MIN_MASK_FRAMES:
        raise InvalidInputError(f"T={n_frames} pequeno demais para mascarar (mínimo {MIN_MASK_FRAMES})")
    if span is not None:
        try:
            return Mask(length=n_frames, start=span[0], end=span[1])
        except ValueError as e:
            raise InvalidInputError(str(e)) from e
    low = math.ceil(MASK_MIN_FRACTION * n_frames)
    high = max(low, math.floor(MASK_MAX_FRACTION * n_frames))
    length = int(rng.integers(low, high + 1))
    start = int(rng.integers(0, n_frames - length + 1))
    return Mask(length=n_frames, start=start, end=start + length)


def _crop(item: TrainingItem, start: int, length: int) -> Dict[str, np.ndarray]:
    stop = start + length
    return {
        "mel": item.mel.data[start:stop],
        "linguistic": item.linguistic.data[start:stop],
        "midi": item.midi.notes[start:stop],
        "loudness": item.loudness.values[start:stop],
    }


def _as_tensor(array: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(array), dtype=dtype)


def _bundle(linguistic: np.ndarray, midi: np.ndarray, loudness: np.ndarray, masked_mel: np.ndarray) -> ConditioningBundle:
    """Monta o bundle (B, T, ·) a partir de arrays já empilhados no lote."""
    return ConditioningBundle(
        linguistic=_as_tensor(linguistic),
        midi=_as_tensor(midi, torch.long),
        loudness=_as_tensor(loudness[..., None]),
        masked_mel=_as_tensor(masked_mel),
    )


def assemble_batch(items: Sequence[TrainingItem], rng: np.random.Generator, segment_frames: int = SEGMENT_FRAMES,
                   spans: Optional[Sequence[Tuple[int, int]]] = None) -> TrainingBatch:
    """
    Corta cada item numa janela comum, sorteia a máscara de cada um e zera o
    trecho no canal de mel mascarado. Os demais canais não passam pela máscara.

    Args:
        items: Itens do lote.
        rng: Gerador que decide janelas, máscaras, ruído e tempos.
        segment_frames: Comprimento máximo da janela.
        spans: Trechos forçados, um por item.
    """
    if not items:
        raise InvalidInputError("lote vazio")
    length = min(segment_frames, min(item.n_frames for item in items))
    crops, masks = [], []
    for i, item in enumerate(items):
        start = int(rng.integers(0, item.n_frames - length + 1))
        crops.append(_crop(item, start, length))
        masks.append(sample_mask(length, rng, spans[i] if spans is not None else None))

    x1 = normalize_mel(np.stack([c["mel"] for c in crops]))
    target = np.stack([m.target for m in masks])
    keep = np.stack([m.keep for m in masks])
    batch_size, n_mels = len(items), x1.shape[-1]
    x0 = rng.standard_normal((batch_size, length, n_mels))
    t = rng.uniform(0.0, 1.0, size=batch_size)

    cond = _bundle(
        np.stack([c["linguistic"] for c in crops]),
        np.stack([c["midi"] for c in crops]),
        np.stack([c["loudness"] for c in crops]),
        x1 * keep[..., None],
    )
    return TrainingBatch(
        x1=_as_tensor(x1),
        cond=cond,
        mask=_as_tensor(target),
        x0=_as_tensor(x0),
        t=_as_tensor(t),
        full_mels=[_as_tensor(item.mel.data) for item in items],
    )


def _draw_items(natural: Sequence[TrainingItem], cyclic: Sequence[TrainingItem], rng: np.random.Generator,
                batch_size: int) -> List[TrainingItem]:
    """
    Sorteia o lote; com itens cíclicos, metade do lote vem de cada conjunto.
    Em lotes ímpares a origem do item excedente é sorteada, o que mantém a
    proporção 1:1 em média (inclusive com lotes de um item).
    """
    if not cyclic:
        return [natural[i] for i in rng.integers(0, len(natural), size=batch_size)]
    n_cyclic = batch_size // 2
    if batch_size % 2 and rng.random() < 0.5:
        n_cyclic += 1
    chosen = [natural[i] for i in rng.integers(0, len(natural), size=batch_size - n_cyclic)]
    chosen += [cyclic[i] for i in rng.integers(0, len(cyclic), size=n_cyclic)]
    return chosen


def _batch_loss(ckpt: Checkpoint, batch: TrainingBatch) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    style = style_batch(ckpt.model, batch.full_mels)
    cond = batch.cond.model_copy(update={"style": style})
    return total_loss(ckpt.model, batch.x1, cond, batch.mask, batch.x0, batch.t, ckpt.cfg)


def _run_steps(ckpt: Checkpoint, natural: Sequence[TrainingItem], cyclic: Sequence[TrainingItem], steps: int,
               batch_size: int, segment_frames: int, log_every: int, stage: TrainingStage) -> Checkpoint:
    if not natural:
        raise InvalidInputError("corpus de treino vazio")
    if steps <= 0:
        return ckpt
    model, optimizer = ckpt.model, ckpt.optimizer
    model.train()
    window: List[float] = []
    for _ in tqdm(range(steps), desc=stage.value, leave=False, disable=None):
        step = ckpt.step
        # gerador por passo: retomar do checkpoint reproduz o mesmo lote
        rng = np.random.default_rng([ckpt.seed, step])
        batch = assemble_batch(_draw_items(natural, cyclic, rng, batch_size), rng, segment_frames)

        optimizer.zero_grad(set_to_none=True)
        total, c_loss, p_loss = _batch_loss(ckpt, batch)
        try:
            check_finite(total, f"perda no passo {step}")
        except NumericError:
            logger.error("perda não finita no passo %d (cfm=%s, prior=%s)", step, c_loss.item(), p_loss.item())
            raise
        total.backward()
        grad_step(optimizer)

        value = float(total.item())
        ckpt.step += 1
        ckpt.loss_history.append(value)
        window.append(value)
        if log_every > 0 and ckpt.step % log_every == 0:
            logger.info("%s passo %d: perda média %.4f", stage.value, ckpt.step, float(np.mean(window)))
            window = []
    ckpt.stage = stage
    model.eval()
    return ckpt


def train(items: Sequence[TrainingItem], ckpt: Checkpoint, steps: int, batch_size: int = 4,
          segment_frames: int = SEGMENT_FRAMES, log_every: int = 100) -> Checkpoint:
    """
    Treina o modelo de infilling por `steps` passos a partir do estado do checkpoint.

    Com steps=0 o checkpoint volta inalterado.
    """
    return _run_steps(ckpt, items, [], steps, batch_size, segment_frames, log_every, TrainingStage.TRAIN)


def finetune_cyclic(ckpt: Checkpoint, natural_items: Sequence[TrainingItem], cyclic_items: Sequence[TrainingItem],
                    steps: int, batch_size: int = 4, segment_frames: int = SEGMENT_FRAMES,
                    log_every: int = 100) -> Checkpoint:
    """Ajuste fino misturando itens naturais e cíclicos 1:1 em cada lote."""
    if not cyclic_items:
        logger.warning("nenhum item cíclico; ajuste fino só com dados naturais")
    return _run_steps(ckpt, natural_items, cyclic_items, steps, batch_size, segment_frames, log_every,
                      TrainingStage.FINETUNE)


def evaluate_loss(ckpt: Checkpoint, items: Sequence[TrainingItem], seed: int = 0,
                  segment_frames: int = SEGMENT_FRAMES) -> float:
    """Perda total média (CFM + prior) sobre os itens, com máscara e ruído fixos por item."""
    if not items:
        raise InvalidInputError("nenhum item para avaliar")
    ckpt.model.eval()
    losses = []
    with torch.no_grad():
        for i, item in enumerate(items):
            batch = assemble_batch([item], np.random.default_rng([seed, i]), segment_frames)
            total, _, _ = _batch_loss(ckpt, batch)
            losses.append(float(total.item()))
    return float(np.mean(losses))


def _single(array: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return _as_tensor(array[None], dtype)


def _generate(ckpt: Checkpoint, cond: ConditioningBundle, style_mel: np.ndarray, steps: int, seed: int) -> np.ndarray:
    """Integra o fluxo a partir de ruído e devolve o mel gerado (T, D) em log natural."""
    model = ckpt.model
    model.eval()
    rng = np.random.default_rng(seed)
    x0 = _as_tensor(rng.standard_normal((1, cond.n_frames, model.n_mels)))
    with torch.no_grad():
        style = model.style_encoder(normalize_mel(_single(style_mel)))
        full = prior_and_style(model, cond, style)
        x = euler_integrate(lambda x, t: vf_forward(model, x, t, full), x0, steps)
    check_finite(x, "mel gerado")
    return np.maximum(denormalize_mel(x[0]).numpy().astype(np.float64), LOG_FLOOR)


def convert_features(ckpt: Checkpoint, source: ClipFeatures, reference: ClipFeatures, steps: int = 32,
                     seed: int = 0) -> MelSpectrogram:
    """
    Converte a fonte para o estilo da referência: condicionamento [ref ‖ fonte],
    mel mascarado [mel da ref ‖ zeros], estilo da referência. Os quadros da
    referência são descartados da saída.
    """
    n_ref, n_src = reference.n_frames, source.n_frames
    ref_mel = reference.mel.data
    masked = np.concatenate([normalize_mel(ref_mel), np.zeros((n_src, ref_mel.shape[1]))], axis=0)
    cond = ConditioningBundle(
        linguistic=_single(np.concatenate([reference.linguistic.data, source.linguistic.data], axis=0)),
        midi=_single(np.concatenate([reference.midi.notes, source.midi.notes]), torch.long),
        loudness=_single(np.concatenate([reference.loudness.values, source.loudness.values])[:, None]),
        masked_mel=_single(masked),
    )
    mel = _generate(ckpt, cond, ref_mel, steps, seed)
    return MelSpectrogram(data=mel[n_ref:n_ref + n_src], hop=source.mel.hop, n_mels=source.mel.n_mels)


def _at_rate(wav: Waveform, cfg: FrameConfig) -> Waveform:
    if wav.sample_rate == cfg.sample_rate:
        return wav
    return Waveform.from_array(resample(wav.samples, wav.sample_rate, cfg.sample_rate), cfg.sample_rate)


def _fit_length(wav: Waveform, n_samples: int) -> Waveform:
    samples = wav.samples[:n_samples]
    if len(samples) < n_samples:
        samples = np.pad(samples, (0, n_samples - len(samples)))
    return Waveform.from_array(samples, wav.sample_rate)


def convert(req: ConversionRequest, ckpt: Checkpoint, cfg: FrameConfig, griffin_lim_iters: int = 60,
            source: Optional[ClipFeatures] = None, reference: Optional[ClipFeatures] = None
            ) -> Tuple[MelSpectrogram, Waveform]:
    """
    Converte o par da requisição e devolve (mel convertido, forma de onda).

    Args:
        req: Par fonte/referência e opções de inferência.
        ckpt: Checkpoint treinado (somente leitura).
        cfg: Enquadramento.
        griffin_lim_iters: Iterações da inversão.
        source: Trilhas já extraídas da fonte (evita reextração).
        reference: Trilhas já extraídas da referência.
    """
    source_wav, reference_wav = _at_rate(req.source_wav, cfg), _at_rate(req.reference_wav, cfg)
    source = source or extract_clip_features(source_wav, cfg)
    reference = reference or extract_clip_features(reference_wav, cfg)
    mel = convert_features(ckpt, source, reference, req.euler_steps, req.seed)
    wav = griffin_lim_invert(mel, cfg, griffin_lim_iters)
    if req.postprocess:
        ref_stats = f0_stats(reference.f0)
        wav = postprocess_swap(source_wav, wav, ref_stats, cfg)
    # a saída tem a duração da fonte
    wav = _fit_length(wav, len(source_wav))
    logger.debug("conversão %s: %d quadros de fonte, %d de referência", req.checkpoint_id or "-",
                 source.n_frames, reference.n_frames)
    return mel, wav


def _nearest_unmasked(mel: np.ndarray, mask: Mask) -> np.ndarray:
    """Linha de base: cada quadro mascarado copia o quadro não mascarado mais próximo."""
    out = mel.copy()
    kept = np.flatnonzero(mask.keep > 0)
    for frame in range(mask.start, mask.end):
        out[frame] = mel[kept[np.argmin(np.abs(kept - frame))]]
    return out


def reconstruct_masked(ckpt: Checkpoint, item: TrainingItem, mask: Mask, seed: int = 0,
                       steps: int = 32) -> ReconstructionResult:
    """Gera o trecho mascarado com o condicionamento verdadeiro e compara com a linha de base."""
    if mask.length != item.n_frames:
        raise ShapeError(f"máscara para T={mask.length}, item com {item.n_frames} quadros")
    mel = item.mel.data
    cond = ConditioningBundle(
        linguistic=_single(item.linguistic.data),
        midi=_single(item.midi.notes, torch.long),
        loudness=_single(item.loudness.values[:, None]),
        masked_mel=_single(normalize_mel(mel) * mask.keep[:, None]),
    )
    generated = _generate(ckpt, cond, mel, steps, seed)
    span = slice(mask.start, mask.end)
    baseline = _nearest_unmasked(mel, mask)
    return ReconstructionResult(
        model_distance=float(np.mean(np.abs(generated[span] - mel[span]))),
        baseline_distance=float(np.mean(np.abs(baseline[span] - mel[span]))),
        span_frames=mask.span_frames,
    )


def _cyclic_item(item_id: str, source: ClipFeatures, converted: ClipFeatures, style: str,
                 song_id: Optional[str], reference_clip_id: str) -> TrainingItem:
    """Item cíclico: condicionamento do áudio convertido, alvo = mel original da fonte."""
    if abs(source.n_frames - converted.n_frames) > 1:
        raise ShapeError(f"{item_id}: convertido com {converted.n_frames} quadros, original com {source.n_frames}")
    n_frames = min(source.n_frames, converted.n_frames)
    original = source.trimmed(n_frames) if n_frames < source.n_frames else source
    converted = converted.trimmed(n_frames)
    return TrainingItem(
        item_id=item_id,
        mel=original.mel,
        linguistic=converted.linguistic,
        midi=converted.midi,
        loudness=converted.loudness,
        style_label=style,
        song_id=song_id,
        provenance=Provenance.CYCLIC,
        source_clip_id=source.clip_id,
        reference_clip_id=reference_clip_id,
    )


def _pick_reference(record: CorpusRecord, records: Sequence[CorpusRecord], rng: np.random.Generator) -> CorpusRecord:
    """Estilo diferente uniforme; dentro dele, prefere um clipe de outra canção."""
    styles = sorted({r.style for r in records if r.style != record.style})
    if not styles:
        raise InvalidInputError("o corpus precisa de pelo menos dois estilos")
    style = styles[int(rng.integers(0, len(styles)))]
    candidates = [r for r in records if r.style == style]
    other_songs = [r for r in candidates if r.song_id != record.song_id]
    pool = other_songs or candidates
    return pool[int(rng.integers(0, len(pool)))]


def generate_cyclic_set(ckpt: Checkpoint, records: Sequence[CorpusRecord], features: Dict[str, ClipFeatures],
                        out_dir: Path, cfg: FrameConfig, seed: int = 0, steps: int = 32,
                        griffin_lim_iters: int = 60,
                        scores: Optional[Dict[str, Tuple[SongSpec, int]]] = None
                        ) -> Tuple[List[TrainingItem], List[CyclicRecord]]:
    """
    Converte cada clipe do corpus para outro estilo e guarda o par
    (condicionamento do convertido, mel original). Falhas por item são
    registradas e puladas.

    Returns:
        (itens cíclicos, registros do manifesto cíclico)
    """
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    items: List[TrainingItem] = []
    rows: List[CyclicRecord] = []
    for index, record in enumerate(tqdm(records, desc="cycle-gen", leave=False, disable=None)):
        reference = _pick_reference(record, records, rng)
        item_id = f"{record.clip_id}~{reference.style}"
        try:
            mel = convert_features(ckpt, features[record.clip_id], features[reference.clip_id], steps, seed + index)
            wav = griffin_lim_invert(mel, cfg, griffin_lim_iters)
            wav_path = out_dir / f"{item_id}.wav"
            save_wav(wav_path, wav)
            # extrai do PCM gravado: os itens relidos de cyclic.tsv ficam idênticos
            wav = load_wav(wav_path, cfg.sample_rate)
            score, offset = (scores or {}).get(record.clip_id, (None, 0))
            converted = extract_clip_features(wav, cfg, item_id, score, offset)
            items.append(_cyclic_item(item_id, features[record.clip_id], converted, record.style,
                                      record.song_id, reference.clip_id))
        except (SerenadeError, ValueError) as e:
            logger.warning("item cíclico %s ignorado: %s", item_id, e)
            continue
        rows.append(CyclicRecord(
            item_id=item_id,
            source_clip_id=record.clip_id,
            reference_clip_id=reference.clip_id,
            wav_path=str(wav_path),
            source_style=record.style,
            reference_style=reference.style,
        ))
    write_cyclic_manifest(out_dir / CYCLIC_MANIFEST, rows)
    logger.info("%d itens cíclicos gerados de %d clipes", len(items), len(records))
    return items, rows


def load_cyclic_items(rows: Sequence[CyclicRecord], features: Dict[str, ClipFeatures], cfg: FrameConfig,
                      scores: Optional[Dict[str, Tuple[SongSpec, int]]] = None) -> List[TrainingItem]:
    """Reconstrói os itens cíclicos a partir do manifesto e das trilhas dos clipes originais."""
    items = []
    for row in rows:
        if row.source_clip_id not in features:
            logger.warning("item cíclico %s sem clipe de origem %s; ignorado", row.item_id, row.source_clip_id)
            continue
        score, offset = (scores or {}).get(row.source_clip_id, (None, 0))
        converted = extract_clip_features(load_wav(row.wav_path, cfg.sample_rate), cfg, row.item_id, score, offset)
        items.append(_cyclic_item(row.item_id, features[row.source_clip_id], converted, row.source_style,
                                  None, row.reference_clip_id))
    return items


def natural_items(records: Sequence[CorpusRecord], features: Sequence[ClipFeatures]) -> List[TrainingItem]:
    return [TrainingItem.from_features(f, r.style, r.song_id) for r, f in zip(records, features)]
