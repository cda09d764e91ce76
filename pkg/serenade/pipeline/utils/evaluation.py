"""Métricas objetivas de conversão, protocolo todos-os-pares e FAD sobre embeddings externos."""
import logging
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from scipy import linalg
from tqdm import tqdm

from serenade.pipeline.models.audio import ClipFeatures, F0Track, FrameConfig, MelSpectrogram
from serenade.pipeline.models.evaluation import EvalReport, MetricSummary, PairRecord
from serenade.pipeline.models.infill import CorpusRecord
from serenade.pipeline.utils.checkpoint import Checkpoint
from serenade.pipeline.utils.dsp import extract_f0, griffin_lim_invert, load_wav
from serenade.pipeline.utils.errors import InvalidInputError, SerenadeError, ShapeError
from serenade.pipeline.utils.formats import read_srnf
from serenade.pipeline.utils.infill import convert_features
from serenade.pipeline.utils.synthdata import style_proxy_metrics
from serenade.pipeline.utils.world import f0_stats, mean_variance_shift_f0, postprocess_swap

logger = logging.getLogger(__name__)

FRAME_SLACK = 1
METRICS = (
    "mel_distance",
    "f0_rmse_cents",
    "f0_rmse_cents_unprocessed",
    "vuv_error",
    "output_nhr",
    "style_proxy_distance_to_ref",
    "style_proxy_distance_to_src",
)


def _common_frames(n_a: int, n_b: int, what: str) -> int:
    if abs(n_a - n_b) > FRAME_SLACK:
        raise ShapeError(f"{what}: {n_a} e {n_b} quadros diferem em mais de {FRAME_SLACK}")
    return min(n_a, n_b)


def mel_distance(a: MelSpectrogram, b: MelSpectrogram) -> float:
    """Diferença absoluta média por célula, após cortar para o T comum."""
    if a.n_mels != b.n_mels:
        raise ShapeError(f"mels com {a.n_mels} e {b.n_mels} bandas")
    n = _common_frames(a.n_frames, b.n_frames, "mel_distance")
    return float(np.mean(np.abs(a.data[:n] - b.data[:n])))


def f0_rmse_cents(a: F0Track, b: F0Track) -> float:
    """RMSE de 1200·log2(fa/fb) nos quadros vozeados nas duas trilhas."""
    n = _common_frames(a.n_frames, b.n_frames, "f0_rmse_cents")
    fa, fb = a.values[:n], b.values[:n]
    both = (fa > 0) & (fb > 0)
    if not both.any():
        raise InvalidInputError("nenhum quadro vozeado em comum")
    cents = 1200.0 * np.log2(fa[both] / fb[both])
    return float(np.sqrt(np.mean(cents ** 2)))


def vuv_error(a: F0Track, b: F0Track) -> float:
    """Fração de quadros com decisão vozeado/não vozeado diferente."""
    n = _common_frames(a.n_frames, b.n_frames, "vuv_error")
    return float(np.mean(a.voiced[:n] != b.voiced[:n]))


def frechet_distance(emb_a: np.ndarray, emb_b: np.ndarray) -> float:
    """Distância de Fréchet entre gaussianas ajustadas a dois conjuntos de embeddings (N, d)."""
    emb_a, emb_b = np.atleast_2d(emb_a), np.atleast_2d(emb_b)
    if emb_a.shape[1] != emb_b.shape[1]:
        raise ShapeError(f"embeddings com dimensões {emb_a.shape[1]} e {emb_b.shape[1]}")
    if emb_a.shape[0] < 2 or emb_b.shape[0] < 2:
        raise InvalidInputError("são necessários ao menos 2 embeddings por conjunto")
    mu_a, mu_b = emb_a.mean(axis=0), emb_b.mean(axis=0)
    cov_a, cov_b = np.atleast_2d(np.cov(emb_a, rowvar=False)), np.atleast_2d(np.cov(emb_b, rowvar=False))
    covmean, _ = linalg.sqrtm(cov_a @ cov_b, disp=False)
    if not np.all(np.isfinite(covmean)):
        # matriz quase singular: desloca as diagonais
        offset = np.eye(cov_a.shape[0]) * 1e-6
        covmean = linalg.sqrtm((cov_a + offset) @ (cov_b + offset))
    covmean = np.real(covmean)
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(covmean))
    return max(value, 0.0)


def _load_embeddings(directory: Union[str, Path]) -> np.ndarray:
    paths = sorted(Path(directory).glob("*.srnf"))
    if not paths:
        raise InvalidInputError(f"nenhum embedding .srnf em {directory}")
    # um vetor por clipe: média sobre as linhas do arquivo
    return np.stack([read_srnf(p).mean(axis=0) for p in paths])


def fad_from_files(dir_a: Union[str, Path], dir_b: Union[str, Path]) -> float:
    """FAD entre dois diretórios de embeddings por clipe calculados fora do toolkit."""
    return frechet_distance(_load_embeddings(dir_a), _load_embeddings(dir_b))


def nhr_distance(a: float, b: float) -> float:
    """Distância linear entre dois NHR, a escala em que a média por estilo é tomada."""
    return abs(a - b)


def fixed_references(records: Sequence[CorpusRecord], test_songs: Optional[Sequence[str]] = None
                     ) -> Dict[str, CorpusRecord]:
    """
    Uma referência fixa por estilo: o primeiro clipe do estilo fora das canções
    de teste, ou o primeiro clipe do estilo quando todas são de teste.
    """
    test = set(test_songs or [])
    references: Dict[str, CorpusRecord] = {}
    for record in records:
        if record.song_id not in test and record.style not in references:
            references[record.style] = record
    for record in records:
        references.setdefault(record.style, record)
    return references


def expected_pair_count(records: Sequence[CorpusRecord], test_songs: Optional[Sequence[str]] = None) -> int:
    """clipes de teste × (estilos − 1)."""
    styles = {r.style for r in records}
    clips = [r for r in records if not test_songs or r.song_id in test_songs]
    return len(clips) * (len(styles) - 1)


def style_mean_nhr(records: Sequence[CorpusRecord], cfg: FrameConfig) -> Dict[str, float]:
    """NHR médio de cada estilo sobre os clipes do corpus."""
    values: Dict[str, List[float]] = {}
    for record in records:
        wav = load_wav(record.wav_path, cfg.sample_rate)
        values.setdefault(record.style, []).append(style_proxy_metrics(wav, cfg).nhr)
    return {style: math.fsum(v) / len(v) for style, v in values.items()}


def summarize(records: Sequence[PairRecord]) -> Dict[str, MetricSummary]:
    """Média aritmética exata de cada métrica sobre os pares que a têm."""
    aggregates = {}
    for metric in METRICS:
        values = [getattr(r, metric) for r in records if getattr(r, metric) is not None]
        if values:
            aggregates[metric] = MetricSummary(mean=math.fsum(values) / len(values), count=len(values))
    closer = [r.style_proxy_distance_to_ref < r.style_proxy_distance_to_src for r in records
              if r.style_proxy_distance_to_ref is not None and r.style_proxy_distance_to_src is not None]
    if closer:
        aggregates["closer_to_reference"] = MetricSummary(mean=sum(closer) / len(closer), count=len(closer))
    improved = [r.f0_rmse_cents < r.f0_rmse_cents_unprocessed for r in records
                if r.f0_rmse_cents is not None and r.f0_rmse_cents_unprocessed is not None]
    if improved:
        aggregates["postprocess_improved"] = MetricSummary(mean=sum(improved) / len(improved), count=len(improved))
    return aggregates


def _evaluate_pair(ckpt: Checkpoint, cfg: FrameConfig, source: CorpusRecord, reference: CorpusRecord,
                   target: Optional[CorpusRecord], features: Dict[str, ClipFeatures], style_nhr: Dict[str, float],
                   euler_steps: int, griffin_lim_iters: int, postprocess: bool, seed: int) -> PairRecord:
    src_feat, ref_feat = features[source.clip_id], features[reference.clip_id]
    mel = convert_features(ckpt, src_feat, ref_feat, euler_steps, seed)
    raw = griffin_lim_invert(mel, cfg, griffin_lim_iters)
    ref_stats = f0_stats(ref_feat.f0)
    # a melodia esperada é o F0 da fonte levado às estatísticas da referência
    expected_f0 = mean_variance_shift_f0(src_feat.f0, ref_stats)

    output = raw
    unprocessed = None
    if postprocess:
        output = postprocess_swap(load_wav(source.wav_path, cfg.sample_rate), raw, ref_stats, cfg)
        unprocessed = f0_rmse_cents(extract_f0(raw, cfg), expected_f0)
    output_f0 = extract_f0(output, cfg)
    output_nhr = style_proxy_metrics(output, cfg).nhr

    return PairRecord(
        source_clip_id=source.clip_id,
        source_style=source.style,
        target_style=reference.style,
        reference_clip_id=reference.clip_id,
        mel_distance=mel_distance(mel, features[target.clip_id].mel) if target is not None else None,
        f0_rmse_cents=f0_rmse_cents(output_f0, expected_f0),
        f0_rmse_cents_unprocessed=unprocessed,
        vuv_error=vuv_error(output_f0, src_feat.f0),
        output_nhr=output_nhr,
        style_proxy_distance_to_ref=nhr_distance(output_nhr, style_nhr[reference.style]),
        style_proxy_distance_to_src=nhr_distance(output_nhr, style_nhr[source.style]),
    )


def _run_pair(shared: Dict, source: CorpusRecord, target_style: str, seed: int) -> PairRecord:
    reference = shared["references"][target_style]
    try:
        return _evaluate_pair(shared["ckpt"], shared["cfg"], source, reference,
                              shared["parallel"].get((source.song_id, target_style)), shared["features"],
                              shared["style_nhr"], shared["euler_steps"], shared["griffin_lim_iters"],
                              shared["postprocess"], seed)
    except (SerenadeError, ValueError) as e:
        logger.warning("par %s -> %s falhou: %s", source.clip_id, target_style, e)
        return PairRecord(
            source_clip_id=source.clip_id,
            source_style=source.style,
            target_style=target_style,
            reference_clip_id=reference.clip_id,
            error=str(e),
        )


_worker_state: Dict = {}


def _init_worker(shared: Dict) -> None:
    # um fio de torch por processo
    torch.set_num_threads(1)
    _worker_state.update(shared)


def _run_pair_in_worker(args: Tuple[CorpusRecord, str, int]) -> PairRecord:
    return _run_pair(_worker_state, *args)


def evaluate_conversion(records: Sequence[CorpusRecord], features: Dict[str, ClipFeatures], ckpt: Checkpoint,
                        cfg: FrameConfig, euler_steps: int = 32, griffin_lim_iters: int = 60,
                        postprocess: bool = False, seed: int = 0,
                        test_songs: Optional[Sequence[str]] = None, jobs: int = 1) -> EvalReport:
    """
    Converte cada clipe de teste para cada outro estilo usando a referência
    fixa do estilo alvo e mede o resultado contra a interpretação paralela no
    estilo alvo e contra a fonte. Falhas ficam registradas no par.

    Args:
        records: Manifesto completo (define estilos, referências e paralelos).
        features: Trilhas por clip_id.
        ckpt: Checkpoint treinado.
        cfg: Enquadramento.
        euler_steps: Passos do integrador.
        griffin_lim_iters: Iterações da inversão.
        postprocess: Aplicar a troca de F0 e medir também a saída sem ela.
        seed: Semente base do ruído inicial.
        test_songs: Canções avaliadas; None avalia todas.
        jobs: Processos paralelos; a semente de cada par não depende da distribuição.
    """
    styles = sorted({r.style for r in records})
    if len(styles) < 2:
        raise InvalidInputError("o corpus precisa de pelo menos dois estilos")
    sources = [r for r in records if not test_songs or r.song_id in test_songs]
    shared = {
        "ckpt": ckpt,
        "cfg": cfg,
        "references": fixed_references(records, test_songs),
        "parallel": {(r.song_id, r.style): r for r in records},
        "features": features,
        "style_nhr": style_mean_nhr(records, cfg),
        "euler_steps": euler_steps,
        "griffin_lim_iters": griffin_lim_iters,
        "postprocess": postprocess,
    }

    tasks = [(s, t) for s in sources for t in styles if t != s.style]
    tasks = [(source, target_style, seed + index) for index, (source, target_style) in enumerate(tasks)]
    if jobs > 1 and len(tasks) > 1:
        # torch não é seguro sob fork depois de usar seus fios
        context = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=context, initializer=_init_worker,
                                 initargs=(shared,)) as pool:
            mapped = pool.map(_run_pair_in_worker, tasks)
            pairs = list(tqdm(mapped, total=len(tasks), desc="evaluate", leave=False, disable=None))
    else:
        pairs = [_run_pair(shared, *task) for task in tqdm(tasks, desc="evaluate", leave=False, disable=None)]

    failed = sum(not p.ok for p in pairs)
    logger.info("avaliação: %d pares, %d falhas", len(pairs), failed)
    return EvalReport(
        records=pairs,
        aggregates=summarize(pairs),
        metadata={
            "pairs": str(len(pairs)),
            "expected_pairs": str(expected_pair_count(records, test_songs)),
            "failed": str(failed),
            "styles": ",".join(styles),
            "euler_steps": str(euler_steps),
            "postprocess": str(postprocess).lower(),
            "seed": str(seed),
            "checkpoint_step": str(ckpt.step),
        },
    )
