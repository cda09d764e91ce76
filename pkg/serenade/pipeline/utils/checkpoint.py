"""Checkpoints SRNC: parâmetros, momentos do Adam e procedência do treino."""
import logging
from collections import OrderedDict
from enum import Enum
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from serenade.pipeline.models.flow import CFMConfig
from serenade.pipeline.utils.errors import FormatError
from serenade.pipeline.utils.flow import make_optimizer
from serenade.pipeline.utils.formats import read_blocks, write_blocks
from serenade.pipeline.utils.networks import SerenadeModel

logger = logging.getLogger(__name__)

MODEL_PREFIX = "model."
OPTIM_PREFIX = "optim."


class TrainingStage(str, Enum):
    INIT = "init"
    TRAIN = "train"
    FINETUNE = "finetune"


STAGE_CODES = [TrainingStage.INIT, TrainingStage.TRAIN, TrainingStage.FINETUNE]


class Checkpoint(BaseModel):
    """Estado completo de treino de um modelo."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: SerenadeModel
    optimizer: torch.optim.Adam
    seed: int = Field(..., ge=0, lt=2 ** 32)
    step: int = Field(default=0, ge=0)
    stage: TrainingStage = TrainingStage.INIT
    loss_history: List[float] = Field(default_factory=list)

    @property
    def cfg(self) -> CFMConfig:
        return self.model.cfg


def init_checkpoint(n_mels: int, cfg: CFMConfig, seed: int) -> Checkpoint:
    """Modelo recém-inicializado; a semente fixa a inicialização dos pesos."""
    torch.manual_seed(seed)
    model = SerenadeModel(n_mels, cfg)
    logger.info("modelo inicializado com %d parâmetros (semente %d)", model.count_parameters(), seed)
    return Checkpoint(model=model, optimizer=make_optimizer(model.parameters(), cfg), seed=seed)


def _to_bytes(value: int) -> np.ndarray:
    # f32 só representa inteiros exatos até 2^24; grava em bytes
    return np.array([(value >> shift) & 0xFF for shift in (0, 8, 16, 24)], dtype=np.float64)


def _from_bytes(row: np.ndarray) -> int:
    return sum(int(round(b)) << shift for b, shift in zip(row.reshape(-1), (0, 8, 16, 24)))


def _as_rows(tensor: torch.Tensor) -> np.ndarray:
    arr = tensor.detach().cpu().numpy().astype(np.float64)
    if arr.ndim > 2:
        arr = arr.reshape(arr.shape[0], -1)
    return arr


def _restore(array: np.ndarray, like: torch.Tensor, name: str) -> torch.Tensor:
    if array.size != like.numel():
        raise FormatError(f"bloco {name} com {array.size} valores, esperado {like.numel()}")
    return torch.as_tensor(array.reshape(tuple(like.shape)), dtype=like.dtype)


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> None:
    blocks: "OrderedDict[str, np.ndarray]" = OrderedDict()
    blocks["meta.arch"] = np.array(ckpt.model.architecture(), dtype=np.float64).reshape(1, -1)
    blocks["meta.seed"] = _to_bytes(ckpt.seed).reshape(1, -1)
    blocks["meta.step"] = _to_bytes(ckpt.step).reshape(1, -1)
    blocks["meta.stage"] = np.array([[STAGE_CODES.index(ckpt.stage)]], dtype=np.float64)
    blocks["meta.loss_history"] = np.array(ckpt.loss_history, dtype=np.float64).reshape(-1, 1)
    for name, tensor in ckpt.model.state_dict().items():
        blocks[MODEL_PREFIX + name] = _as_rows(tensor)

    names = {param: name for name, param in ckpt.model.named_parameters()}
    optim_step = 0
    for param, state in ckpt.optimizer.state.items():
        if not state:
            continue
        name = names[param]
        optim_step = int(state["step"])
        blocks[f"{OPTIM_PREFIX}{name}.exp_avg"] = _as_rows(state["exp_avg"])
        blocks[f"{OPTIM_PREFIX}{name}.exp_avg_sq"] = _as_rows(state["exp_avg_sq"])
    blocks[f"{OPTIM_PREFIX}step"] = _to_bytes(optim_step).reshape(1, -1)
    write_blocks(path, blocks)
    logger.info("checkpoint gravado em %s (passo %d, estágio %s)", path, ckpt.step, ckpt.stage.value)


def load_checkpoint(path: Union[str, Path], cfg: Optional[CFMConfig] = None) -> Checkpoint:
    """
    Reconstrói modelo e otimizador. A arquitetura vem do arquivo; os demais
    hiperparâmetros (taxa de aprendizado, sigma_min, ...) vêm de `cfg`.
    """
    blocks = read_blocks(path)
    for required in ("meta.arch", "meta.seed", "meta.step", "meta.stage", "meta.loss_history", "optim.step"):
        if required not in blocks:
            raise FormatError(f"{path}: bloco obrigatório ausente: {required}")
    arch = [int(round(v)) for v in blocks["meta.arch"].reshape(-1)]
    if len(arch) != 7:
        raise FormatError(f"{path}: vetor de arquitetura inválido")
    n_mels, linguistic_dim, channels, style_dim, midi_dim, n_tokens, head_dim = arch
    base = cfg or CFMConfig()
    cfg = base.model_copy(update=dict(
        linguistic_dim=linguistic_dim, channels=channels, style_dim=style_dim, midi_dim=midi_dim,
        n_style_tokens=n_tokens, attention_head_dim=head_dim,
    ))

    model = SerenadeModel(n_mels, cfg)
    state = OrderedDict()
    for name, like in model.state_dict().items():
        key = MODEL_PREFIX + name
        if key not in blocks:
            raise FormatError(f"{path}: parâmetro ausente: {name}")
        state[name] = _restore(blocks[key], like, key)
    model.load_state_dict(state)

    optimizer = make_optimizer(model.parameters(), cfg)
    optim_step = _from_bytes(blocks["optim.step"])
    if optim_step > 0:
        for name, param in model.named_parameters():
            avg_key, sq_key = f"{OPTIM_PREFIX}{name}.exp_avg", f"{OPTIM_PREFIX}{name}.exp_avg_sq"
            if avg_key not in blocks or sq_key not in blocks:
                continue
            optimizer.state[param] = {
                "step": torch.tensor(float(optim_step)),
                "exp_avg": _restore(blocks[avg_key], param, avg_key),
                "exp_avg_sq": _restore(blocks[sq_key], param, sq_key),
            }

    stage_code = int(round(float(blocks["meta.stage"].reshape(-1)[0])))
    if not 0 <= stage_code < len(STAGE_CODES):
        raise FormatError(f"{path}: estágio desconhecido {stage_code}")
    return Checkpoint(
        model=model,
        optimizer=optimizer,
        seed=_from_bytes(blocks["meta.seed"]),
        step=_from_bytes(blocks["meta.step"]),
        stage=STAGE_CODES[stage_code],
        loss_history=[float(v) for v in blocks["meta.loss_history"].reshape(-1)],
    )
