import logging
import os
from enum import Enum
from pathlib import Path
from typing import Annotated, Dict, List, Mapping, Optional

from dotenv import dotenv_values
from pydantic import ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, NoDecode, SettingsConfigDict

from serenade.pipeline.models.audio import FrameConfig
from serenade.pipeline.models.flow import CFMConfig
from serenade.pipeline.utils.errors import InvalidInputError, MissingFileError

logger = logging.getLogger(__name__)

ENV_PREFIX = "SERENADE_"


class MidiSource(str, Enum):
    """Origem da trilha MIDI de condicionamento."""
    AUDIO = "audio"  # quantização do F0 extraído
    SCORE = "score"  # partitura do corpus sintético (songs.tsv)


class Settings(BaseSettings):
    """Configuração de execução (RunConfig) do toolkit."""

    model_config = SettingsConfigDict(env_prefix=ENV_PREFIX, extra="forbid", case_sensitive=True)

    # Enquadramento
    SAMPLE_RATE: int = 24000
    FFT_SIZE: int = 1024
    HOP: int = 256
    N_MELS: int = 80
    FMIN: float = 0.0
    FMAX: float = 12000.0

    # Modelo de flow matching
    SIGMA_MIN: float = 1e-4
    EULER_STEPS: int = 32
    LEARNING_RATE: float = 1e-3
    STYLE_DIM: int = 64
    CHANNELS: int = 64
    PRIOR_WEIGHT: float = 1.0

    # Treino
    SEED: int = 0  # sempre explícita; nunca derivada do relógio
    TRAIN_STEPS: int = 2000
    FINETUNE_STEPS: int = 1000
    BATCH_SIZE: int = 4
    SEGMENT_FRAMES: int = 128
    LOG_EVERY: int = 100

    # Inferência e pós-processamento
    GRIFFIN_LIM_ITERS: int = 60
    POSTPROCESS: bool = False
    AUGMENT_SEMITONES: Annotated[List[int], NoDecode] = [-4, -3, -2, -1, 1, 2, 3, 4]

    # Caminhos
    CORPUS_DIR: str = "corpus"
    CACHE_DIR: str = "cache"
    CHECKPOINT_PATH: str = "serenade.srnc"
    LINGUISTIC_DIR: Optional[str] = None
    MIDI_SOURCE: MidiSource = MidiSource.AUDIO

    # Execução
    JOBS: int = 1
    LOG_LEVEL: str = "INFO"

    @field_validator("AUGMENT_SEMITONES", mode="before")
    @classmethod
    def parse_semitones(cls, v):
        if isinstance(v, str):
            v = [int(token) for token in v.replace(" ", "").split(",") if token]
        for k in v:
            if not -12 <= int(k) <= 12:
                raise ValueError(f"semitons fora de [-12, 12]: {k}")
        return v

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v):
        level = v.upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"nível de log desconhecido: {v}")
        return level

    @field_validator("JOBS", "BATCH_SIZE", "EULER_STEPS", "GRIFFIN_LIM_ITERS", "LOG_EVERY")
    @classmethod
    def validate_positive(cls, v):
        if v < 1:
            raise ValueError("deve ser >= 1")
        return v

    @field_validator("SEGMENT_FRAMES")
    @classmethod
    def validate_segment(cls, v):
        # o sorteio de máscara exige T >= 4
        if v < 4:
            raise ValueError("SEGMENT_FRAMES deve ser >= 4")
        return v

    @model_validator(mode="after")
    def validate_ranges(self):
        if self.HOP > self.FFT_SIZE:
            raise ValueError("HOP não pode exceder FFT_SIZE")
        if self.FMAX > self.SAMPLE_RATE / 2:
            raise ValueError("FMAX não pode exceder SAMPLE_RATE/2")
        if not 0.0 <= self.SIGMA_MIN < 1.0:
            raise ValueError("SIGMA_MIN deve estar em [0, 1)")
        if self.TRAIN_STEPS < 0 or self.FINETUNE_STEPS < 0:
            raise ValueError("contagens de passos não podem ser negativas")
        return self

    def frame_config(self) -> FrameConfig:
        return FrameConfig(
            sample_rate=self.SAMPLE_RATE,
            fft_size=self.FFT_SIZE,
            hop=self.HOP,
            n_mels=self.N_MELS,
            fmin=self.FMIN,
            fmax=self.FMAX,
        )

    def cfm_config(self) -> CFMConfig:
        return CFMConfig(
            sigma_min=self.SIGMA_MIN,
            euler_steps=self.EULER_STEPS,
            learning_rate=self.LEARNING_RATE,
            style_dim=self.STYLE_DIM,
            channels=self.CHANNELS,
            linguistic_dim=13,
            prior_weight=self.PRIOR_WEIGHT,
        )


def read_config_file(path: str) -> Dict[str, str]:
    """
    Lê um arquivo de configuração de linhas `chave = valor`.

    Args:
        path: Caminho do arquivo.

    Returns:
        Dict com chaves normalizadas em maiúsculas.
    """
    if not os.path.isfile(path):
        raise MissingFileError(f"arquivo de configuração não encontrado: {path}")
    values = dotenv_values(path, encoding="utf-8")
    return {key.strip().upper(): value for key, value in values.items() if value is not None}


def parse_overrides(pairs: List[str]) -> Dict[str, str]:
    """Converte `CHAVE=valor` da linha de comando em dict."""
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise InvalidInputError(f"override inválido (esperado CHAVE=valor): {pair}")
        key, value = pair.split("=", 1)
        overrides[key.strip().upper()] = value.strip()
    return overrides


def load_settings(config_path: Optional[str] = None, overrides: Optional[Mapping[str, object]] = None) -> Settings:
    """
    Monta as configurações com a precedência CLI > arquivo > ambiente > padrão.

    Valores passados ao construtor têm prioridade sobre as variáveis `SERENADE_*`,
    então basta mesclar arquivo e overrides antes de instanciar.
    """
    merged: Dict[str, object] = {}
    if config_path:
        merged.update(read_config_file(config_path))
    if overrides:
        merged.update({key.upper(): value for key, value in overrides.items() if value is not None})

    unknown = sorted(set(merged) - set(Settings.model_fields))
    if unknown:
        raise InvalidInputError(f"chaves de configuração desconhecidas: {', '.join(unknown)}")

    try:
        return Settings(**merged)
    except ValidationError as e:
        raise InvalidInputError(f"configuração inválida: {e.errors()[0]['msg']}", details=e.errors()) from e


def resolve_path(settings: Settings, value: Optional[str], field: str) -> Path:
    """Retorna o caminho explícito ou o padrão configurado no campo."""
    return Path(value if value is not None else getattr(settings, field))

