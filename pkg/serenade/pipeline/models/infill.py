from enum import Enum
from typing import Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from serenade.pipeline.models.audio import (
    ClipFeatures,
    LinguisticFeatures,
    LoudnessTrack,
    MelSpectrogram,
    MidiTrack,
    Waveform,
)

MIN_CONVERSION_SECONDS = 0.5


class Provenance(str, Enum):
    """Origem de um item de treino."""
    NATURAL = "natural"
    CYCLIC = "cyclic"


class Mask(BaseModel):
    """Máscara temporal: o trecho [start, end) é zerado no condicionamento e vira alvo."""
    model_config = ConfigDict(frozen=True)

    length: int = Field(..., ge=1, description="Número de quadros T")
    start: int = Field(..., ge=0, description="Primeiro quadro mascarado (t_m)")
    end: int = Field(..., description="Quadro após o último mascarado (t_n)")

    @model_validator(mode="after")
    def validate_span(self):
        if not 0 <= self.start < self.end <= self.length:
            raise ValueError(f"trecho inválido [{self.start}, {self.end}) para T={self.length}")
        return self

    @property
    def target(self) -> np.ndarray:
        """m: 1 nos quadros mascarados (alvos da perda)."""
        m = np.zeros(self.length, dtype=np.float64)
        m[self.start:self.end] = 1.0
        return m

    @property
    def keep(self) -> np.ndarray:
        """m_c: complemento exato de `target`."""
        return 1.0 - self.target

    @property
    def span_frames(self) -> int:
        return self.end - self.start


class ConditioningBundle(BaseModel):
    """Condicionamento ĉ em lote: trilhas alinhadas (B, T, ·) e vetor de estilo (B, S)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    linguistic: torch.Tensor = Field(..., description="(B, T, L)")
    midi: torch.Tensor = Field(..., description="(B, T) inteiros 0..127")
    loudness: torch.Tensor = Field(..., description="(B, T, 1) em dB")
    masked_mel: torch.Tensor = Field(..., description="ŷ_c, (B, T, D)")
    style: Optional[torch.Tensor] = Field(default=None, description="(B, style_dim)")
    prior: Optional[torch.Tensor] = Field(default=None, description="(B, T, D)")

    @model_validator(mode="after")
    def validate_alignment(self):
        batch, frames = self.midi.shape
        for name in ("linguistic", "loudness", "masked_mel", "prior"):
            tensor = getattr(self, name)
            if tensor is not None and tuple(tensor.shape[:2]) != (batch, frames):
                raise ValueError(f"{name} desalinhado: {tuple(tensor.shape)} vs {(batch, frames)}")
        if self.style is not None and self.style.shape[0] != batch:
            raise ValueError("vetor de estilo com lote incompatível")
        return self

    @property
    def n_frames(self) -> int:
        return int(self.midi.shape[1])


class TrainingItem(BaseModel):
    """Item de treino: mel alvo ŷ e as trilhas de origem de ĉ (antes da máscara)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    item_id: str
    mel: MelSpectrogram
    linguistic: LinguisticFeatures
    midi: MidiTrack
    loudness: LoudnessTrack
    style_label: Optional[str] = None
    song_id: Optional[str] = None
    provenance: Provenance = Provenance.NATURAL
    source_clip_id: Optional[str] = None
    reference_clip_id: Optional[str] = None

    @model_validator(mode="after")
    def validate_alignment(self):
        n = self.mel.n_frames
        if not (self.linguistic.n_frames == self.midi.n_frames == self.loudness.n_frames == n):
            raise ValueError(f"item {self.item_id}: trilhas desalinhadas do mel")
        if self.provenance == Provenance.NATURAL and self.style_label is None:
            raise ValueError(f"item {self.item_id}: rótulo de estilo ausente")
        return self

    @classmethod
    def from_features(cls, features: ClipFeatures, style_label: str, song_id: Optional[str] = None) -> "TrainingItem":
        return cls(
            item_id=features.clip_id or "clip",
            mel=features.mel,
            linguistic=features.linguistic,
            midi=features.midi,
            loudness=features.loudness,
            style_label=style_label,
            song_id=song_id,
            source_clip_id=features.clip_id,
        )

    @property
    def n_frames(self) -> int:
        return self.mel.n_frames


class ConversionRequest(BaseModel):
    """Par referência/fonte para conversão de estilo."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    source_wav: Waveform
    reference_wav: Waveform
    checkpoint_id: str = Field(default="", description="Identificador do checkpoint")
    euler_steps: int = Field(default=32, ge=1)
    postprocess: bool = Field(default=False, description="Aplicar a troca de F0 no pós-processamento")
    seed: int = Field(default=0, description="Semente do ruído inicial x0")

    @model_validator(mode="after")
    def validate_durations(self):
        for name in ("source_wav", "reference_wav"):
            if getattr(self, name).duration < MIN_CONVERSION_SECONDS:
                raise ValueError(f"{name} mais curto que {MIN_CONVERSION_SECONDS} s")
        return self


class CorpusRecord(BaseModel):
    """Linha do manifesto do corpus."""
    model_config = ConfigDict(frozen=True)

    clip_id: str
    wav_path: str
    style: str
    song_id: str
    phrase_id: str


class CyclicRecord(BaseModel):
    """Linha do manifesto de itens cíclicos."""
    model_config = ConfigDict(frozen=True)

    item_id: str
    source_clip_id: str
    reference_clip_id: str
    wav_path: str
    source_style: str
    reference_style: str
