import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


class CFMConfig(BaseModel):
    """Hiperparâmetros do modelo de flow matching e do otimizador."""
    model_config = ConfigDict(frozen=True)

    sigma_min: float = Field(default=1e-4, ge=0.0, lt=1.0, description="Constante de estabilidade do caminho OT")
    euler_steps: int = Field(default=32, ge=1, description="Passos do integrador de Euler")
    learning_rate: float = Field(default=1e-3, gt=0.0, description="Passo do otimizador Adam")
    style_dim: int = Field(default=64, ge=1, description="Dimensão do vetor de estilo")
    channels: int = Field(default=64, ge=8, description="Canais da UNet 1-D")
    attention_head_dim: int = Field(default=64, ge=1, description="Dimensão por cabeça de atenção")
    n_style_tokens: int = Field(default=8, ge=1, description="Tokens de estilo do codificador GST")
    midi_dim: int = Field(default=16, ge=1, description="Dimensão da tabela de embedding MIDI")
    linguistic_dim: int = Field(default=13, ge=1, description="Coeficientes linguísticos por quadro")
    prior_weight: float = Field(default=1.0, ge=0.0, description="Peso da perda do prior")
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)


class StyleEmbedding(BaseModel):
    """Vetor de estilo global, um por enunciado."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    vector: np.ndarray = Field(..., description="Vetor de dimensão style_dim")

    @field_validator("vector", mode="before")
    @classmethod
    def validate_vector(cls, v):
        arr = np.asarray(v, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding de estilo não finito")
        return arr

    def cosine(self, other: "StyleEmbedding") -> float:
        denom = np.linalg.norm(self.vector) * np.linalg.norm(other.vector)
        return float(self.vector @ other.vector / denom) if denom > 0 else 0.0


class FlowState(BaseModel):
    """Amostra corrente ao longo do fluxo."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    x: np.ndarray = Field(..., description="Matriz (T, D)")
    t: float = Field(..., ge=0.0, le=1.0, description="Tempo do fluxo")

    @field_validator("x", mode="before")
    @classmethod
    def validate_x(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("estado do fluxo não finito")
        return arr
