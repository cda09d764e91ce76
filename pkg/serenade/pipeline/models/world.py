import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from serenade.pipeline.models.audio import F0Track

MCEP_ORDER = 24
BAP_BANDS_HZ = ((0.0, 3000.0), (3000.0, 6000.0), (6000.0, 9000.0), (9000.0, 12000.0))


class WorldFeatures(BaseModel):
    """Tripla ⟨F0, mcep, bap⟩ por quadro, no estilo do vocoder WORLD."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    f0: F0Track
    mcep: np.ndarray = Field(..., description="Mel-cepstro (T, 25)")
    bap: np.ndarray = Field(..., description="Aperiodicidade por banda (T, 4) em [0, 1]")

    @field_validator("mcep", mode="before")
    @classmethod
    def validate_mcep(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != MCEP_ORDER + 1:
            raise ValueError(f"mcep deve ter forma (T, {MCEP_ORDER + 1})")
        if not np.all(np.isfinite(arr)):
            raise ValueError("mcep contém valores não finitos")
        return arr

    @field_validator("bap", mode="before")
    @classmethod
    def validate_bap(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != len(BAP_BANDS_HZ):
            raise ValueError(f"bap deve ter forma (T, {len(BAP_BANDS_HZ)})")
        if arr.size and (np.any(~np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("bap fora de [0, 1]")
        return arr

    @model_validator(mode="after")
    def validate_alignment(self):
        n = self.f0.n_frames
        if self.mcep.shape[0] != n or self.bap.shape[0] != n:
            raise ValueError("f0, mcep e bap devem ter o mesmo número de quadros")
        return self

    @property
    def n_frames(self) -> int:
        return self.f0.n_frames

    def trimmed(self, n_frames: int) -> "WorldFeatures":
        return WorldFeatures(
            f0=F0Track(values=self.f0.values[:n_frames]),
            mcep=self.mcep[:n_frames],
            bap=self.bap[:n_frames],
        )


class F0Stats(BaseModel):
    """Estatísticas de log-F0 sobre quadros vozeados."""
    model_config = ConfigDict(frozen=True)

    mean_logf0: float = Field(..., description="Média de ln(F0)")
    std_logf0: float = Field(..., ge=0.0, description="Desvio padrão de ln(F0)")
    voiced_count: int = Field(..., ge=0, description="Quadros vozeados usados")
