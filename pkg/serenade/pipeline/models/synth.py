from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator


class StyleParams(BaseModel):
    """Parâmetros mensuráveis de um estilo sintético de canto."""
    model_config = ConfigDict(frozen=True)

    name: str = Field(default="custom", description="Rótulo do estilo")
    vibrato_rate: float = Field(default=5.5, ge=0.0, le=8.0, description="Taxa de vibrato em Hz")
    vibrato_depth: float = Field(default=0.0, ge=0.0, le=200.0, description="Profundidade de vibrato em cents")
    breathiness: float = Field(default=0.0, ge=0.0, le=1.0, description="Razão de amplitude ruído/harmônico")
    tilt: float = Field(default=0.0, description="Inclinação espectral em dB/oitava")
    key_offset: int = Field(default=0, ge=-12, le=12, description="Deslocamento de registro em semitons")


class SongSpec(BaseModel):
    """Partitura de uma frase: sequência de (nota MIDI, duração em segundos)."""
    model_config = ConfigDict(frozen=True)

    notes: List[Tuple[int, float]] = Field(..., min_length=1)
    key_offset: int = Field(default=0, ge=-12, le=12, description="Transposição global em semitons")

    @field_validator("notes")
    @classmethod
    def validate_notes(cls, v):
        for midi, duration in v:
            if not 36 <= midi <= 84:
                raise ValueError(f"nota {midi} fora de 36..84")
            if duration <= 0:
                raise ValueError("durações devem ser positivas")
        return v

    @property
    def duration(self) -> float:
        return float(sum(d for _, d in self.notes))

    def to_text(self) -> str:
        return ",".join(f"{m}:{d:.6f}" for m, d in self.notes)

    @classmethod
    def from_text(cls, text: str, key_offset: int = 0) -> "SongSpec":
        notes = []
        for token in text.split(","):
            midi, duration = token.split(":")
            notes.append((int(midi), float(duration)))
        return cls(notes=notes, key_offset=key_offset)


class StyleProxy(BaseModel):
    """Medidas objetivas de estilo usadas no lugar dos testes subjetivos."""
    model_config = ConfigDict(frozen=True)

    nhr: float = Field(..., ge=0.0, description="Razão de energia ruído/harmônico")
    vibrato_depth_cents: float = Field(..., ge=0.0)
    tilt_db_per_oct: float
