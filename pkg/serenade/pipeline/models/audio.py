from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Piso do log-mel (magnitude natural ≈ 1e-5)
LOG_FLOOR = -11.5
# Faixa de F0 vozeado aceita pelo extrator
F0_MIN_HZ = 50.0
F0_MAX_HZ = 1100.0
LOUDNESS_FLOOR_DB = -60.0


def _as_float_array(value, ndim: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} deve ter {ndim} dimensão(ões), recebido {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contém valores não finitos")
    return arr


class FrameConfig(BaseModel):
    """Configuração de enquadramento compartilhada por todos os extratores."""
    model_config = ConfigDict(frozen=True)

    sample_rate: int = Field(default=24000, gt=0, description="Taxa de amostragem em Hz")
    fft_size: int = Field(default=1024, gt=0, description="Tamanho da janela/FFT em amostras")
    hop: int = Field(default=256, gt=0, description="Salto entre quadros em amostras")
    n_mels: int = Field(default=80, ge=1, description="Número de bandas mel (D)")
    fmin: float = Field(default=0.0, ge=0.0, description="Frequência mínima do banco mel")
    fmax: float = Field(default=12000.0, gt=0.0, description="Frequência máxima do banco mel")
    log_floor: float = Field(default=LOG_FLOOR, description="Piso do log-mel")

    @model_validator(mode="after")
    def validate_framing(self):
        """Validar as relações entre os campos."""
        if self.hop > self.fft_size:
            raise ValueError("hop não pode exceder fft_size")
        if self.fmax > self.sample_rate / 2:
            raise ValueError("fmax não pode exceder a frequência de Nyquist")
        if self.fmin >= self.fmax:
            raise ValueError("fmin deve ser menor que fmax")
        return self

    @property
    def frame_seconds(self) -> float:
        return self.hop / self.sample_rate


class Waveform(BaseModel):
    """Áudio mono com taxa de amostragem."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: np.ndarray = Field(..., description="Amostras mono em [-1, 1]")
    sample_rate: int = Field(default=24000, gt=0, description="Taxa de amostragem em Hz")

    @field_validator("samples", mode="before")
    @classmethod
    def validate_samples(cls, v):
        arr = _as_float_array(v, 1, "samples")
        if arr.size and np.max(np.abs(arr)) > 1.0 + 1e-9:
            raise ValueError("amostras fora do intervalo [-1, 1]")
        return arr

    @classmethod
    def from_array(cls, samples, sample_rate: int = 24000) -> "Waveform":
        """Cria uma forma de onda limitando as amostras a [-1, 1]."""
        arr = np.asarray(samples, dtype=np.float64)
        arr = np.nan_to_num(arr, nan=0.0, posinf=1.0, neginf=-1.0)
        return cls(samples=np.clip(arr, -1.0, 1.0), sample_rate=sample_rate)

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def scaled(self, gain: float) -> "Waveform":
        return Waveform.from_array(self.samples * gain, self.sample_rate)


class MelSpectrogram(BaseModel):
    """Matriz T×D de log-magnitudes mel."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray = Field(..., description="Log-mel natural, forma (T, D)")
    hop: int = Field(default=256, gt=0)
    n_mels: int = Field(default=80, ge=1)

    @field_validator("data", mode="before")
    @classmethod
    def validate_data(cls, v):
        arr = _as_float_array(v, 2, "mel")
        if arr.shape[0] < 1:
            raise ValueError("mel precisa de pelo menos um quadro")
        if np.any(arr < LOG_FLOOR - 1e-9):
            raise ValueError("mel abaixo do piso logarítmico")
        return arr

    @model_validator(mode="after")
    def validate_dims(self):
        if self.data.shape[1] != self.n_mels:
            raise ValueError(f"mel com {self.data.shape[1]} bandas, esperado {self.n_mels}")
        return self

    @property
    def n_frames(self) -> int:
        return int(self.data.shape[0])


class F0Track(BaseModel):
    """Trilha de F0 por quadro; 0.0 indica quadro não vozeado."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray = Field(..., description="F0 em Hz por quadro")

    @field_validator("values", mode="before")
    @classmethod
    def validate_values(cls, v):
        arr = _as_float_array(v, 1, "f0")
        voiced = arr[arr > 0]
        if np.any(arr < 0):
            raise ValueError("F0 negativo")
        if voiced.size and (voiced.min() < F0_MIN_HZ - 1e-6 or voiced.max() > F0_MAX_HZ + 1e-6):
            raise ValueError(f"F0 vozeado fora de [{F0_MIN_HZ}, {F0_MAX_HZ}] Hz")
        return arr

    @property
    def voiced(self) -> np.ndarray:
        return self.values > 0

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[0])


class MidiTrack(BaseModel):
    """Notas MIDI inteiras por quadro; 0 indica pausa."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    notes: np.ndarray = Field(..., description="Números MIDI 0..127 por quadro")

    @field_validator("notes", mode="before")
    @classmethod
    def validate_notes(cls, v):
        arr = np.asarray(v)
        if arr.ndim != 1:
            raise ValueError("trilha MIDI deve ser unidimensional")
        if arr.size and (arr.min() < 0 or arr.max() > 127):
            raise ValueError("nota MIDI fora de 0..127")
        if arr.size and not np.all(np.equal(np.round(arr), arr)):
            raise ValueError("notas MIDI devem ser inteiras")
        return arr.astype(np.int64)

    @property
    def n_frames(self) -> int:
        return int(self.notes.shape[0])


class LoudnessTrack(BaseModel):
    """Nível RMS por quadro em dB, com piso em -60 dB."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray = Field(..., description="Nível em dB por quadro")

    @field_validator("values", mode="before")
    @classmethod
    def validate_values(cls, v):
        arr = _as_float_array(v, 1, "loudness")
        if arr.size and (arr.min() < LOUDNESS_FLOOR_DB - 1e-9 or arr.max() > 1e-9):
            raise ValueError("loudness fora de [-60, 0] dB")
        return arr

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[0])


class LinguisticFeatures(BaseModel):
    """Coeficientes cepstrais c1..cL por quadro (substituto do ContentVec)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray = Field(..., description="Matriz (T, L)")

    @field_validator("data", mode="before")
    @classmethod
    def validate_data(cls, v):
        return _as_float_array(v, 2, "linguistic")

    @property
    def n_frames(self) -> int:
        return int(self.data.shape[0])


class ClipFeatures(BaseModel):
    """Todas as trilhas extraídas de um clipe, alinhadas por quadro."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mel: MelSpectrogram
    f0: F0Track
    midi: MidiTrack
    loudness: LoudnessTrack
    linguistic: LinguisticFeatures
    clip_id: Optional[str] = None

    @model_validator(mode="after")
    def validate_alignment(self):
        counts = {
            "mel": self.mel.n_frames,
            "f0": self.f0.n_frames,
            "midi": self.midi.n_frames,
            "loudness": self.loudness.n_frames,
            "linguistic": self.linguistic.n_frames,
        }
        if len(set(counts.values())) != 1:
            raise ValueError(f"trilhas desalinhadas: {counts}")
        return self

    @property
    def n_frames(self) -> int:
        return self.mel.n_frames

    def trimmed(self, n_frames: int) -> "ClipFeatures":
        """Corta todas as trilhas para os primeiros n_frames quadros."""
        return ClipFeatures(
            mel=MelSpectrogram(data=self.mel.data[:n_frames], hop=self.mel.hop, n_mels=self.mel.n_mels),
            f0=F0Track(values=self.f0.values[:n_frames]),
            midi=MidiTrack(notes=self.midi.notes[:n_frames]),
            loudness=LoudnessTrack(values=self.loudness.values[:n_frames]),
            linguistic=LinguisticFeatures(data=self.linguistic.data[:n_frames]),
            clip_id=self.clip_id,
        )
