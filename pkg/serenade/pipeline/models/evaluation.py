from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class PairRecord(BaseModel):
    """Resultado de uma conversão (clipe fonte → estilo alvo)."""

    source_clip_id: str
    source_style: str
    target_style: str
    reference_clip_id: str
    mel_distance: Optional[float] = Field(default=None, ge=0.0)
    f0_rmse_cents: Optional[float] = Field(default=None, ge=0.0)
    f0_rmse_cents_unprocessed: Optional[float] = Field(default=None, ge=0.0)
    vuv_error: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    output_nhr: Optional[float] = Field(default=None, ge=0.0)
    style_proxy_distance_to_ref: Optional[float] = Field(default=None, ge=0.0)
    style_proxy_distance_to_src: Optional[float] = Field(default=None, ge=0.0)
    error: Optional[str] = Field(default=None, description="Mensagem de erro da conversão, se houver")

    @property
    def ok(self) -> bool:
        return self.error is None


class MetricSummary(BaseModel):
    mean: float
    count: int


class EvalReport(BaseModel):
    """Relatório objetivo de conversão com agregados."""

    records: List[PairRecord] = Field(default_factory=list)
    aggregates: Dict[str, MetricSummary] = Field(default_factory=dict)
    metadata: Dict[str, str] = Field(default_factory=dict)
