"""
Núcleo de flow matching condicional com caminho de transporte ótimo:
caminho e campo alvo em forma fechada, avaliação do campo vetorial, perdas
mascaradas, integração de Euler e passo do otimizador.
"""
import logging
from typing import Callable, Iterable, List, Optional, Tuple, Union

import numpy as np
import torch

from serenade.pipeline.models.audio import MelSpectrogram
from serenade.pipeline.models.flow import CFMConfig, FlowState, StyleEmbedding
from serenade.pipeline.models.infill import ConditioningBundle, Mask
from serenade.pipeline.utils.errors import InvalidInputError, NumericError, ShapeError
from serenade.pipeline.utils.networks import PriorEncoder, SerenadeModel, StyleEncoder, normalize_mel

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, torch.Tensor]
Field = Callable[[torch.Tensor, float], torch.Tensor]


def _check_shapes(a: ArrayLike, b: ArrayLike) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"formas incompatíveis: {tuple(a.shape)} e {tuple(b.shape)}")


def _time_like(t, x: ArrayLike):
    """Expande t escalar ou por lote (B,) para broadcast contra x (B, T, D)."""
    if isinstance(t, torch.Tensor) and t.ndim == 1 and x.ndim > 1:
        return t.reshape(-1, *([1] * (x.ndim - 1))).to(x.dtype)
    return t


def flow_point(x0: ArrayLike, x1: ArrayLike, t, sigma_min: float) -> ArrayLike:
    """Ponto do caminho OT: (1 - (1 - sigma_min) t) x0 + t x1."""
    _check_shapes(x0, x1)
    t = _time_like(t, x0)
    return (1 - (1 - sigma_min) * t) * x0 + t * x1


def flow_target(x0: ArrayLike, x1: ArrayLike, sigma_min: float) -> ArrayLike:
    """Derivada temporal do caminho, independente de t: x1 - (1 - sigma_min) x0."""
    _check_shapes(x0, x1)
    return x1 - (1 - sigma_min) * x0


def prior_forward(model: SerenadeModel, cond: ConditioningBundle) -> torch.Tensor:
    """Prior de mel (B, T, D) a partir dos canais de condicionamento."""
    channels = model.condition_channels(cond.linguistic, cond.midi, cond.loudness, cond.masked_mel)
    return _prior(model.prior_encoder, channels)


def _prior(encoder: PriorEncoder, channels: torch.Tensor) -> torch.Tensor:
    return encoder(channels).transpose(1, 2)


def vf_forward(model: SerenadeModel, x: torch.Tensor, t, cond: ConditioningBundle) -> torch.Tensor:
    """
    Avalia v_t(x; cond). O bundle precisa trazer prior e vetor de estilo.

    Args:
        model: Modelo com o campo vetorial.
        x: Amostra corrente (B, T, D).
        t: Tempo escalar ou por item (B,).
        cond: Condicionamento alinhado a x.

    Returns:
        Campo (B, T, D).
    """
    if tuple(x.shape[:2]) != tuple(cond.midi.shape):
        raise ShapeError(f"x com forma {tuple(x.shape)} desalinhado do condicionamento {tuple(cond.midi.shape)}")
    if cond.prior is None or cond.style is None:
        raise InvalidInputError("condicionamento sem prior ou vetor de estilo")
    if not isinstance(t, torch.Tensor):
        t = torch.full((x.shape[0],), float(t), dtype=x.dtype, device=x.device)
    channels = model.condition_channels(cond.linguistic, cond.midi, cond.loudness, cond.masked_mel)
    channels = torch.cat([channels, cond.prior.transpose(1, 2)], dim=1)
    out = model.vector_field(x.transpose(1, 2), t.to(x.dtype), channels, cond.style)
    return out.transpose(1, 2)


def _mask_tensor(mask: Union[Mask, torch.Tensor], like: torch.Tensor) -> torch.Tensor:
    if isinstance(mask, Mask):
        m = torch.as_tensor(mask.target, dtype=like.dtype, device=like.device)
        return m.unsqueeze(0).expand(like.shape[0], -1)
    return mask.to(like.dtype)


def masked_mse(prediction: torch.Tensor, target: torch.Tensor, mask: Union[Mask, torch.Tensor]) -> torch.Tensor:
    """Erro quadrático médio sobre as células dos quadros mascarados."""
    _check_shapes(prediction, target)
    m = _mask_tensor(mask, target)
    if tuple(m.shape) != tuple(target.shape[:2]):
        raise ShapeError(f"máscara {tuple(m.shape)} desalinhada de {tuple(target.shape[:2])}")
    count = m.sum() * target.shape[-1]
    if count <= 0:
        raise InvalidInputError("máscara sem quadros alvo")
    return (((prediction - target) ** 2) * m.unsqueeze(-1)).sum() / count


def cfm_loss(model: SerenadeModel, x1: torch.Tensor, cond: ConditioningBundle, mask: Union[Mask, torch.Tensor],
             x0: torch.Tensor, t, sigma_min: float) -> torch.Tensor:
    """‖v_t(phi_t(x0)) - u_t‖² médio nos quadros mascarados."""
    x = flow_point(x0, x1, t, sigma_min)
    u = flow_target(x0, x1, sigma_min)
    return masked_mse(vf_forward(model, x, t, cond), u, mask)


def prior_loss(prior: torch.Tensor, x1: torch.Tensor, mask: Union[Mask, torch.Tensor]) -> torch.Tensor:
    return masked_mse(prior, x1, mask)


def style_encode(encoder: StyleEncoder, mel: MelSpectrogram) -> StyleEmbedding:
    """Vetor de estilo global de um enunciado."""
    param = next(encoder.parameters())
    data = torch.as_tensor(mel.data, dtype=param.dtype, device=param.device).unsqueeze(0)
    with torch.no_grad():
        vector = encoder(normalize_mel(data))[0]
    return StyleEmbedding(vector=vector.cpu().numpy())


def euler_integrate(field: Field, x0, steps: int, trajectory: bool = False):
    """
    Integra dx/dt = v(x, t) de t=0 a t=1 com Euler explícito:
    x_{k+1} = x_k + v(x_k, k/steps) / steps.

    Returns:
        x em t=1; com trajectory=True, também a lista de FlowState visitados.
    """
    if steps < 1:
        raise InvalidInputError("steps deve ser >= 1")
    dt = 1.0 / steps
    x = x0
    states: List[FlowState] = []
    for k in range(steps):
        t = k * dt
        if trajectory:
            states.append(FlowState(x=_to_numpy(x), t=t))
        x = x + dt * field(x, t)
    if trajectory:
        states.append(FlowState(x=_to_numpy(x), t=1.0))
        return x, states
    return x


def _to_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def make_optimizer(parameters: Iterable[torch.nn.Parameter], cfg: CFMConfig) -> torch.optim.Adam:
    return torch.optim.Adam(parameters, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)


def grad_step(optimizer: torch.optim.Optimizer) -> None:
    """
    Aplica um passo do Adam. Gradientes não finitos abortam o passo com NumericError
    e os parâmetros ficam intactos.
    """
    for group in optimizer.param_groups:
        for param in group["params"]:
            if param.grad is not None and not torch.isfinite(param.grad).all():
                optimizer.zero_grad(set_to_none=True)
                raise NumericError("gradiente não finito; passo abortado")
    optimizer.step()


def total_loss(model: SerenadeModel, x1: torch.Tensor, cond: ConditioningBundle, mask: torch.Tensor,
               x0: torch.Tensor, t: torch.Tensor, cfg: CFMConfig) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Perda de treino: CFM + peso * prior. O prior é calculado aqui e anexado
    ao condicionamento antes da avaliação do campo.

    Returns:
        (total, cfm, prior)
    """
    prior = prior_forward(model, cond)
    p_loss = prior_loss(prior, x1, mask)
    full = cond.model_copy(update={"prior": prior})
    c_loss = cfm_loss(model, x1, full, mask, x0, t, cfg.sigma_min)
    return c_loss + cfg.prior_weight * p_loss, c_loss, p_loss


def style_batch(model: SerenadeModel, mels: List[torch.Tensor]) -> torch.Tensor:
    """Vetores de estilo (B, S) de mels de comprimentos diferentes, um por enunciado."""
    return torch.cat([model.style_encoder(normalize_mel(mel).unsqueeze(0)) for mel in mels], dim=0)


def check_finite(value: torch.Tensor, what: str) -> None:
    if not torch.isfinite(value).all():
        raise NumericError(f"{what} não finito")


def prior_and_style(model: SerenadeModel, cond: ConditioningBundle, style: Optional[torch.Tensor]) -> ConditioningBundle:
    """Completa o bundle com prior e estilo para a inferência."""
    update = {"prior": prior_forward(model, cond)}
    if style is not None:
        update["style"] = style
    return cond.model_copy(update=update)
