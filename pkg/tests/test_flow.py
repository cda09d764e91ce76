import math

import numpy as np
import pytest
import torch

from serenade.pipeline.models.audio import MelSpectrogram
from serenade.pipeline.models.infill import ConditioningBundle, Mask
from serenade.pipeline.utils.errors import InvalidInputError, NumericError, ShapeError
from serenade.pipeline.utils.flow import (
    cfm_loss,
    euler_integrate,
    flow_point,
    flow_target,
    grad_step,
    make_optimizer,
    masked_mse,
    prior_and_style,
    prior_forward,
    style_batch,
    style_encode,
    total_loss,
    vf_forward,
)
from serenade.pipeline.utils.networks import SerenadeModel

N_MELS = 20
N_FRAMES = 12
SAMPLE_SIGMA = 1e-4


def _bundle(model: SerenadeModel, batch: int = 2, dtype=torch.float32, seed: int = 0) -> ConditioningBundle:
    g = torch.Generator().manual_seed(seed)
    cfg = model.cfg
    return ConditioningBundle(
        linguistic=torch.randn(batch, N_FRAMES, cfg.linguistic_dim, generator=g, dtype=dtype),
        midi=torch.randint(40, 80, (batch, N_FRAMES), generator=g),
        loudness=-60.0 * torch.rand(batch, N_FRAMES, 1, generator=g, dtype=dtype),
        masked_mel=torch.randn(batch, N_FRAMES, N_MELS, generator=g, dtype=dtype),
    )


def _model(cfm_cfg, seed: int = 0) -> SerenadeModel:
    torch.manual_seed(seed)
    return SerenadeModel(N_MELS, cfm_cfg)


def test_flow_point_endpoints():
    """Testa os extremos do caminho OT em 1000 instâncias."""
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((1000, 8))
    x1 = rng.standard_normal((1000, 8))

    assert np.array_equal(flow_point(x0, x1, 0.0, SAMPLE_SIGMA), x0)
    assert np.allclose(flow_point(x0, x1, 1.0, 0.0), x1, atol=1e-15)


def test_flow_target_is_path_derivative():
    """Testa que o campo alvo é a derivada exata do caminho."""
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal((1000, 8))
    x1 = rng.standard_normal((1000, 8))
    t = rng.uniform(0.0, 0.9, size=(1000, 1))
    h = 1e-3

    derivative = (flow_point(x0, x1, t + h, SAMPLE_SIGMA) - flow_point(x0, x1, t, SAMPLE_SIGMA)) / h
    assert np.allclose(derivative, flow_target(x0, x1, SAMPLE_SIGMA), atol=1e-9)


def test_flow_shape_mismatch():
    """Testa formas incompatíveis."""
    with pytest.raises(ShapeError):
        flow_point(np.zeros((2, 3)), np.zeros((3, 2)), 0.5, SAMPLE_SIGMA)


def test_euler_first_order():
    """Testa a ordem do integrador em dx/dt = x: o erro cai pela metade ao dobrar os passos."""
    errors = [abs(math.e - euler_integrate(lambda x, t: x, 1.0, n)) for n in (16, 32, 64, 128)]

    for coarse, fine in zip(errors, errors[1:]):
        assert 2.0 * 0.85 <= coarse / fine <= 2.0 * 1.15


def test_euler_trajectory():
    """Testa a trajetória devolvida pelo integrador."""
    x, states = euler_integrate(lambda x, t: np.ones_like(x), np.zeros(3), 4, trajectory=True)

    assert len(states) == 5
    assert [s.t for s in states] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert np.allclose(x, 1.0)

    with pytest.raises(InvalidInputError):
        euler_integrate(lambda x, t: x, 1.0, 0)


def test_masked_mse_ignores_unmasked_frames():
    """Testa que apenas os quadros mascarados contam na perda."""
    target = torch.zeros(1, 10, 4)
    prediction = torch.zeros(1, 10, 4)
    prediction[0, :3] = 5.0
    mask = Mask(length=10, start=3, end=8)

    assert masked_mse(prediction, target, mask).item() == 0.0

    prediction[0, 5] = 2.0
    # 4 células com erro 4, divididas por 5 quadros x 4 bandas
    assert masked_mse(prediction, target, mask).item() == pytest.approx(16.0 / 20.0)

    with pytest.raises(InvalidInputError):
        masked_mse(prediction, target, torch.zeros(1, 10))


def test_vf_forward_shapes(cfm_cfg):
    """Testa o campo vetorial com prior e estilo."""
    model = _model(cfm_cfg)
    cond = _bundle(model)
    style = torch.randn(2, cfm_cfg.style_dim)
    full = prior_and_style(model, cond, style)

    out = vf_forward(model, torch.randn(2, N_FRAMES, N_MELS), 0.3, full)
    assert out.shape == (2, N_FRAMES, N_MELS)
    assert prior_forward(model, cond).shape == (2, N_FRAMES, N_MELS)

    # Verificar que o prior é obrigatório
    with pytest.raises(InvalidInputError):
        vf_forward(model, torch.randn(2, N_FRAMES, N_MELS), 0.3, cond)


def test_vector_field_starts_at_zero(cfm_cfg):
    """Testa que na inicialização a perda CFM é o quadrado médio do alvo."""
    model = _model(cfm_cfg)
    cond = prior_and_style(model, _bundle(model), torch.randn(2, cfm_cfg.style_dim))
    x0, x1 = torch.randn(2, N_FRAMES, N_MELS), torch.randn(2, N_FRAMES, N_MELS)
    mask = Mask(length=N_FRAMES, start=2, end=9)

    loss = cfm_loss(model, x1, cond, mask, x0, torch.tensor([0.2, 0.7]), SAMPLE_SIGMA)
    expected = masked_mse(torch.zeros_like(x1), flow_target(x0, x1, SAMPLE_SIGMA), mask)
    assert loss.item() == pytest.approx(expected.item(), rel=1e-6)


def test_style_encode_deterministic(cfm_cfg):
    """Testa o vetor de estilo de um enunciado."""
    model = _model(cfm_cfg)
    mel = MelSpectrogram(data=np.random.default_rng(0).uniform(-10, 0, (40, N_MELS)), n_mels=N_MELS)

    a = style_encode(model.style_encoder, mel)
    b = style_encode(model.style_encoder, mel)
    assert a.vector.shape == (cfm_cfg.style_dim,)
    assert np.array_equal(a.vector, b.vector)
    assert a.cosine(b) == pytest.approx(1.0)


def test_gradients_match_finite_differences(cfm_cfg):
    """Testa gradientes analíticos contra diferenças centrais em float64."""
    model = _model(cfm_cfg).double()
    # saída zerada anula o gradiente das camadas internas; sorteia pesos
    torch.nn.init.normal_(model.vector_field.output_projection.weight, std=0.1)
    for module in model.modules():
        if hasattr(module, "fc") and isinstance(module.fc, torch.nn.Linear):
            torch.nn.init.normal_(module.fc.weight, std=0.1)

    cond = _bundle(model, dtype=torch.float64, seed=3)
    g = torch.Generator().manual_seed(4)
    x0 = torch.randn(2, N_FRAMES, N_MELS, generator=g, dtype=torch.float64)
    x1 = torch.randn(2, N_FRAMES, N_MELS, generator=g, dtype=torch.float64)
    t = torch.tensor([0.3, 0.8], dtype=torch.float64)
    mask = torch.zeros(2, N_FRAMES, dtype=torch.float64)
    mask[:, 3:10] = 1.0
    mels = [torch.randn(30, N_MELS, generator=g, dtype=torch.float64) * 2 - 5 for _ in range(2)]

    def loss_fn():
        style = style_batch(model, mels)
        total, _, _ = total_loss(model, x1, cond.model_copy(update={"style": style}), mask, x0, t, model.cfg)
        return total

    model.zero_grad()
    loss_fn().backward()
    picked = []
    rng = np.random.default_rng(5)
    for module_name in ("vector_field", "prior_encoder", "style_encoder"):
        params = [p for p in getattr(model, module_name).parameters() if p.grad is not None]
        for _ in range(70):
            p = params[int(rng.integers(0, len(params)))]
            picked.append((p, int(rng.integers(0, p.numel()))))

    checked = 0
    with torch.no_grad():
        for p, index in picked:
            analytic = p.grad.reshape(-1)[index].item()
            flat = p.data.reshape(-1)
            original = flat[index].item()
            eps = 1e-5
            flat[index] = original + eps
            up = loss_fn().item()
            flat[index] = original - eps
            down = loss_fn().item()
            flat[index] = original
            numeric = (up - down) / (2 * eps)
            scale = max(abs(analytic), abs(numeric))
            if scale < 1e-5:
                continue
            assert abs(analytic - numeric) / scale < 1e-4
            checked += 1
    assert checked >= 100


def test_grad_step_rejects_non_finite(cfm_cfg):
    """Testa que gradientes não finitos abortam o passo sem alterar parâmetros."""
    model = _model(cfm_cfg)
    optimizer = make_optimizer(model.parameters(), cfm_cfg)
    before = [p.detach().clone() for p in model.parameters()]
    for p in model.parameters():
        p.grad = torch.zeros_like(p)
    next(model.parameters()).grad.fill_(float("nan"))

    with pytest.raises(NumericError):
        grad_step(optimizer)
    assert all(torch.equal(a, b) for a, b in zip(before, model.parameters()))
