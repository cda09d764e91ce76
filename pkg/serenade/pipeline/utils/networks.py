"""
Redes do modelo: campo vetorial (UNet 1-D com modulação de estilo após cada
bloco residual), codificador de prior, codificador de estilo GST e a tabela
de embedding MIDI compartilhada.
"""
import math
from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F

from serenade.pipeline.models.flow import CFMConfig
from serenade.pipeline.utils.errors import ShapeError

# Normalização fixa do log-mel antes de entrar nas redes
MEL_MEAN = -5.0
MEL_STD = 2.5
# Loudness em dB [-60, 0] levado para [-1, 1]
LOUDNESS_CENTER_DB = -30.0
LOUDNESS_SCALE_DB = 30.0
MIDI_VOCAB = 128
GROUPS = 8


def normalize_mel(mel: torch.Tensor) -> torch.Tensor:
    return (mel - MEL_MEAN) / MEL_STD


def denormalize_mel(mel: torch.Tensor) -> torch.Tensor:
    return mel * MEL_STD + MEL_MEAN


class TimeEmbedding(nn.Module):
    """Embedding senoidal do tempo do fluxo seguido de MLP com Mish."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.mlp = nn.Sequential(
            nn.Linear(channels, channels * 4),
            nn.Mish(),
            nn.Linear(channels * 4, channels),
        )

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.channels // 2
        scale = math.log(10000) / (half - 1)
        freqs = torch.exp(torch.arange(half, device=t.device, dtype=t.dtype) * -scale)
        # t em [0, 1] é esticado para a faixa usual de passos de difusão
        emb = (1000.0 * t)[:, None] * freqs[None, :]
        return self.mlp(torch.cat((emb.sin(), emb.cos()), dim=-1))


class StyleModulation(nn.Module):
    """Modulação afim (1 + gamma) * x + beta a partir do vetor de estilo; começa como identidade."""

    def __init__(self, style_dim: int, channels: int):
        super().__init__()
        self.fc = nn.Linear(style_dim, channels * 2)
        nn.init.zeros_(self.fc.weight)
        nn.init.zeros_(self.fc.bias)

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        gamma, beta = torch.chunk(self.fc(style).unsqueeze(-1), chunks=2, dim=1)
        return (1 + gamma) * x + beta


class ResnetBlock1d(nn.Module):
    def __init__(self, dim_in: int, dim_out: int, time_dim: int, style_dim: int):
        super().__init__()
        self.block1 = nn.Sequential(nn.Conv1d(dim_in, dim_out, 3, padding=1), nn.GroupNorm(GROUPS, dim_out), nn.Mish())
        self.block2 = nn.Sequential(nn.Conv1d(dim_out, dim_out, 3, padding=1), nn.GroupNorm(GROUPS, dim_out), nn.Mish())
        self.time_projection = nn.Sequential(nn.Mish(), nn.Linear(time_dim, dim_out))
        self.shortcut = nn.Conv1d(dim_in, dim_out, 1) if dim_in != dim_out else nn.Identity()
        self.style = StyleModulation(style_dim, dim_out)

    def forward(self, x: torch.Tensor, time: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        h = self.block1(x) + self.time_projection(time).unsqueeze(-1)
        h = self.block2(h)
        return self.style(h + self.shortcut(x), style)


class AttentionBlock1d(nn.Module):
    def __init__(self, channels: int, head_dim: int):
        super().__init__()
        self.norm = nn.GroupNorm(GROUPS, channels)
        self.attention = nn.MultiheadAttention(channels, max(1, channels // head_dim), batch_first=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm(x).transpose(1, 2)
        h, _ = self.attention(h, h, h, need_weights=False)
        return x + h.transpose(1, 2)


class VectorFieldNet(nn.Module):
    """
    UNet 1-D sobre (B, C, T): dois estágios de descida/subida, um estágio de
    atenção no gargalo e projeção de saída inicializada em zero.
    """

    def __init__(self, n_mels: int, cond_channels: int, cfg: CFMConfig):
        super().__init__()
        c = cfg.channels
        self.input_projection = nn.Conv1d(n_mels + cond_channels, c, 1)
        self.time_embedding = TimeEmbedding(c)
        self.down = nn.ModuleList([ResnetBlock1d(c, c, c, cfg.style_dim) for _ in range(2)])
        self.downsample = nn.ModuleList([nn.Conv1d(c, c, 3, stride=2, padding=1) for _ in range(2)])
        self.mid1 = ResnetBlock1d(c, c, c, cfg.style_dim)
        self.mid_attention = AttentionBlock1d(c, cfg.attention_head_dim)
        self.mid2 = ResnetBlock1d(c, c, c, cfg.style_dim)
        self.upsample = nn.ModuleList([nn.ConvTranspose1d(c, c, 4, stride=2, padding=1) for _ in range(2)])
        self.up = nn.ModuleList([ResnetBlock1d(2 * c, c, c, cfg.style_dim) for _ in range(2)])
        self.output_projection = nn.Conv1d(c, n_mels, 1)
        nn.init.zeros_(self.output_projection.weight)
        nn.init.zeros_(self.output_projection.bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor, cond: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        """
        :param x: [B, D, T]
        :param t: [B,]
        :param cond: [B, C_cond, T]
        :param style: [B, style_dim]
        :return: [B, D, T]
        """
        frames = x.shape[-1]
        pad = (-frames) % 4
        h = F.pad(torch.cat([x, cond], dim=1), (0, pad))
        h = self.input_projection(h)
        time = self.time_embedding(t)

        skips: List[torch.Tensor] = []
        for block, down in zip(self.down, self.downsample):
            h = block(h, time, style)
            skips.append(h)
            h = down(h)
        h = self.mid1(h, time, style)
        h = self.mid_attention(h)
        h = self.mid2(h, time, style)
        for up, block in zip(self.upsample, self.up):
            h = up(h)
            h = block(torch.cat([h, skips.pop()], dim=1), time, style)
        return self.output_projection(h)[..., :frames]


class PriorEncoder(nn.Module):
    """Pilha convolucional que mapeia os canais de condicionamento para um prior (B, D, T)."""

    def __init__(self, cond_channels: int, n_mels: int, channels: int, layers: int = 3):
        super().__init__()
        blocks = []
        dim = cond_channels
        for _ in range(layers):
            blocks += [nn.Conv1d(dim, channels, 5, padding=2), nn.GroupNorm(GROUPS, channels), nn.Mish()]
            dim = channels
        self.body = nn.Sequential(*blocks)
        self.output_projection = nn.Conv1d(channels, n_mels, 1)

    def forward(self, cond: torch.Tensor) -> torch.Tensor:
        return self.output_projection(self.body(cond))


class StyleEncoder(nn.Module):
    """
    Codificador de referência simplificado: convoluções com passo 2, média
    temporal e atenção sobre tokens de estilo (GST).

    Inputs:  [B, T, n_mels] (log-mel normalizado)
    Outputs: [B, style_dim]
    """

    def __init__(self, n_mels: int, cfg: CFMConfig):
        super().__init__()
        c = cfg.channels
        self.convs = nn.Sequential(
            nn.Conv1d(n_mels, c, 3, stride=2, padding=1), nn.Mish(),
            nn.Conv1d(c, c, 3, stride=2, padding=1), nn.Mish(),
        )
        self.query = nn.Linear(c, cfg.style_dim)
        self.tokens = nn.Parameter(torch.empty(cfg.n_style_tokens, cfg.style_dim))
        nn.init.normal_(self.tokens, mean=0.0, std=0.5)
        self.output_projection = nn.Linear(cfg.style_dim, cfg.style_dim)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        h = self.convs(mel.transpose(1, 2)).mean(dim=-1)
        query = self.query(h)
        keys = torch.tanh(self.tokens)
        scores = query @ keys.T / math.sqrt(keys.shape[-1])
        return self.output_projection(torch.softmax(scores, dim=-1) @ keys)


class SerenadeModel(nn.Module):
    """Conjunto treinável: campo vetorial, prior, estilo e embedding MIDI."""

    def __init__(self, n_mels: int, cfg: CFMConfig):
        super().__init__()
        self.n_mels = n_mels
        self.cfg = cfg
        # linguístico + MIDI + loudness + mel mascarado
        cond_channels = cfg.linguistic_dim + cfg.midi_dim + 1 + n_mels
        self.midi_embedding = nn.Embedding(MIDI_VOCAB, cfg.midi_dim)
        self.prior_encoder = PriorEncoder(cond_channels, n_mels, cfg.channels)
        self.style_encoder = StyleEncoder(n_mels, cfg)
        # o campo vetorial ainda recebe o prior como grupo extra de canais
        self.vector_field = VectorFieldNet(n_mels, cond_channels + n_mels, cfg)

    def architecture(self) -> List[int]:
        """Vetor de arquitetura gravado no checkpoint e conferido na carga."""
        c = self.cfg
        return [self.n_mels, c.linguistic_dim, c.channels, c.style_dim, c.midi_dim, c.n_style_tokens,
                c.attention_head_dim]

    def count_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def condition_channels(self, linguistic: torch.Tensor, midi: torch.Tensor, loudness: torch.Tensor,
                           masked_mel: torch.Tensor) -> torch.Tensor:
        """Empilha os canais de condicionamento em [B, C_cond, T]."""
        frames = midi.shape[1]
        for name, tensor in (("linguistic", linguistic), ("loudness", loudness), ("masked_mel", masked_mel)):
            if tensor.shape[1] != frames:
                raise ShapeError(f"{name} com {tensor.shape[1]} quadros, esperado {frames}")
        loud = (loudness - LOUDNESS_CENTER_DB) / LOUDNESS_SCALE_DB
        stacked = torch.cat([linguistic, self.midi_embedding(midi.long()), loud, masked_mel], dim=-1)
        return stacked.transpose(1, 2)
