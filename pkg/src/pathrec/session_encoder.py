"""Session-level state encoder: prefix of items -> session vector + per-item logits."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

VARIANTS = ("gru", "attention")


@dataclass
class EncoderState:
    s_se: torch.Tensor
    item_scores: torch.Tensor


class SessionEncoder(nn.Module):
    """GRU over item embeddings; the ``attention`` variant adds a NARM-style local
    attention readout keyed on the final hidden state.

    ``items`` are the graph entity ids of the candidate vocabulary; row ``i`` of the
    logits scores ``items[i]``.
    """

    def __init__(self, items, d_se: int = 100, variant: str = "gru", seed: int = 0):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown encoder variant {variant!r}; expected one of {VARIANTS}")
        self.items = tuple(int(i) for i in items)
        self.vocab = {e: i for i, e in enumerate(self.items)}
        self.variant = variant
        self.d_se = d_se
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.embedding = nn.Embedding(len(self.items), d_se)
            self.gru = nn.GRU(d_se, d_se, batch_first=True)
            if variant == "attention":
                self.att_last = nn.Linear(d_se, d_se, bias=False)
                self.att_each = nn.Linear(d_se, d_se, bias=False)
                self.att_v = nn.Linear(d_se, 1, bias=False)
                self.combine = nn.Linear(2 * d_se, d_se, bias=False)
            self.output = nn.Linear(d_se, len(self.items))
        nn.init.normal_(self.embedding.weight, std=0.1, generator=torch.Generator().manual_seed(seed))
        self.double()

    def index(self, prefix) -> list[int]:
        try:
            return [self.vocab[int(e)] for e in prefix]
        except KeyError as exc:
            raise KeyError(f"item entity {exc.args[0]} is not in the encoder vocabulary") from None

    def forward(self, batch: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor]:
        """``batch`` holds vocabulary indices; returns (s_se [B, d_se], logits [B, V])."""
        if any(len(seq) == 0 for seq in batch):
            raise ValueError("empty session prefix")
        lengths = torch.tensor([len(seq) for seq in batch])
        width = int(lengths.max())
        padded = torch.zeros(len(batch), width, dtype=torch.long)
        for i, seq in enumerate(batch):
            padded[i, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        emb = self.embedding(padded)
        packed = pack_padded_sequence(emb, lengths, batch_first=True, enforce_sorted=False)
        out, h_n = self.gru(packed)
        last = h_n[-1]
        if self.variant == "gru":
            s_se = last
        else:
            hidden, _ = pad_packed_sequence(out, batch_first=True, total_length=width)
            mask = torch.arange(width)[None, :] < lengths[:, None]
            energy = self.att_v(torch.sigmoid(self.att_last(last)[:, None, :] + self.att_each(hidden))).squeeze(-1)
            energy = energy.masked_fill(~mask, 0.0)
            local = (energy[..., None] * hidden).sum(dim=1)
            s_se = self.combine(torch.cat([last, local], dim=-1))
        return s_se, self.output(s_se)


def encode(encoder: SessionEncoder, prefix) -> EncoderState:
    """Encode one prefix of item entity ids."""
    if len(prefix) == 0:
        raise ValueError("empty session prefix")
    s_se, scores = encoder([encoder.index(prefix)])
    return EncoderState(s_se[0], scores[0])


def ce_loss(item_scores: torch.Tensor, target) -> torch.Tensor:
    """Pointwise binary cross-entropy summed over the vocabulary (one positive).

    ``item_scores`` is [V] or [B, V]; ``target`` the vocabulary index (or [B] indices).
    Batched input returns the mean over rows.
    """
    scores = item_scores if item_scores.dim() == 2 else item_scores[None, :]
    target = torch.as_tensor(target, dtype=torch.long).reshape(-1)
    labels = torch.zeros_like(scores)
    labels[torch.arange(len(target)), target] = 1.0
    per_row = F.binary_cross_entropy_with_logits(scores, labels, reduction="none").sum(dim=1)
    return per_row.mean()
