"""Facet anchors, input-specific facet queries, and multi-granularity attention.

Learnable anchors (one per facet) are fused with the input's context vector
to form facet queries; those queries attend over sentence embeddings for
long inputs and token embeddings for short ones, the branch chosen by the
sentence-count selector. The output per input is an N_facet x h embedding
matrix plus the head-averaged attention map used for alignment supervision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import FACET_NAMES
from .errors import ShapeMismatch

SENTENCE = "sentence"
TOKEN = "token"


@dataclass
class FacetRepresentation:
    """Per-facet embeddings of one input plus its attention map.

    ``attention`` rows are probability distributions over the K attended
    units (sentences, title row included, or tokens depending on branch).
    """

    embeddings: torch.Tensor  # n_facet x h
    attention: torch.Tensor  # n_facet x K
    branch: str
    input_id: str | None = None

    @property
    def n_facet(self) -> int:
        return self.embeddings.shape[0]

    def detach(self) -> "FacetRepresentation":
        return FacetRepresentation(
            embeddings=self.embeddings.detach(),
            attention=self.attention.detach(),
            branch=self.branch,
            input_id=self.input_id,
        )

    def numpy_embeddings(self) -> np.ndarray:
        return self.embeddings.detach().cpu().numpy().astype(np.float32)


def select_branch(sentence_count: int, n_facet: int) -> str:
    """Sentence-level attention when the input has at least n_facet sentence
    units, token-level otherwise."""
    if sentence_count < 1:
        raise ValueError("sentence_count must be >= 1")
    return SENTENCE if sentence_count >= n_facet else TOKEN


class FacetAttention(nn.Module):
    """Multi-head attention over a key/value set, returning the attended
    embeddings and the head-averaged attention distribution per query."""

    def __init__(self, hidden_size: int, head_count: int):
        super().__init__()
        if hidden_size % head_count != 0:
            raise ValueError(
                f"head_count {head_count} must divide hidden size {hidden_size}"
            )
        self.hidden_size = hidden_size
        self.head_count = head_count
        self.head_dim = hidden_size // head_count
        self.q_proj = nn.Linear(hidden_size, hidden_size)
        self.k_proj = nn.Linear(hidden_size, hidden_size)
        self.v_proj = nn.Linear(hidden_size, hidden_size)
        self.out_proj = nn.Linear(hidden_size, hidden_size)

    def forward(self, queries: torch.Tensor, keys_values: torch.Tensor):
        """queries: N x h, keys_values: K x h -> (E: N x h, A: N x K)."""
        n, k = queries.shape[0], keys_values.shape[0]
        if queries.shape[1] != self.hidden_size or keys_values.shape[1] != self.hidden_size:
            raise ShapeMismatch("attention inputs do not match hidden size")
        # heads x N x head_dim / heads x K x head_dim
        q = self.q_proj(queries).view(n, self.head_count, self.head_dim).transpose(0, 1)
        key = self.k_proj(keys_values).view(k, self.head_count, self.head_dim).transpose(0, 1)
        val = self.v_proj(keys_values).view(k, self.head_count, self.head_dim).transpose(0, 1)
        scores = q @ key.transpose(1, 2) / math.sqrt(self.head_dim)
        weights = torch.softmax(scores, dim=-1)  # heads x N x K
        attention = weights.mean(dim=0)
        context = (weights @ val).transpose(0, 1).reshape(n, self.hidden_size)
        return self.out_proj(context), attention


class FacetAggregator(nn.Module):
    """Anchor-conditioned aggregation of multi-granularity embeddings.

    Facet queries: q_i = LayerNorm(a_i + MLP([a_i ; proj(context)])); the
    residual keeps the anchor as the facet's identity source. The sentence
    and token branches carry separate attention parameters.
    """

    def __init__(
        self,
        hidden_size: int,
        n_facet: int = 3,
        facet_names: tuple[str, ...] = FACET_NAMES,
        head_count: int = 8,
        anchor_init: str = "random",
        anchor_init_std: float = 0.02,
        anchor_values: torch.Tensor | None = None,
        use_input_context: bool = True,
        branch_override: str | None = None,
    ):
        super().__init__()
        if n_facet < 1:
            raise ValueError("n_facet must be >= 1")
        facet_names = tuple(facet_names)
        if len(facet_names) != n_facet or len(set(facet_names)) != n_facet:
            raise ValueError("facet_names must be distinct and match n_facet")
        if branch_override not in (None, SENTENCE, TOKEN):
            raise ValueError(f"invalid branch_override {branch_override!r}")

        self.hidden_size = hidden_size
        self.n_facet = n_facet
        self.facet_names = facet_names
        self.head_count = head_count
        self.use_input_context = use_input_context
        self.branch_override = branch_override

        if anchor_values is not None:
            if anchor_values.shape != (n_facet, hidden_size):
                raise ShapeMismatch(
                    f"anchor_values shape {tuple(anchor_values.shape)} != "
                    f"{(n_facet, hidden_size)}"
                )
            anchors = anchor_values.clone().float()
        elif anchor_init == "equal":
            # The anchor-ablation condition: one shared row for every facet,
            # which collapses all facet queries into the same vector.
            row = torch.randn(1, hidden_size) * anchor_init_std
            anchors = row.repeat(n_facet, 1)
        elif anchor_init == "random":
            anchors = torch.randn(n_facet, hidden_size) * anchor_init_std
        else:
            raise ValueError(f"unknown anchor_init {anchor_init!r}")
        self.anchors = nn.Parameter(anchors)

        self.input_proj = nn.Linear(hidden_size, hidden_size)
        self.query_mlp = nn.Sequential(
            nn.Linear(2 * hidden_size, hidden_size),
            nn.GELU(),
            nn.Linear(hidden_size, hidden_size),
        )
        self.query_norm = nn.LayerNorm(hidden_size)
        self.attn_sentence = FacetAttention(hidden_size, head_count)
        self.attn_token = FacetAttention(hidden_size, head_count)

    def facet_queries(self, context: torch.Tensor) -> torch.Tensor:
        """Fuse each anchor with the projected context vector; N_facet x h."""
        if context.shape != (self.hidden_size,):
            raise ShapeMismatch(
                f"context vector shape {tuple(context.shape)} != ({self.hidden_size},)"
            )
        if not self.use_input_context:
            context = torch.zeros_like(context)
        projected = self.input_proj(context)
        expanded = projected.unsqueeze(0).expand(self.n_facet, -1)
        fused = self.query_mlp(torch.cat([self.anchors, expanded], dim=-1))
        return self.query_norm(self.anchors + fused)

    def pick_branch(self, sentence_count: int) -> str:
        if self.branch_override is not None:
            return self.branch_override
        return select_branch(sentence_count, self.n_facet)

    def forward(
        self,
        token_embeddings: torch.Tensor,
        sentence_embeddings: torch.Tensor,
        context: torch.Tensor,
        input_id: str | None = None,
    ) -> FacetRepresentation:
        """Build queries, select the branch, and attend."""
        queries = self.facet_queries(context)
        branch = self.pick_branch(sentence_embeddings.shape[0])
        if branch == SENTENCE:
            embeddings, attention = self.attn_sentence(queries, sentence_embeddings)
        else:
            embeddings, attention = self.attn_token(queries, token_embeddings)
        return FacetRepresentation(
            embeddings=embeddings, attention=attention, branch=branch, input_id=input_id
        )
