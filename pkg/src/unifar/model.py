"""The composed pipeline (tokenizer + base encoder + facet aggregator) and
its checkpoint format.

Checkpoints are a directory: ``manifest.json`` describing the architecture
plus one little-endian float32 blob per parameter tensor under ``blobs/``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import torch
from torch import nn

from .aggregation import FacetAggregator, FacetRepresentation
from .config import AggregationConfig, EncoderConfig
from .encoding import (
    InputSequence,
    TokenizedInput,
    context_vector,
    encode,
    make_encoder,
    make_tokenizer,
    pool_sentences,
    tokenize,
)
from .errors import ShapeMismatch

CHECKPOINT_FORMAT = "UNIFAR-CKPT v1"


@dataclass
class EncodedInput:
    """Intermediate encoder outputs for one input."""

    tokenized: TokenizedInput
    token_embeddings: torch.Tensor  # L x h
    sentence_embeddings: torch.Tensor  # |S| x h
    context: torch.Tensor  # h
    input_id: str | None = None


class UnifarModel(nn.Module):
    """End-to-end facet representation model over single inputs."""

    def __init__(
        self,
        encoder: nn.Module,
        aggregator: FacetAggregator,
        tokenizer,
        encoder_config: EncoderConfig,
    ):
        super().__init__()
        self.encoder = encoder
        self.aggregator = aggregator
        self.tokenizer = tokenizer
        self.encoder_config = encoder_config

    # ------------------------------------------------------------ building

    @classmethod
    def build(
        cls,
        encoder_cfg: EncoderConfig | None = None,
        agg_cfg: AggregationConfig | None = None,
        seed: int | None = 42,
    ) -> "UnifarModel":
        """Construct a model with deterministic initialization under a seed."""
        encoder_cfg = encoder_cfg or EncoderConfig()
        agg_cfg = agg_cfg or AggregationConfig()
        if seed is not None:
            torch.manual_seed(seed)
        tokenizer = make_tokenizer(encoder_cfg.base_model_name, encoder_cfg.vocab_size)
        encoder = make_encoder(
            encoder_cfg.base_model_name,
            encoder_cfg.hidden_size,
            getattr(tokenizer, "vocab_size", encoder_cfg.vocab_size),
        )
        anchor_values = None
        if agg_cfg.anchor_init == "facet_words":
            anchor_values = _facet_word_anchors(
                agg_cfg.facet_names, tokenizer, encoder
            )
        aggregator = FacetAggregator(
            hidden_size=encoder.hidden_size,
            n_facet=agg_cfg.n_facet,
            facet_names=agg_cfg.facet_names,
            head_count=agg_cfg.head_count,
            anchor_init=agg_cfg.anchor_init if anchor_values is None else "random",
            anchor_init_std=agg_cfg.anchor_init_std,
            anchor_values=anchor_values,
            use_input_context=agg_cfg.use_input_context,
            branch_override=agg_cfg.branch_override,
        )
        if agg_cfg.freeze_anchors:
            aggregator.anchors.requires_grad_(False)
        return cls(encoder, aggregator, tokenizer, encoder_cfg)

    # ------------------------------------------------------------- forward

    def encode_input(self, seq: InputSequence) -> EncodedInput:
        """Tokenize, run the base encoder, pool sentences, pick the context."""
        tok = tokenize(seq, self.tokenizer, self.encoder_config.max_sequence_length)
        token_emb = encode(tok, self.encoder)
        sent_emb = pool_sentences(token_emb, tok)
        ctx = context_vector(token_emb, sent_emb, tok)
        return EncodedInput(
            tokenized=tok,
            token_embeddings=token_emb,
            sentence_embeddings=sent_emb,
            context=ctx,
            input_id=seq.input_id,
        )

    def represent(self, item: InputSequence | EncodedInput) -> FacetRepresentation:
        """Full pipeline: one input to its FacetRepresentation."""
        encoded = item if isinstance(item, EncodedInput) else self.encode_input(item)
        return self.aggregator(
            encoded.token_embeddings,
            encoded.sentence_embeddings,
            encoded.context,
            input_id=encoded.input_id,
        )

    def alignment_representation(
        self, encoded: EncodedInput, detach_base: bool = True
    ) -> FacetRepresentation:
        """Aggregator pass used for attention-alignment supervision.

        With ``detach_base`` the encoder outputs enter as constants, so the
        alignment loss reaches aggregation parameters but never the base
        encoder.
        """
        token_emb = encoded.token_embeddings
        sent_emb = encoded.sentence_embeddings
        ctx = encoded.context
        if detach_base:
            token_emb, sent_emb, ctx = token_emb.detach(), sent_emb.detach(), ctx.detach()
        return self.aggregator(token_emb, sent_emb, ctx, input_id=encoded.input_id)

    def represent_corpus(
        self, seqs: Iterable[InputSequence]
    ) -> Iterator[FacetRepresentation]:
        """Inference-mode representations for a stream of inputs."""
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                for seq in seqs:
                    yield self.represent(seq)
        finally:
            self.train(was_training)

    # ----------------------------------------------------- parameter groups

    def base_parameters(self) -> list[nn.Parameter]:
        """Base encoder weights plus the shared facet anchors (low-lr group)."""
        return list(self.encoder.parameters()) + [self.aggregator.anchors]

    def aggregation_parameters(self) -> list[nn.Parameter]:
        """All other aggregation-module weights (high-lr group)."""
        anchor = self.aggregator.anchors
        return [p for p in self.aggregator.parameters() if p is not anchor]

    # -------------------------------------------------------- checkpointing

    def save(self, path: str | Path) -> None:
        save_checkpoint(self, path)


def _facet_word_anchors(facet_names, tokenizer, encoder) -> torch.Tensor:
    """Static anchors initialized from the encoder's embeddings of the facet
    words themselves (mean over word-piece rows)."""
    table = _embedding_table(encoder)
    rows = []
    for name in facet_names:
        ids, _ = tokenizer.encode_text(name)
        if not ids:
            raise ValueError(f"facet name {name!r} produced no tokens")
        rows.append(table[torch.tensor(ids)].mean(dim=0))
    return torch.stack(rows).detach()


def _embedding_table(encoder: nn.Module) -> torch.Tensor:
    if hasattr(encoder, "table"):
        return encoder.table
    if hasattr(encoder, "model"):  # pragma: no cover - HF path
        return encoder.model.get_input_embeddings().weight
    raise ValueError("encoder exposes no embedding table for facet-word anchors")


# --------------------------------------------------------------------------
# Checkpoint I/O
# --------------------------------------------------------------------------

def _blob_name(param_name: str) -> str:
    return param_name + ".bin"


def save_checkpoint(model: UnifarModel, path: str | Path) -> None:
    """Write manifest.json plus one float32 little-endian blob per parameter."""
    path = Path(path)
    blob_dir = path / "blobs"
    blob_dir.mkdir(parents=True, exist_ok=True)

    params = dict(model.named_parameters())
    agg = model.aggregator
    cfg = model.encoder_config
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "base_model_name": cfg.base_model_name,
        "hidden_size": agg.hidden_size,
        "vocab_size": getattr(model.tokenizer, "vocab_size", cfg.vocab_size),
        "max_sequence_length": cfg.max_sequence_length,
        "sentence_splitter": cfg.sentence_splitter,
        "n_facet": agg.n_facet,
        "facet_names": list(agg.facet_names),
        "head_count": agg.head_count,
        "use_input_context": agg.use_input_context,
        "branch_override": agg.branch_override,
        "freeze_anchors": not agg.anchors.requires_grad,
        "params": {name: list(p.shape) for name, p in sorted(params.items())},
    }
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, param in params.items():
        data = param.detach().cpu().numpy().astype("<f4")
        with open(blob_dir / _blob_name(name), "wb") as fh:
            fh.write(data.tobytes())


def load_checkpoint(path: str | Path) -> UnifarModel:
    """Rebuild a model from a checkpoint directory."""
    path = Path(path)
    with open(path / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format')!r}")

    encoder_cfg = EncoderConfig(
        base_model_name=manifest["base_model_name"],
        hidden_size=manifest["hidden_size"],
        vocab_size=manifest["vocab_size"],
        max_sequence_length=manifest["max_sequence_length"],
        sentence_splitter=manifest["sentence_splitter"],
    )
    agg_cfg = AggregationConfig(
        n_facet=manifest["n_facet"],
        facet_names=tuple(manifest["facet_names"]),
        head_count=manifest["head_count"],
        use_input_context=manifest["use_input_context"],
        branch_override=manifest["branch_override"],
        freeze_anchors=manifest["freeze_anchors"],
    )
    model = UnifarModel.build(encoder_cfg, agg_cfg, seed=0)

    params = dict(model.named_parameters())
    expected = manifest["params"]
    if set(params) != set(expected):
        missing = set(expected) ^ set(params)
        raise ShapeMismatch(f"checkpoint/model parameter names differ: {sorted(missing)}")
    with torch.no_grad():
        for name, param in params.items():
            shape = tuple(expected[name])
            if tuple(param.shape) != shape:
                raise ShapeMismatch(f"{name}: checkpoint shape {shape} != {tuple(param.shape)}")
            raw = (path / "blobs" / _blob_name(name)).read_bytes()
            array = np.frombuffer(raw, dtype="<f4").reshape(shape)
            param.copy_(torch.from_numpy(array.copy()))
    return model
