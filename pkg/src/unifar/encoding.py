"""Input segmentation, tokenization, base encoding, and sentence pooling.

Every document or question becomes a sentence sequence serialized into one
token stream: titled documents as ``Title [SEP] S1 [SEP] ... [SEP] Sd``,
questions and title-less documents as ``[CLS] S1 [SEP] ... [SEP] Sq``.
The base encoder is replaceable; a deterministic hash tokenizer plus a
lookup-table encoder cover desk scale, and HuggingFace backends plug into
the same interfaces for pretrained models.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import torch
from torch import nn

from .errors import EmptyBoundary, EmptyInput, EncoderFailure, TitleOverflow

DOCUMENT = "document"
QUESTION = "question"


# --------------------------------------------------------------------------
# Input sequences
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class InputSequence:
    """One document or question as an ordered list of sentences."""

    kind: str
    sentences: tuple[str, ...]
    title: str | None = None
    input_id: str | None = None

    def __post_init__(self):
        if self.kind not in (DOCUMENT, QUESTION):
            raise ValueError(f"kind must be document or question, got {self.kind!r}")
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.sentences:
            raise EmptyInput("input has no sentences")
        if any(not s.strip() for s in self.sentences):
            raise EmptyInput("input contains an empty sentence")
        if self.title is not None and not self.title.strip():
            object.__setattr__(self, "title", None)

    @property
    def has_title(self) -> bool:
        return self.kind == DOCUMENT and self.title is not None


_SENTENCE_END = re.compile(r'(?<=[.!?])["\')\]]*\s+(?=[\"\'(\[]?[A-Z0-9])')


def split_sentences(text: str, splitter: str = "rules") -> list[str]:
    """Deterministic rule-based sentence splitting.

    "rules" breaks after terminal punctuation followed by whitespace and an
    upper-case/digit sentence opener; "newline" breaks on line boundaries.
    Reproducibility is the goal here, not linguistic accuracy.
    """
    if splitter == "newline":
        parts = text.splitlines()
    elif splitter == "rules":
        parts = _SENTENCE_END.split(text)
    else:
        raise ValueError(f"unknown sentence splitter {splitter!r}")
    return [p.strip() for p in parts if p.strip()]


def segment_input(
    raw: str | Sequence[str],
    kind: str,
    title: str | None = None,
    splitter: str = "rules",
    input_id: str | None = None,
) -> InputSequence:
    """Build an InputSequence from free text or a pre-split sentence list.

    Pre-split lists are used verbatim; free text goes through the rule-based
    splitter. Raises EmptyInput when nothing non-empty survives.
    """
    if isinstance(raw, str):
        sentences = split_sentences(raw, splitter)
    else:
        sentences = [s for s in raw if s.strip()]
    if not sentences:
        raise EmptyInput("no non-empty sentence in input")
    return InputSequence(kind=kind, sentences=tuple(sentences), title=title, input_id=input_id)


# --------------------------------------------------------------------------
# Tokenizers
# --------------------------------------------------------------------------

_WORD = re.compile(r"\w+|[^\w\s]")

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"


class HashTokenizer:
    """Vocabulary-free tokenizer: lower-cased word pieces hashed into a fixed
    id range. Deterministic across runs and processes (blake2b, not the
    process-salted builtin hash)."""

    NUM_SPECIAL = 4  # pad, cls, sep, unk

    def __init__(self, vocab_size: int = 50000):
        if vocab_size <= self.NUM_SPECIAL:
            raise ValueError("vocab_size too small")
        self.vocab_size = vocab_size
        self.pad_id = 0
        self.cls_id = 1
        self.sep_id = 2
        self.unk_id = 3

    def _hash(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        span = self.vocab_size - self.NUM_SPECIAL
        return self.NUM_SPECIAL + int.from_bytes(digest, "big") % span

    def encode_text(self, text: str) -> tuple[list[int], list[str]]:
        """Token ids plus the surface strings they came from."""
        words = _WORD.findall(text.lower())
        return [self._hash(w) for w in words], words


class HFTokenizer:
    """Adapter exposing a HuggingFace tokenizer through the same interface."""

    def __init__(self, model_name: str):
        try:
            from transformers import AutoTokenizer
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise EncoderFailure("transformers is not installed") from exc
        self._tok = AutoTokenizer.from_pretrained(model_name)
        self.vocab_size = self._tok.vocab_size
        self.cls_id = self._tok.cls_token_id
        self.sep_id = self._tok.sep_token_id

    def encode_text(self, text: str) -> tuple[list[int], list[str]]:
        ids = self._tok.encode(text, add_special_tokens=False)
        return ids, self._tok.convert_ids_to_tokens(ids)


# --------------------------------------------------------------------------
# Tokenized inputs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TokenizedInput:
    """Serialized token stream with per-sentence spans.

    ``sentence_boundaries`` holds half-open (start, end) token spans, one per
    surviving sentence in order, the title counted as an extra leading span
    for titled documents. Spans exclude [CLS]/[SEP]. ``context_position`` is
    the boundary index of the title span on the titled-document path, and the
    token index of [CLS] otherwise.
    """

    token_ids: tuple[int, ...]
    sentence_boundaries: tuple[tuple[int, int], ...]
    context_position: int
    kind: str
    has_title: bool
    token_texts: tuple[str, ...] = field(default=(), repr=False)

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def sentence_count(self) -> int:
        """|S|: surviving sentences, title row included when present."""
        return len(self.sentence_boundaries)


def tokenize(seq: InputSequence, tokenizer, max_sequence_length: int = 512) -> TokenizedInput:
    """Serialize an InputSequence and record sentence spans.

    Tail truncation at ``max_sequence_length``: a sentence cut mid-way keeps
    its tokens in the stream but is dropped from the boundaries, so pooling
    never averages a partial sentence. Raises TitleOverflow when the title
    alone does not fit.
    """
    ids: list[int] = []
    texts: list[str] = []
    spans: list[tuple[int, int]] = []

    titled = seq.has_title
    if titled:
        title_ids, title_texts = tokenizer.encode_text(seq.title)
        if len(title_ids) > max_sequence_length:
            raise TitleOverflow(
                f"title is {len(title_ids)} tokens, max is {max_sequence_length}"
            )
        ids.extend(title_ids)
        texts.extend(title_texts)
        spans.append((0, len(title_ids)))
    else:
        ids.append(tokenizer.cls_id)
        texts.append(CLS_TOKEN)

    for i, sentence in enumerate(seq.sentences):
        if titled or i > 0:
            ids.append(tokenizer.sep_id)
            texts.append(SEP_TOKEN)
        sent_ids, sent_texts = tokenizer.encode_text(sentence)
        start = len(ids)
        ids.extend(sent_ids)
        texts.extend(sent_texts)
        spans.append((start, start + len(sent_ids)))

    ids = ids[:max_sequence_length]
    texts = texts[:max_sequence_length]
    surviving = tuple(s for s in spans if s[1] <= len(ids) and s[1] > s[0])

    return TokenizedInput(
        token_ids=tuple(ids),
        sentence_boundaries=surviving,
        context_position=0,
        kind=seq.kind,
        has_title=titled,
        token_texts=tuple(texts),
    )


# --------------------------------------------------------------------------
# Base encoders
# --------------------------------------------------------------------------

class LookupEncoder(nn.Module):
    """Embedding-lookup base encoder: each token id maps to a trainable row.

    This is the stub/desk-scale backend; rows come straight from the table,
    so outputs are trivially deterministic in eval mode.
    """

    def __init__(self, vocab_size: int, hidden_size: int, seed: int | None = None):
        super().__init__()
        self.vocab_size = vocab_size
        self.hidden_size = hidden_size
        generator = None
        if seed is not None:
            generator = torch.Generator().manual_seed(seed)
        table = torch.empty(vocab_size, hidden_size)
        table.normal_(0.0, 0.02, generator=generator)
        self.table = nn.Parameter(table)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        return self.table[token_ids]


class TransformersEncoder(nn.Module):
    """Wrapper around a HuggingFace AutoModel returning last hidden states."""

    def __init__(self, model_name: str):
        super().__init__()
        try:
            from transformers import AutoModel
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise EncoderFailure("transformers is not installed") from exc
        self.model = AutoModel.from_pretrained(model_name)
        self.hidden_size = self.model.config.hidden_size
        self.vocab_size = self.model.config.vocab_size

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:  # pragma: no cover
        out = self.model(input_ids=token_ids.unsqueeze(0))
        return out.last_hidden_state.squeeze(0)


def encode(tok: TokenizedInput, encoder: nn.Module) -> torch.Tensor:
    """Run the base encoder on one tokenized input; returns an L x h matrix.

    Backend failures are wrapped in EncoderFailure with the cause chained.
    """
    param = next(encoder.parameters())
    ids = torch.tensor(tok.token_ids, dtype=torch.long, device=param.device)
    try:
        out = encoder(ids)
    except Exception as exc:
        raise EncoderFailure(f"base encoder failed: {exc}") from exc
    if out.shape != (len(tok), encoder.hidden_size):
        raise EncoderFailure(
            f"encoder returned shape {tuple(out.shape)}, "
            f"expected {(len(tok), encoder.hidden_size)}"
        )
    return out


def pool_sentences(token_embeddings: torch.Tensor, tok: TokenizedInput) -> torch.Tensor:
    """Mean-pool token rows within each sentence span; |S| x h output.

    The title span, when present, pools into the first row. Separator and
    [CLS] rows never enter a span.
    """
    rows = []
    for start, end in tok.sentence_boundaries:
        if end <= start:
            raise EmptyBoundary(f"empty span ({start}, {end})")
        if end > token_embeddings.shape[0]:
            raise EmptyBoundary(f"span ({start}, {end}) exceeds {token_embeddings.shape[0]} tokens")
        rows.append(token_embeddings[start:end].mean(dim=0))
    if not rows:
        raise EmptyBoundary("no sentence spans to pool")
    return torch.stack(rows)


def context_vector(
    token_embeddings: torch.Tensor,
    sentence_embeddings: torch.Tensor,
    tok: TokenizedInput,
) -> torch.Tensor:
    """The input's context vector: title row for titled documents, the [CLS]
    token row for questions and title-less documents."""
    if tok.has_title:
        return sentence_embeddings[tok.context_position]
    return token_embeddings[tok.context_position]


# --------------------------------------------------------------------------
# Factories and corpus I/O
# --------------------------------------------------------------------------

def make_tokenizer(base_model_name: str, vocab_size: int = 50000):
    if base_model_name == "lookup":
        return HashTokenizer(vocab_size)
    return HFTokenizer(base_model_name)


def make_encoder(base_model_name: str, hidden_size: int, vocab_size: int,
                 seed: int | None = None) -> nn.Module:
    if base_model_name == "lookup":
        return LookupEncoder(vocab_size, hidden_size, seed=seed)
    return TransformersEncoder(base_model_name)


def read_corpus(path: str | Path, splitter: str = "rules") -> Iterator[InputSequence]:
    """Read the JSON Lines corpus format: one record per input with keys
    id, title, sentences, kind (future-proofed: a "text" key is split)."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            yield record_to_sequence(record, splitter=splitter)


def record_to_sequence(record: dict, splitter: str = "rules") -> InputSequence:
    kind = record.get("kind", DOCUMENT)
    sentences = record.get("sentences")
    if sentences is None and "text" in record:
        sentences = split_sentences(record["text"], splitter)
    if not sentences:
        raise EmptyInput(f"record {record.get('id')!r} has no sentences")
    return InputSequence(
        kind=kind,
        sentences=tuple(sentences),
        title=record.get("title"),
        input_id=record.get("id"),
    )
