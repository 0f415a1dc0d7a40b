"""Shared fixtures: tiny deterministic models and small corpus builders."""

from __future__ import annotations

import pytest
import torch

from unifar.config import AggregationConfig, EncoderConfig, TrainConfig
from unifar.data_construction import FacetTrainingUnit, LabeledDocument
from unifar.model import UnifarModel

TINY_H = 8
TINY_VOCAB = 64
TINY_MAX_LEN = 64


def make_tiny_model(
    seed: int = 7,
    hidden_size: int = TINY_H,
    head_count: int = 1,
    vocab_size: int = TINY_VOCAB,
    max_len: int = TINY_MAX_LEN,
    anchor_init: str = "random",
    double: bool = False,
) -> UnifarModel:
    enc = EncoderConfig(
        base_model_name="lookup",
        hidden_size=hidden_size,
        vocab_size=vocab_size,
        max_sequence_length=max_len,
    )
    agg = AggregationConfig(head_count=head_count, anchor_init=anchor_init)
    model = UnifarModel.build(enc, agg, seed=seed)
    if double:
        model.double()
    return model


@pytest.fixture
def tiny_model() -> UnifarModel:
    return make_tiny_model()


@pytest.fixture
def tiny_model_double() -> UnifarModel:
    return make_tiny_model(double=True)


def make_doc(
    doc_id: str,
    n_sentences: int = 3,
    labels: tuple[str, ...] | None = None,
    title: str | None = None,
    prefix: str = "word",
    field: str | None = None,
) -> LabeledDocument:
    sentences = tuple(
        f"{prefix} {doc_id} line {i} alpha beta gamma" for i in range(n_sentences)
    )
    if labels is None:
        cycle = ("background", "method", "result")
        labels = tuple(cycle[i % 3] for i in range(n_sentences))
    return LabeledDocument(
        doc_id=doc_id, title=title, sentences=sentences, labels=labels, field=field
    )


def make_question(topic: str, facet: str) -> str:
    words = [f"{facet}", "question", "about", topic] + [
        f"filler{i}" for i in range(26)
    ]
    return " ".join(words)


def make_ftu(
    ftu_key: str = "q0",
    n_pos: int = 1,
    n_neg: int = 1,
    titled_query: bool = False,
) -> FacetTrainingUnit:
    query = make_doc(
        ftu_key,
        n_sentences=3,
        title=f"Study of {ftu_key}" if titled_query else None,
    )
    pos = {}
    neg = {}
    for facet in ("background", "method", "result"):
        pos[facet] = tuple(
            make_doc(f"{ftu_key}-p{facet[:2]}{i}", n_sentences=3)
            for i in range(n_pos)
        )
        neg[facet] = tuple(
            make_doc(f"{ftu_key}-n{facet[:2]}{i}", n_sentences=3)
            for i in range(n_neg)
        )
    questions = {
        facet: make_question(ftu_key, facet)
        for facet in ("background", "method", "result")
    }
    return FacetTrainingUnit(query_doc=query, pos=pos, neg=neg, questions=questions)


@pytest.fixture
def small_ftu() -> FacetTrainingUnit:
    return make_ftu()


def tiny_train_cfg(**overrides) -> TrainConfig:
    base = dict(
        epochs=1,
        batch_size=2,
        grad_accumulation=1,
        warmup_fraction=0.0,
        lr_base=1e-3,
        lr_aggregation=2e-3,
        temperature=0.08,
        seed=11,
    )
    base.update(overrides)
    return TrainConfig(**base)


def rand_unit_rows(rng, n: int, h: int) -> torch.Tensor:
    mat = torch.tensor(rng.standard_normal((n, h)), dtype=torch.float64)
    return mat / mat.norm(dim=-1, keepdim=True)
