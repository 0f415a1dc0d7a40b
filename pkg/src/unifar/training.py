"""Joint facet-aware training objective and optimization loop.

Losses per facet training unit (FTU):

- doc-doc contrastive: anchor = query document, positives/negatives = the
  facet's documents, all via the facet's embedding row;
- question-doc contrastive: anchor = the facet question, positives = query
  document plus facet positives; document embeddings enter as constants, so
  this term trains only the question path;
- attention alignment: KL between the gold facet-sentence matrix and the
  sentence-branch attention map, computed on detached encoder outputs so it
  never updates the base encoder.

``total = mean_f(L_DD) + mean_f(L_QD) + lambda * mean_docs(L_KL)`` with
lambda annealed linearly per optimizer step.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import torch
from torch.func import functional_call

from .aggregation import SENTENCE, FacetRepresentation
from .config import FACET_FROM_SHORT, FACET_NAMES, TrainConfig
from .data_construction import FacetTrainingUnit
from .encoding import QUESTION, segment_input
from .errors import (
    BranchMismatch,
    MissingQuestion,
    NonFiniteLoss,
    NoPositives,
    ShapeMismatch,
    UnknownLabel,
)
from .model import EncodedInput, UnifarModel, save_checkpoint

KL_EPSILON = 1e-8


# ------------------------------------------------------------- contrastive


@dataclass
class ContrastiveBatch:
    """One anchor with its positive and negative embedding sets."""

    anchor: torch.Tensor
    positives: Sequence[torch.Tensor]
    negatives: Sequence[torch.Tensor]
    temperature: float

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        dim = self.anchor.shape[-1]
        for vec in list(self.positives) + list(self.negatives):
            if vec.shape[-1] != dim:
                raise ShapeMismatch("contrastive vectors must share the anchor's dimension")


def _similarities(anchor: torch.Tensor, others: torch.Tensor, sim_kind: str) -> torch.Tensor:
    if sim_kind == "cosine":
        a = anchor / anchor.norm().clamp_min(1e-12)
        o = others / others.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        return o @ a
    if sim_kind == "dot":
        return others @ anchor
    raise ValueError(f"unknown similarity kind {sim_kind!r}")


def info_nce(batch: ContrastiveBatch, sim_kind: str = "cosine") -> torch.Tensor:
    """Multi-positive InfoNCE, averaged over positives, log-sum-exp stabilized."""
    if len(batch.positives) == 0:
        raise NoPositives("InfoNCE needs at least one positive")
    pos = torch.stack(list(batch.positives))
    pos_logits = _similarities(batch.anchor, pos, sim_kind) / batch.temperature
    if len(batch.negatives) > 0:
        neg = torch.stack(list(batch.negatives))
        neg_logits = _similarities(batch.anchor, neg, sim_kind) / batch.temperature
        all_logits = torch.cat([pos_logits, neg_logits])
    else:
        all_logits = pos_logits
    denominator = torch.logsumexp(all_logits, dim=0)
    return (denominator - pos_logits).mean()


# ---------------------------------------------------------- gold alignment


@dataclass
class GoldAlignment:
    """Row-normalized facet-by-sentence indicator matrix.

    Rows exist only for facets with at least one labeled sentence, in
    facet-name order.
    """

    facets: tuple[str, ...]
    matrix: torch.Tensor  # |facets| x |sentences|
    sentence_count: int


def gold_matrix(
    labels: Sequence[str], facet_names: Sequence[str] = FACET_NAMES
) -> GoldAlignment:
    """Build the gold alignment from per-sentence facet labels."""
    if not labels:
        raise ValueError("gold_matrix needs at least one label")
    canonical = []
    for label in labels:
        full = FACET_FROM_SHORT.get(label, label)
        if full not in facet_names:
            raise UnknownLabel(f"label {label!r} not in facet names {list(facet_names)}")
        canonical.append(full)
    present = tuple(f for f in facet_names if f in set(canonical))
    rows = []
    for facet in present:
        indicator = torch.tensor(
            [1.0 if lab == facet else 0.0 for lab in canonical], dtype=torch.float64
        )
        rows.append(indicator / indicator.sum())
    return GoldAlignment(
        facets=present, matrix=torch.stack(rows), sentence_count=len(canonical)
    )


def loss_kl(
    rep: FacetRepresentation | torch.Tensor,
    gold: GoldAlignment,
    has_title: bool = False,
    facet_names: Sequence[str] = FACET_NAMES,
) -> torch.Tensor:
    """KL(gold || attention) averaged over the document's facets and scaled
    by 1/|sentences|; the title column is dropped and rows re-normalized."""
    if isinstance(rep, FacetRepresentation):
        if rep.branch != SENTENCE:
            raise BranchMismatch(
                "attention alignment needs the sentence branch "
                f"(got {rep.branch!r})"
            )
        attention = rep.attention
    else:
        attention = rep
    if has_title:
        attention = attention[:, 1:]
        attention = attention / attention.sum(dim=1, keepdim=True).clamp_min(KL_EPSILON)
    if attention.shape[1] != gold.matrix.shape[1]:
        raise ShapeMismatch(
            f"attention has {attention.shape[1]} sentence columns, "
            f"gold has {gold.matrix.shape[1]}"
        )
    indices = [list(facet_names).index(f) for f in gold.facets]
    selected = attention[indices, :].clamp_min(KL_EPSILON)
    gold_rows = gold.matrix.to(selected.dtype)
    terms = torch.where(
        gold_rows > 0,
        gold_rows * (gold_rows.clamp_min(KL_EPSILON).log() - selected.log()),
        torch.zeros_like(gold_rows),
    )
    n_facets, n_sentences = gold_rows.shape
    return terms.sum() / (n_facets * n_sentences)


# ----------------------------------------------------- facet-wise losses


def _facet_row(rep: FacetRepresentation, facet_index: int, detach: bool) -> torch.Tensor:
    row = rep.embeddings[facet_index]
    return row.detach() if detach else row


def loss_dd(
    query_rep: FacetRepresentation,
    pos_reps: Sequence[FacetRepresentation],
    neg_reps: Sequence[FacetRepresentation],
    facet_index: int,
    temperature: float,
    sim_kind: str = "cosine",
    extra_negatives: Sequence[torch.Tensor] = (),
) -> torch.Tensor:
    """Doc-doc contrastive loss for one facet (anchor = query document)."""
    if not pos_reps:
        raise NoPositives(f"facet {facet_index} has no positive documents")
    batch = ContrastiveBatch(
        anchor=_facet_row(query_rep, facet_index, detach=False),
        positives=[_facet_row(r, facet_index, detach=False) for r in pos_reps],
        negatives=[_facet_row(r, facet_index, detach=False) for r in neg_reps]
        + list(extra_negatives),
        temperature=temperature,
    )
    return info_nce(batch, sim_kind)


def loss_qd(
    question_rep: FacetRepresentation | None,
    query_rep: FacetRepresentation,
    pos_reps: Sequence[FacetRepresentation],
    neg_reps: Sequence[FacetRepresentation],
    facet_index: int,
    temperature: float,
    sim_kind: str = "cosine",
    detach_documents: bool = True,
) -> torch.Tensor:
    """Question-doc contrastive loss; documents enter as constants so the
    gradient stays on the question path."""
    if question_rep is None:
        raise MissingQuestion(f"facet {facet_index} has no question")
    batch = ContrastiveBatch(
        anchor=_facet_row(question_rep, facet_index, detach=False),
        positives=[_facet_row(query_rep, facet_index, detach_documents)]
        + [_facet_row(r, facet_index, detach_documents) for r in pos_reps],
        negatives=[_facet_row(r, facet_index, detach_documents) for r in neg_reps],
        temperature=temperature,
    )
    return info_nce(batch, sim_kind)


# --------------------------------------------------------- FTU level terms


@dataclass
class FtuEncodings:
    """All model outputs needed to score one FTU."""

    ftu: FacetTrainingUnit
    doc_encoded: dict[str, EncodedInput]
    doc_reps: dict[str, FacetRepresentation]
    question_reps: dict[str, FacetRepresentation]


def encode_ftu(
    model: UnifarModel,
    ftu: FacetTrainingUnit,
    frozen_aggregation_questions: bool = False,
) -> FtuEncodings:
    """Encode every unique document and facet question of one FTU once."""
    doc_encoded: dict[str, EncodedInput] = {}
    doc_reps: dict[str, FacetRepresentation] = {}
    for doc in ftu.documents():
        encoded = model.encode_input(doc.to_sequence())
        doc_encoded[doc.doc_id] = encoded
        doc_reps[doc.doc_id] = model.represent(encoded)
    question_reps: dict[str, FacetRepresentation] = {}
    for facet in model.aggregator.facet_names:
        text = ftu.questions.get(facet)
        if not text:
            continue
        seq = segment_input(
            text,
            kind=QUESTION,
            splitter=model.encoder_config.sentence_splitter,
            input_id=f"{ftu.ftu_id}#q:{facet}",
        )
        encoded = model.encode_input(seq)
        if frozen_aggregation_questions:
            detached = {
                name: p.detach() for name, p in model.aggregator.named_parameters()
            }
            question_reps[facet] = functional_call(
                model.aggregator,
                detached,
                (encoded.token_embeddings, encoded.sentence_embeddings, encoded.context),
                {"input_id": encoded.input_id},
            )
        else:
            question_reps[facet] = model.represent(encoded)
    return FtuEncodings(
        ftu=ftu, doc_encoded=doc_encoded, doc_reps=doc_reps, question_reps=question_reps
    )


@dataclass
class FtuLossTerms:
    """Per-FTU loss sums and counts (before batch averaging)."""

    ftu_id: str
    dd_sum: torch.Tensor
    dd_count: int
    qd_sum: torch.Tensor
    qd_count: int
    kl_sum: torch.Tensor
    kl_count: int
    skipped_dd_facets: tuple[str, ...] = ()
    skipped_kl_docs: tuple[str, ...] = ()

    def contrastive(self) -> torch.Tensor:
        value = torch.zeros((), dtype=self.dd_sum.dtype)
        if self.dd_count:
            value = value + self.dd_sum / self.dd_count
        if self.qd_count:
            value = value + self.qd_sum / self.qd_count
        return value


def ftu_loss_terms(
    model: UnifarModel,
    encodings: FtuEncodings,
    cfg: TrainConfig,
    extra_negatives: Mapping[str, Sequence[torch.Tensor]] | None = None,
) -> FtuLossTerms:
    """Compute the FTU's contrastive and alignment loss terms.

    Gradient routing (``cfg.route_gradients``): question-doc terms detach
    document embeddings, and alignment terms run on a second aggregator pass
    over detached encoder outputs. Routing off computes every term on the
    live graph (used by finite-difference checks).
    """
    ftu = encodings.ftu
    names = model.aggregator.facet_names
    dtype = model.aggregator.anchors.dtype
    zero = torch.zeros((), dtype=dtype)
    dd_sum, dd_count = zero.clone(), 0
    qd_sum, qd_count = zero.clone(), 0
    skipped_dd = []
    query_rep = encodings.doc_reps[ftu.query_doc.doc_id]
    for facet_index, facet in enumerate(names):
        pos = [encodings.doc_reps[d.doc_id] for d in ftu.pos.get(facet, ())]
        neg = [encodings.doc_reps[d.doc_id] for d in ftu.neg.get(facet, ())]
        extras = list(extra_negatives.get(facet, ())) if extra_negatives else []
        if pos:
            dd_sum = dd_sum + loss_dd(
                query_rep,
                pos,
                neg,
                facet_index,
                cfg.temperature,
                cfg.sim_kind,
                extra_negatives=extras,
            )
            dd_count += 1
        else:
            skipped_dd.append(facet)
        question = encodings.question_reps.get(facet)
        if question is not None:
            qd_sum = qd_sum + loss_qd(
                question,
                query_rep,
                pos,
                neg,
                facet_index,
                cfg.temperature,
                cfg.sim_kind,
                detach_documents=cfg.route_gradients,
            )
            qd_count += 1

    kl_sum, kl_count = zero.clone(), 0
    skipped_kl = []
    for doc in ftu.documents():
        encoded = encodings.doc_encoded[doc.doc_id]
        rep = (
            model.alignment_representation(encoded, detach_base=True)
            if cfg.route_gradients
            else encodings.doc_reps[doc.doc_id]
        )
        if rep.branch != SENTENCE:
            skipped_kl.append(doc.doc_id)
            continue
        has_title = encoded.tokenized.has_title
        surviving = encoded.tokenized.sentence_count - (1 if has_title else 0)
        if surviving < 1:
            skipped_kl.append(doc.doc_id)
            continue
        labels = doc.labels[:surviving]
        gold = gold_matrix(labels, names)
        kl_sum = kl_sum + loss_kl(rep, gold, has_title=has_title, facet_names=names)
        kl_count += 1
    return FtuLossTerms(
        ftu_id=ftu.ftu_id,
        dd_sum=dd_sum,
        dd_count=dd_count,
        qd_sum=qd_sum,
        qd_count=qd_count,
        kl_sum=kl_sum,
        kl_count=kl_count,
        skipped_dd_facets=tuple(skipped_dd),
        skipped_kl_docs=tuple(skipped_kl),
    )


@dataclass
class LossBreakdown:
    """Differentiable total plus logged component values."""

    total: torch.Tensor
    dd: float
    qd: float
    kl: float
    lam: float
    skipped_dd: tuple[str, ...] = ()
    skipped_kl: tuple[str, ...] = ()


def _cross_ftu_negative_rows(
    all_encodings: Sequence[FtuEncodings], own_index: int, facet_names: Sequence[str]
) -> dict[str, list[torch.Tensor]]:
    extras: dict[str, list[torch.Tensor]] = {f: [] for f in facet_names}
    for other_index, other in enumerate(all_encodings):
        if other_index == own_index:
            continue
        for facet_index, facet in enumerate(facet_names):
            for rep in other.doc_reps.values():
                extras[facet].append(rep.embeddings[facet_index])
    return extras


def total_loss(
    model: UnifarModel,
    ftus: Sequence[FacetTrainingUnit],
    lam: float,
    cfg: TrainConfig,
) -> LossBreakdown:
    """Batch objective: FTU-averaged contrastive terms plus the lambda-weighted
    alignment term averaged over every labeled document in the batch."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if not ftus:
        raise ValueError("total_loss needs at least one FTU")
    encodings = [
        encode_ftu(model, ftu, frozen_aggregation_questions=cfg.qd_freeze_aggregation)
        for ftu in ftus
    ]
    names = model.aggregator.facet_names
    terms = []
    for index, enc in enumerate(encodings):
        extras = (
            _cross_ftu_negative_rows(encodings, index, names)
            if cfg.cross_ftu_negatives
            else None
        )
        term = ftu_loss_terms(model, enc, cfg, extra_negatives=extras)
        check = term.contrastive() + term.kl_sum
        if not torch.isfinite(check):
            raise NonFiniteLoss("non-finite loss", ftu_id=term.ftu_id)
        terms.append(term)

    dtype = terms[0].dd_sum.dtype
    contrastive = torch.stack([t.contrastive() for t in terms]).mean()
    dd_vals = [t.dd_sum / t.dd_count for t in terms if t.dd_count]
    qd_vals = [t.qd_sum / t.qd_count for t in terms if t.qd_count]
    kl_total = sum(int(t.kl_count) for t in terms)
    if kl_total:
        kl_mean = torch.stack([t.kl_sum for t in terms]).sum() / kl_total
    else:
        kl_mean = torch.zeros((), dtype=dtype)
    total = contrastive + lam * kl_mean
    if not torch.isfinite(total):
        raise NonFiniteLoss("non-finite total loss", ftu_id=terms[0].ftu_id)
    return LossBreakdown(
        total=total,
        dd=float(torch.stack(dd_vals).detach().mean()) if dd_vals else 0.0,
        qd=float(torch.stack(qd_vals).detach().mean()) if qd_vals else 0.0,
        kl=float(kl_mean.detach()),
        lam=lam,
        skipped_dd=tuple(f for t in terms for f in t.skipped_dd_facets),
        skipped_kl=tuple(d for t in terms for d in t.skipped_kl_docs),
    )


# ------------------------------------------------------------- scheduling


def anneal_lambda(step: int, total_steps: int, start: float = 0.3, end: float = 0.5) -> float:
    """Linear interpolation from start to end across total_steps."""
    if step < 0 or (total_steps > 0 and step > total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps <= 0:
        return end
    return start + (end - start) * step / total_steps


def warmup_scale(step: int, warmup_steps: int) -> float:
    """Linear warmup to 1.0, constant afterwards; step is 1-based."""
    if warmup_steps <= 0:
        return 1.0
    return min(1.0, step / warmup_steps)


# ------------------------------------------------------------ the trainer


@dataclass
class TrainResult:
    model: UnifarModel
    history: list[dict]
    checkpoint_path: Path | None
    loss_log_path: Path | None
    total_steps: int


def _batches(indices: Sequence[int], size: int) -> list[list[int]]:
    return [list(indices[i : i + size]) for i in range(0, len(indices), size)]


def train(
    model: UnifarModel,
    ftus: Sequence[FacetTrainingUnit],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    """Optimize the model over FTUs with AdamW, two learning-rate groups,
    linear warmup, gradient accumulation, and per-step lambda annealing.

    Writes a JSON Lines loss log (one record per optimizer step) and a final
    checkpoint when paths are given. Fully deterministic under cfg.seed.
    """
    if not ftus:
        raise ValueError("training needs at least one FTU")
    for ftu in ftus:
        ftu.validate()
    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if log_path is None:
            log_path = out_dir / "loss_log.jsonl"
        if checkpoint_path is None:
            checkpoint_path = out_dir / "checkpoint"
    log_path = Path(log_path) if log_path is not None else None
    checkpoint_path = Path(checkpoint_path) if checkpoint_path is not None else None

    base_group = [p for p in model.base_parameters() if p.requires_grad]
    agg_group = [p for p in model.aggregation_parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(
        [
            {"params": base_group, "lr": cfg.lr_base},
            {"params": agg_group, "lr": cfg.lr_aggregation},
        ]
    )
    group_lrs = (cfg.lr_base, cfg.lr_aggregation)

    micro_per_epoch = math.ceil(len(ftus) / cfg.batch_size)
    steps_per_epoch = math.ceil(micro_per_epoch / cfg.grad_accumulation)
    total_steps = (
        cfg.max_steps if cfg.max_steps is not None else cfg.epochs * steps_per_epoch
    )
    warmup_steps = int(round(cfg.warmup_fraction * total_steps))

    history: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    model.train()
    step = 0
    try:
        while step < total_steps:
            order = list(range(len(ftus)))
            rng.shuffle(order)
            micro_batches = _batches(order, cfg.batch_size)
            windows = _batches(list(range(len(micro_batches))), cfg.grad_accumulation)
            for window in windows:
                if step >= total_steps:
                    break
                lam = anneal_lambda(step, total_steps, cfg.lambda_start, cfg.lambda_end)
                optimizer.zero_grad()
                window_parts = {"dd": 0.0, "qd": 0.0, "kl": 0.0, "total": 0.0}
                for micro_index in window:
                    batch = [ftus[i] for i in micro_batches[micro_index]]
                    try:
                        breakdown = total_loss(model, batch, lam, cfg)
                    except NonFiniteLoss as err:
                        if log_file is not None:
                            record = {"step": step, "error": str(err), "ftu_id": err.ftu_id}
                            log_file.write(json.dumps(record, sort_keys=True) + "\n")
                        raise
                    (breakdown.total / len(window)).backward()
                    window_parts["dd"] += breakdown.dd / len(window)
                    window_parts["qd"] += breakdown.qd / len(window)
                    window_parts["kl"] += breakdown.kl / len(window)
                    window_parts["total"] += float(breakdown.total.detach()) / len(window)
                scale = warmup_scale(step + 1, warmup_steps)
                for group, group_lr in zip(optimizer.param_groups, group_lrs):
                    group["lr"] = group_lr * scale
                optimizer.step()
                record = {
                    "step": step,
                    "l_dd": window_parts["dd"],
                    "l_qd": window_parts["qd"],
                    "l_kl": window_parts["kl"],
                    "lambda": lam,
                    "total": window_parts["total"],
                }
                history.append(record)
                if log_file is not None:
                    log_file.write(json.dumps(record, sort_keys=True) + "\n")
                step += 1
                if (
                    cfg.checkpoint_every
                    and checkpoint_path is not None
                    and step % cfg.checkpoint_every == 0
                    and step < total_steps
                ):
                    save_checkpoint(model, Path(str(checkpoint_path) + f".step{step}"))
    finally:
        if log_file is not None:
            log_file.close()
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return TrainResult(
        model=model,
        history=history,
        checkpoint_path=checkpoint_path,
        loss_log_path=log_path,
        total_steps=step,
    )
