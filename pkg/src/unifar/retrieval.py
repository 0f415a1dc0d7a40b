"""Facet similarity matrices, scoring strategies, and the brute-force index.

The index file is ``UNIFAR-IDX v1``: one JSON manifest line followed by raw
little-endian float32 records, candidate-major then facet-major; candidate
ids live in a JSON-array sidecar next to the file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .aggregation import FacetRepresentation
from .config import FACET_NAMES
from .errors import DuplicateId, FacetOutOfRange, ShapeMismatch, ZeroVector

INDEX_FORMAT = "UNIFAR-IDX v1"

COSINE = "cosine"
DOT = "dot"


def _as_matrix(rep) -> np.ndarray:
    if isinstance(rep, FacetRepresentation):
        return rep.numpy_embeddings().astype(np.float64)
    return np.asarray(rep, dtype=np.float64)


def _normalize_rows(matrix: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroVector(f"zero embedding row in {what}; cosine similarity undefined")
    return matrix / norms


@dataclass
class FacetSimilarityMatrix:
    """Pairwise facet similarities between a query and one candidate."""

    values: np.ndarray  # n_facet x n_facet
    query_id: str | None = None
    candidate_id: str | None = None

    @property
    def n_facet(self) -> int:
        return self.values.shape[0]


def similarity_matrix(
    query: FacetRepresentation | np.ndarray,
    candidate: FacetRepresentation | np.ndarray,
    sim_kind: str = COSINE,
) -> FacetSimilarityMatrix:
    """Full n_facet x n_facet grid of query-facet vs candidate-facet similarity."""
    q = _as_matrix(query)
    c = _as_matrix(candidate)
    if q.shape != c.shape:
        raise ShapeMismatch(f"facet shapes differ: {q.shape} vs {c.shape}")
    if sim_kind == COSINE:
        q = _normalize_rows(q, "query")
        c = _normalize_rows(c, "candidate")
    elif sim_kind != DOT:
        raise ValueError(f"unknown similarity kind {sim_kind!r}")
    qid = query.input_id if isinstance(query, FacetRepresentation) else None
    cid = candidate.input_id if isinstance(candidate, FacetRepresentation) else None
    return FacetSimilarityMatrix(values=q @ c.T, query_id=qid, candidate_id=cid)


@dataclass(frozen=True)
class ScoringStrategy:
    """Either the mean of the diagonal or a single facet's diagonal entry."""

    kind: str  # "diagonal_mean" | "facet"
    facet: int | None = None

    def __post_init__(self):
        if self.kind not in ("diagonal_mean", "facet"):
            raise ValueError(f"unknown scoring strategy {self.kind!r}")
        if self.kind == "facet" and (self.facet is None or self.facet < 0):
            raise FacetOutOfRange("facet strategy needs a non-negative facet index")

    @classmethod
    def diagonal_mean(cls) -> "ScoringStrategy":
        return cls(kind="diagonal_mean")

    @classmethod
    def for_facet(cls, facet: int) -> "ScoringStrategy":
        return cls(kind="facet", facet=facet)

    @classmethod
    def parse(cls, text: str, facet_names: Sequence[str] = FACET_NAMES) -> "ScoringStrategy":
        """Parse CLI spellings: "diag-mean" or "facet:<name-or-index>"."""
        if text in ("diag-mean", "diagonal_mean", "diag_mean"):
            return cls.diagonal_mean()
        if text.startswith("facet:"):
            token = text.split(":", 1)[1]
            if token.isdigit():
                return cls.for_facet(int(token))
            if token in facet_names:
                return cls.for_facet(list(facet_names).index(token))
            raise FacetOutOfRange(f"unknown facet {token!r}; names: {list(facet_names)}")
        raise ValueError(f"unknown strategy {text!r} (use diag-mean or facet:<name>)")

    def label(self, facet_names: Sequence[str] = FACET_NAMES) -> str:
        if self.kind == "diagonal_mean":
            return "diag-mean"
        return f"facet:{facet_names[self.facet]}"


def score(matrix: FacetSimilarityMatrix, strategy: ScoringStrategy) -> float:
    """Relevance of one candidate: diagonal mean or one diagonal entry."""
    diag = np.diag(matrix.values)
    if strategy.kind == "diagonal_mean":
        return float(diag.mean())
    if strategy.facet >= matrix.n_facet:
        raise FacetOutOfRange(
            f"facet {strategy.facet} out of range for {matrix.n_facet} facets"
        )
    return float(diag[strategy.facet])


class FacetIndex:
    """Immutable store of per-facet candidate embeddings with top-k search."""

    def __init__(
        self,
        ids: Sequence[str],
        store: np.ndarray,
        facet_names: Sequence[str],
        sim_kind: str = COSINE,
    ):
        if store.ndim != 3:
            raise ShapeMismatch(f"store must be count x n_facet x h, got {store.shape}")
        if len(ids) != store.shape[0]:
            raise ShapeMismatch(f"{len(ids)} ids vs {store.shape[0]} embedding records")
        if len(set(ids)) != len(ids):
            raise DuplicateId("duplicate candidate ids in index")
        self.ids = list(ids)
        self.store = store.astype(np.float32)
        self.facet_names = tuple(facet_names)
        self.sim_kind = sim_kind

    @property
    def count(self) -> int:
        return self.store.shape[0]

    @property
    def n_facet(self) -> int:
        return self.store.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.store.shape[2]

    # ------------------------------------------------------------ building

    @classmethod
    def build(
        cls,
        reps: Iterable[FacetRepresentation],
        sim_kind: str = COSINE,
        facet_names: Sequence[str] = FACET_NAMES,
    ) -> "FacetIndex":
        """Collect representations into a store; cosine mode unit-normalizes
        every facet row at build time."""
        ids: list[str] = []
        rows: list[np.ndarray] = []
        shape = None
        for rep in reps:
            emb = rep.numpy_embeddings() if isinstance(rep, FacetRepresentation) else np.asarray(rep[1], dtype=np.float32)
            rid = rep.input_id if isinstance(rep, FacetRepresentation) else rep[0]
            if rid is None:
                raise ValueError("every indexed representation needs an input_id")
            if rid in set(ids):
                raise DuplicateId(f"duplicate candidate id {rid!r}")
            if shape is None:
                shape = emb.shape
            elif emb.shape != shape:
                raise ShapeMismatch(f"{rid!r}: shape {emb.shape} != {shape}")
            if sim_kind == COSINE:
                emb = _normalize_rows(emb.astype(np.float64), f"candidate {rid!r}")
            ids.append(rid)
            rows.append(emb.astype(np.float32))
        n_facet = shape[0] if shape is not None else len(facet_names)
        hidden = shape[1] if shape is not None else 0
        store = (
            np.stack(rows).astype(np.float32)
            if rows
            else np.zeros((0, n_facet, hidden), dtype=np.float32)
        )
        return cls(ids=ids, store=store, facet_names=facet_names, sim_kind=sim_kind)

    # -------------------------------------------------------------- search

    def query_scores(self, query: FacetRepresentation | np.ndarray,
                     strategy: ScoringStrategy) -> np.ndarray:
        """Vectorized per-candidate scores (both strategies read the diagonal)."""
        q = _as_matrix(query)
        if q.shape != (self.n_facet, self.hidden_size):
            raise ShapeMismatch(
                f"query shape {q.shape} != {(self.n_facet, self.hidden_size)}"
            )
        if self.sim_kind == COSINE:
            q = _normalize_rows(q, "query")
        store = self.store.astype(np.float64)
        diag = np.einsum("cfh,fh->cf", store, q)  # count x n_facet
        if strategy.kind == "diagonal_mean":
            return diag.mean(axis=1)
        if strategy.facet >= self.n_facet:
            raise FacetOutOfRange(
                f"facet {strategy.facet} out of range for {self.n_facet} facets"
            )
        return diag[:, strategy.facet]

    def search(
        self,
        query: FacetRepresentation | np.ndarray,
        strategy: ScoringStrategy,
        k: int,
        candidate_ids: Sequence[str] | None = None,
    ) -> list[tuple[str, float]]:
        """Top-k (candidate_id, score), score-descending, ties by ascending id.

        ``candidate_ids`` restricts the scan to a subset (pooled evaluation).
        An empty index returns an empty list.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if self.count == 0:
            return []
        scores = self.query_scores(query, strategy)
        if candidate_ids is not None:
            positions = {cid: i for i, cid in enumerate(self.ids)}
            chosen = [(cid, positions[cid]) for cid in candidate_ids]
            pairs = [(cid, float(scores[pos])) for cid, pos in chosen]
        else:
            pairs = [(cid, float(s)) for cid, s in zip(self.ids, scores)]
        pairs.sort(key=lambda item: (-item[1], item[0]))
        return pairs[:k]

    # ------------------------------------------------------------- file I/O

    def save(self, path: str | Path) -> None:
        path = Path(path)
        manifest = {
            "format": INDEX_FORMAT,
            "count": self.count,
            "n_facet": self.n_facet,
            "h": self.hidden_size,
            "sim_kind": self.sim_kind,
            "facet_names": list(self.facet_names),
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
            fh.write(b"\n")
            fh.write(np.ascontiguousarray(self.store, dtype="<f4").tobytes())
        with open(ids_sidecar(path), "w", encoding="utf-8") as fh:
            json.dump(self.ids, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "FacetIndex":
        path = Path(path)
        raw = path.read_bytes()
        newline = raw.index(b"\n")
        manifest = json.loads(raw[:newline].decode("utf-8"))
        if manifest.get("format") != INDEX_FORMAT:
            raise ValueError(f"unsupported index format {manifest.get('format')!r}")
        count, n_facet, h = manifest["count"], manifest["n_facet"], manifest["h"]
        expected = count * n_facet * h * 4
        body = raw[newline + 1:]
        if len(body) != expected:
            raise ShapeMismatch(f"index body is {len(body)} bytes, expected {expected}")
        store = np.frombuffer(body, dtype="<f4").reshape(count, n_facet, h).copy()
        with open(ids_sidecar(path), "r", encoding="utf-8") as fh:
            ids = json.load(fh)
        return cls(
            ids=ids,
            store=store,
            facet_names=tuple(manifest["facet_names"]),
            sim_kind=manifest["sim_kind"],
        )


def ids_sidecar(path: str | Path) -> Path:
    return Path(str(path) + ".ids.json")


def build_index(
    reps: Iterable[FacetRepresentation],
    sim_kind: str = COSINE,
    facet_names: Sequence[str] = FACET_NAMES,
) -> FacetIndex:
    return FacetIndex.build(reps, sim_kind=sim_kind, facet_names=facet_names)


def search(
    index: FacetIndex,
    query: FacetRepresentation | np.ndarray,
    strategy: ScoringStrategy,
    k: int,
    candidate_ids: Sequence[str] | None = None,
) -> list[tuple[str, float]]:
    return index.search(query, strategy, k, candidate_ids=candidate_ids)
