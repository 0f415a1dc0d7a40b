"""Build Facet-Aware Training Units (FTUs) from facet triplets and a corpus.

Pipeline: merge triplets by query document, label every referenced document's
sentences with an LLM, generate one question per facet, validate, and emit
JSON Lines (complete units) plus a quarantine file (partial units).

All LLM access goes through the :class:`LlmClient` protocol; recording and
replay clients make every run reproducible offline.
"""

from __future__ import annotations

import json
import re
import time
import urllib.request
from dataclasses import dataclass, field as dataclass_field
from difflib import SequenceMatcher
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .config import FACET_FROM_SHORT, FACET_NAMES, FACET_SHORT, canonical_facet
from .encoding import DOCUMENT, InputSequence, split_sentences
from .errors import (
    CategoryError,
    EmptyFacetText,
    ParseError,
    PosNegConflict,
    ValidationError,
)

# Focus of each facet's question, substituted into the question prompt.
FACET_REQUIREMENTS = {
    "background": "research questions, research motivation, and limitations of existing studies",
    "method": "technical methods, experimental design, and innovations",
    "result": "key findings, data support, and conclusions",
}

MIN_QUESTION_WORDS = 25
MAX_QUESTION_WORDS = 50
DEFAULT_RETRIES = 3
DEFAULT_FUZZY_THRESHOLD = 0.9


# --------------------------------------------------------------------- docs


@dataclass(frozen=True)
class LabeledDocument:
    """A document with per-sentence facet labels (empty labels = unlabeled)."""

    doc_id: str
    title: str | None
    sentences: tuple[str, ...]
    labels: tuple[str, ...] = ()
    field: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        labels = tuple(canonical_facet(lab) for lab in self.labels)
        object.__setattr__(self, "labels", labels)
        if self.labels and len(self.labels) != len(self.sentences):
            raise ValidationError(
                f"{len(self.labels)} labels for {len(self.sentences)} sentences",
                field_path=f"{self.doc_id}.labels",
            )

    @property
    def is_labeled(self) -> bool:
        return len(self.labels) == len(self.sentences) and len(self.sentences) > 0

    def with_labels(self, labels: Sequence[str]) -> "LabeledDocument":
        return LabeledDocument(
            doc_id=self.doc_id,
            title=self.title,
            sentences=self.sentences,
            labels=tuple(labels),
            field=self.field,
        )

    def facet_sentences(self, facet: str) -> tuple[str, ...]:
        facet = canonical_facet(facet)
        return tuple(s for s, lab in zip(self.sentences, self.labels) if lab == facet)

    def to_sequence(self) -> InputSequence:
        return InputSequence(
            kind=DOCUMENT,
            sentences=self.sentences,
            title=self.title,
            input_id=self.doc_id,
        )

    def to_record(self) -> dict:
        record = {
            "id": self.doc_id,
            "title": self.title,
            "sentences": list(self.sentences),
            "labels": list(self.labels),
        }
        if self.field is not None:
            record["field"] = self.field
        return record

    @classmethod
    def from_record(cls, record: Mapping) -> "LabeledDocument":
        sentences = record.get("sentences")
        if sentences is None and "text" in record:
            sentences = split_sentences(record["text"])
        if not sentences:
            raise ValidationError("document without sentences", field_path=str(record.get("id")))
        return cls(
            doc_id=str(record["id"]),
            title=record.get("title"),
            sentences=tuple(sentences),
            labels=tuple(record.get("labels") or ()),
            field=record.get("field"),
        )


def read_documents(path: str | Path, splitter: str = "rules") -> dict[str, LabeledDocument]:
    """Load a corpus JSONL file into an id-keyed map; "text" records are split."""
    docs: dict[str, LabeledDocument] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "sentences" not in record and "text" in record:
                record = dict(record, sentences=split_sentences(record["text"], splitter))
            doc = LabeledDocument.from_record(record)
            if doc.doc_id in docs:
                raise ValidationError(
                    f"duplicate document id {doc.doc_id!r} at line {line_no}",
                    field_path="corpus",
                )
            docs[doc.doc_id] = doc
    return docs


# ----------------------------------------------------------------- triplets


@dataclass(frozen=True)
class FacetTriplet:
    """One (query document, facet, positive, negative) supervision triple."""

    query_doc_id: str
    facet: str
    positive_doc_id: str
    negative_doc_id: str

    def __post_init__(self):
        object.__setattr__(self, "facet", canonical_facet(self.facet))
        ids = (self.query_doc_id, self.positive_doc_id, self.negative_doc_id)
        if len(set(ids)) != 3:
            raise ValidationError(
                f"triplet ids must be distinct, got {ids}", field_path="triplet"
            )

    def to_record(self) -> dict:
        return {
            "query_id": self.query_doc_id,
            "facet": FACET_SHORT[self.facet],
            "pos_id": self.positive_doc_id,
            "neg_id": self.negative_doc_id,
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "FacetTriplet":
        return cls(
            query_doc_id=str(record["query_id"]),
            facet=record["facet"],
            positive_doc_id=str(record["pos_id"]),
            negative_doc_id=str(record["neg_id"]),
        )


def read_triplets(path: str | Path) -> list[FacetTriplet]:
    triplets = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                triplets.append(FacetTriplet.from_record(json.loads(line)))
    return triplets


@dataclass
class QueryGroup:
    """All positives/negatives per facet for one query document."""

    query_doc_id: str
    pos: dict[str, tuple[str, ...]]
    neg: dict[str, tuple[str, ...]]


def merge_triplets(triplets: Iterable[FacetTriplet]) -> dict[str, QueryGroup]:
    """Merge triplets sharing a query document into per-facet id sets.

    Deduplicates; a document listed as both positive and negative for the
    same (query, facet) raises :class:`PosNegConflict`.
    """
    pos: dict[str, dict[str, set[str]]] = {}
    neg: dict[str, dict[str, set[str]]] = {}
    for t in triplets:
        pos.setdefault(t.query_doc_id, {f: set() for f in FACET_NAMES})
        neg.setdefault(t.query_doc_id, {f: set() for f in FACET_NAMES})
        pos[t.query_doc_id][t.facet].add(t.positive_doc_id)
        neg[t.query_doc_id][t.facet].add(t.negative_doc_id)
    groups: dict[str, QueryGroup] = {}
    for qid in sorted(pos):
        for facet in FACET_NAMES:
            clash = pos[qid][facet] & neg[qid][facet]
            if clash:
                raise PosNegConflict(
                    f"documents are both positive and negative for ({qid!r}, {facet})",
                    offending_ids=sorted(clash),
                )
        groups[qid] = QueryGroup(
            query_doc_id=qid,
            pos={f: tuple(sorted(pos[qid][f])) for f in FACET_NAMES},
            neg={f: tuple(sorted(neg[qid][f])) for f in FACET_NAMES},
        )
    return groups


# -------------------------------------------------------------- LLM clients


class LlmClient(Protocol):
    def complete(self, system_message: str, user_prompt: str) -> str:
        ...


class ScriptedClient:
    """Returns canned responses in order; for unit tests."""

    def __init__(self, responses: Sequence[str]):
        self.responses = list(responses)
        self.calls: list[tuple[str, str]] = []

    def complete(self, system_message: str, user_prompt: str) -> str:
        self.calls.append((system_message, user_prompt))
        if not self.responses:
            raise RuntimeError("scripted LLM client ran out of responses")
        return self.responses.pop(0)


class RecordingClient:
    """Wraps a real client and appends every exchange to a transcript file."""

    def __init__(self, inner: LlmClient, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")

    def complete(self, system_message: str, user_prompt: str) -> str:
        response = self.inner.complete(system_message, user_prompt)
        record = {"system": system_message, "prompt": user_prompt, "response": response}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
        return response


class ReplayClient:
    """Replays a recorded transcript in call order, verifying each prompt."""

    def __init__(self, path: str | Path, strict: bool = True):
        self.records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self.records.append(json.loads(line))
        self.cursor = 0
        self.strict = strict

    def complete(self, system_message: str, user_prompt: str) -> str:
        if self.cursor >= len(self.records):
            raise RuntimeError(
                f"transcript exhausted after {len(self.records)} calls"
            )
        record = self.records[self.cursor]
        self.cursor += 1
        if self.strict and (
            record["system"] != system_message or record["prompt"] != user_prompt
        ):
            raise RuntimeError(
                f"transcript mismatch at call {self.cursor}: "
                "prompts diverge from the recorded run"
            )
        return record["response"]


class HttpClient:
    """Minimal chat-completion client for OpenAI-compatible endpoints."""

    def __init__(self, api_key: str, base_url: str, model: str, timeout: float = 60.0):
        self.api_key = api_key
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout

    def complete(self, system_message: str, user_prompt: str) -> str:
        payload = json.dumps(
            {
                "model": self.model,
                "messages": [
                    {"role": "system", "content": system_message},
                    {"role": "user", "content": user_prompt},
                ],
            }
        ).encode("utf-8")
        request = urllib.request.Request(
            f"{self.base_url}/chat/completions",
            data=payload,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {self.api_key}",
            },
        )
        with urllib.request.urlopen(request, timeout=self.timeout) as response:
            body = json.loads(response.read().decode("utf-8"))
        return body["choices"][0]["message"]["content"]


# ------------------------------------------------------------------ prompts


@dataclass(frozen=True)
class PromptTemplate:
    system: str
    user_template: str

    def fill(self, **substitutions: str) -> str:
        text = self.user_template
        for key, value in substitutions.items():
            text = text.replace("{" + key + "}", value)
        return text


def load_prompt(name: str) -> PromptTemplate:
    """Load a prompt template from the package's editable prompts directory."""
    raw = resources.files("unifar").joinpath("prompts", f"{name}.txt").read_text("utf-8")
    match = re.match(r"\[system\]\n(.*?)\n\n\[user\]\n(.*)", raw, flags=re.DOTALL)
    if match is None:
        raise ParseError(f"prompt file {name!r} missing [system]/[user] sections")
    return PromptTemplate(system=match.group(1).strip(), user_template=match.group(2).strip())


# ----------------------------------------------------------------- labeling


def _strip_code_fences(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        text = re.sub(r"^```[a-zA-Z]*\n?", "", text)
        text = re.sub(r"\n?```$", "", text.strip())
    return text.strip()


def _parse_labeling_response(text: str) -> list[tuple[str, str]]:
    """Parse the JSON array of {sentence, category} objects."""
    cleaned = _strip_code_fences(text)
    try:
        parsed = json.loads(cleaned)
    except json.JSONDecodeError:
        start, end = cleaned.find("["), cleaned.rfind("]")
        if start < 0 or end <= start:
            raise ParseError("labeling response is not a JSON array") from None
        try:
            parsed = json.loads(cleaned[start : end + 1])
        except json.JSONDecodeError as err:
            raise ParseError(f"labeling response is not valid JSON: {err}") from None
    if not isinstance(parsed, list):
        raise ParseError("labeling response must be a JSON array")
    entries = []
    for item in parsed:
        if not isinstance(item, dict) or "sentence" not in item or "category" not in item:
            raise ParseError("each labeling entry needs 'sentence' and 'category'")
        try:
            category = canonical_facet(str(item["category"]))
        except Exception:
            raise CategoryError(
                f"unknown category {item['category']!r}; expected one of {list(FACET_NAMES)}"
            ) from None
        entries.append((str(item["sentence"]), category))
    return entries


def _normalize(text: str) -> str:
    return " ".join(text.split())


def _align_labels(
    sentences: Sequence[str],
    entries: list[tuple[str, str]],
    fuzzy_threshold: float = DEFAULT_FUZZY_THRESHOLD,
) -> tuple[str, ...]:
    """Assign one label per input sentence by exact-then-fuzzy text match."""
    remaining = list(range(len(entries)))
    labels: list[str] = []
    for position, sentence in enumerate(sentences):
        wanted = _normalize(sentence)
        match_idx = None
        for idx in remaining:
            if _normalize(entries[idx][0]) == wanted:
                match_idx = idx
                break
        if match_idx is None:
            best_score = 0.0
            for idx in remaining:
                score = SequenceMatcher(
                    None, _normalize(entries[idx][0]).lower(), wanted.lower()
                ).ratio()
                if score > best_score:
                    best_score, match_idx = score, idx
            if match_idx is None or best_score < fuzzy_threshold:
                raise ParseError(
                    f"no labeling entry aligns with sentence {position} ({sentence[:40]!r}...)"
                )
        labels.append(entries[match_idx][1])
        remaining.remove(match_idx)
    return tuple(labels)


def label_sentences(
    doc: LabeledDocument | InputSequence,
    llm: LlmClient,
    retries: int = DEFAULT_RETRIES,
    backoff_base: float = 0.0,
    fuzzy_threshold: float = DEFAULT_FUZZY_THRESHOLD,
    sleep=time.sleep,
) -> tuple[str, ...]:
    """Label each sentence with a facet via the LLM; up to ``retries`` attempts."""
    sentences = tuple(doc.sentences)
    if not sentences:
        raise ValidationError("cannot label a document without sentences")
    template = load_prompt("sentence_labeling")
    listing = "\n" + "\n".join(f"{i + 1}. {s}" for i, s in enumerate(sentences))
    prompt = template.fill(sentences_list=listing)
    last_error: Exception | None = None
    for attempt in range(1, retries + 1):
        response = llm.complete(template.system, prompt)
        try:
            entries = _parse_labeling_response(response)
            return _align_labels(sentences, entries, fuzzy_threshold)
        except (ParseError, CategoryError) as err:
            last_error = err
            if attempt < retries and backoff_base > 0:
                sleep(backoff_base * 2 ** (attempt - 1))
    assert last_error is not None
    raise last_error


# ------------------------------------------------------------- question gen


def _clean_question(text: str) -> str:
    text = _strip_code_fences(text)
    text = " ".join(text.split())
    return text.strip().strip('"').strip()


def generate_question(
    query_doc: LabeledDocument,
    pos_docs: Sequence[LabeledDocument],
    facet: str,
    llm: LlmClient,
    max_pos_docs: int = 3,
    min_words: int = MIN_QUESTION_WORDS,
    max_words: int = MAX_QUESTION_WORDS,
) -> tuple[str, bool]:
    """Generate one facet question; returns (text, out_of_bounds_flag).

    The word-count constraint gets one reprompt; a second violation is
    accepted but flagged.
    """
    facet = canonical_facet(facet)
    query_text = " ".join(query_doc.facet_sentences(facet))
    if not query_text:
        raise EmptyFacetText(
            f"query document {query_doc.doc_id!r} has no {facet} sentences"
        )
    pos_parts = []
    for doc in pos_docs[:max_pos_docs]:
        part = " ".join(doc.facet_sentences(facet))
        if part:
            pos_parts.append(part)
    template = load_prompt("question_generation")
    prompt = template.fill(
        facet_type=facet,
        query_text=query_text,
        pos_text="\n".join(pos_parts),
        requirement=FACET_REQUIREMENTS[facet],
    )
    text = _clean_question(llm.complete(template.system, prompt))
    if min_words <= len(text.split()) <= max_words:
        return text, False
    text = _clean_question(llm.complete(template.system, prompt))
    flagged = not (min_words <= len(text.split()) <= max_words)
    return text, flagged


# --------------------------------------------------------------------- FTUs


@dataclass
class FacetTrainingUnit:
    """One training instance: query doc, per-facet pos/neg docs, questions."""

    query_doc: LabeledDocument
    pos: dict[str, tuple[LabeledDocument, ...]]
    neg: dict[str, tuple[LabeledDocument, ...]]
    questions: dict[str, str]
    warnings: tuple[str, ...] = ()

    @property
    def ftu_id(self) -> str:
        return self.query_doc.doc_id

    def documents(self) -> list[LabeledDocument]:
        """Unique documents of the unit, query first, then by id."""
        seen = {self.query_doc.doc_id: self.query_doc}
        for mapping in (self.pos, self.neg):
            for docs in mapping.values():
                for doc in docs:
                    seen.setdefault(doc.doc_id, doc)
        rest = sorted(
            (d for d in seen.values() if d.doc_id != self.query_doc.doc_id),
            key=lambda d: d.doc_id,
        )
        return [self.query_doc, *rest]

    def validate(self) -> None:
        for facet in FACET_NAMES:
            question = self.questions.get(facet)
            if not question or not question.strip():
                raise ValidationError(
                    "missing facet question", field_path=f"questions.{facet}"
                )
        for facet in self.questions:
            canonical_facet(facet)
        for doc in self.documents():
            if not doc.is_labeled:
                raise ValidationError(
                    f"document {doc.doc_id!r} lacks a complete label sequence",
                    field_path=f"documents.{doc.doc_id}.labels",
                )
        for facet in FACET_NAMES:
            pos_ids = {d.doc_id for d in self.pos.get(facet, ())}
            neg_ids = {d.doc_id for d in self.neg.get(facet, ())}
            clash = pos_ids & neg_ids
            if clash:
                raise ValidationError(
                    f"documents {sorted(clash)} are both positive and negative",
                    field_path=f"pos.{facet}",
                )

    def to_record(self) -> dict:
        return {
            "query_doc": self.query_doc.to_record(),
            "pos": {
                FACET_SHORT[f]: [d.to_record() for d in self.pos.get(f, ())]
                for f in FACET_NAMES
            },
            "neg": {
                FACET_SHORT[f]: [d.to_record() for d in self.neg.get(f, ())]
                for f in FACET_NAMES
            },
            "questions": {FACET_SHORT[f]: self.questions[f] for f in FACET_NAMES},
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "FacetTrainingUnit":
        def docs_of(mapping: Mapping, short: str) -> tuple[LabeledDocument, ...]:
            return tuple(LabeledDocument.from_record(r) for r in mapping.get(short, ()))

        return cls(
            query_doc=LabeledDocument.from_record(record["query_doc"]),
            pos={
                FACET_FROM_SHORT[s]: docs_of(record["pos"], s)
                for s in record.get("pos", {})
            },
            neg={
                FACET_FROM_SHORT[s]: docs_of(record["neg"], s)
                for s in record.get("neg", {})
            },
            questions={
                FACET_FROM_SHORT[s]: q for s, q in record["questions"].items()
            },
        )


def assemble_ftu(
    group: QueryGroup,
    documents: Mapping[str, LabeledDocument],
    questions: Mapping[str, str],
    warnings: Sequence[str] = (),
) -> FacetTrainingUnit:
    """Resolve a merged group's ids into a validated FacetTrainingUnit."""

    def resolve(ids: Sequence[str]) -> tuple[LabeledDocument, ...]:
        return tuple(documents[i] for i in ids if i in documents)

    ftu = FacetTrainingUnit(
        query_doc=documents[group.query_doc_id],
        pos={f: resolve(group.pos.get(f, ())) for f in FACET_NAMES},
        neg={f: resolve(group.neg.get(f, ())) for f in FACET_NAMES},
        questions=dict(questions),
        warnings=tuple(warnings),
    )
    ftu.validate()
    return ftu


def _dump_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"


def write_ftus(path: str | Path, ftus: Iterable[FacetTrainingUnit]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ftu in ftus:
            fh.write(_dump_line(ftu.to_record()))


def read_ftus(path: str | Path) -> list[FacetTrainingUnit]:
    ftus = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                ftus.append(FacetTrainingUnit.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValidationError) as err:
                raise ValidationError(
                    f"bad FTU at line {line_no}: {err}", field_path=f"line {line_no}"
                ) from err
    return ftus


def quarantine_path(ftu_path: str | Path) -> Path:
    return Path(str(ftu_path) + ".quarantine.jsonl")


# ------------------------------------------------------------- the pipeline


@dataclass
class BuildOptions:
    retries: int = DEFAULT_RETRIES
    backoff_base: float = 0.0
    max_pos_docs: int = 3
    fuzzy_threshold: float = DEFAULT_FUZZY_THRESHOLD


@dataclass
class BuildResult:
    ftus: list[FacetTrainingUnit]
    quarantined: list[dict]
    unlabeled_doc_ids: list[str]

    @property
    def partial_rate(self) -> float:
        total = len(self.ftus) + len(self.quarantined)
        return len(self.quarantined) / total if total else 0.0


def build_ftus(
    triplets: Sequence[FacetTriplet],
    documents: Mapping[str, LabeledDocument],
    llm: LlmClient,
    options: BuildOptions | None = None,
) -> BuildResult:
    """Run the full construction pipeline over merged triplet groups.

    Documents that fail labeling are excluded; groups whose query document is
    excluded, or that miss any facet question, land in quarantine.
    """
    options = options or BuildOptions()
    groups = merge_triplets(triplets)

    referenced: set[str] = set()
    for group in groups.values():
        referenced.add(group.query_doc_id)
        for mapping in (group.pos, group.neg):
            for ids in mapping.values():
                referenced.update(ids)

    labeled: dict[str, LabeledDocument] = {}
    unlabeled: list[str] = []
    quarantined: list[dict] = []
    for doc_id in sorted(referenced):
        if doc_id not in documents:
            unlabeled.append(doc_id)
            continue
        doc = documents[doc_id]
        if doc.is_labeled:
            labeled[doc_id] = doc
            continue
        try:
            labels = label_sentences(
                doc,
                llm,
                retries=options.retries,
                backoff_base=options.backoff_base,
                fuzzy_threshold=options.fuzzy_threshold,
            )
            labeled[doc_id] = doc.with_labels(labels)
        except (ParseError, CategoryError):
            unlabeled.append(doc_id)

    ftus: list[FacetTrainingUnit] = []
    for qid in sorted(groups):
        group = groups[qid]
        reasons: list[str] = []
        if qid not in labeled:
            reason = "query document missing" if qid not in documents else "query document unlabeled"
            quarantined.append({"query_doc_id": qid, "reasons": [reason], "questions": {}})
            continue
        questions: dict[str, str] = {}
        warnings: list[str] = []
        for facet in FACET_NAMES:
            pos_docs = [labeled[i] for i in group.pos.get(facet, ()) if i in labeled]
            try:
                text, flagged = generate_question(
                    labeled[qid], pos_docs, facet, llm, max_pos_docs=options.max_pos_docs
                )
            except EmptyFacetText:
                reasons.append(f"no {facet} sentences in query document")
                continue
            questions[facet] = text
            if flagged:
                warnings.append(
                    f"question:{facet} outside {MIN_QUESTION_WORDS}-{MAX_QUESTION_WORDS} words after reprompt"
                )
        if reasons:
            quarantined.append(
                {
                    "query_doc_id": qid,
                    "reasons": reasons,
                    "questions": {FACET_SHORT[f]: q for f, q in questions.items()},
                }
            )
            continue
        try:
            ftus.append(assemble_ftu(group, labeled, questions, warnings))
        except ValidationError as err:
            quarantined.append(
                {
                    "query_doc_id": qid,
                    "reasons": [f"validation failed at {err.field_path}: {err}"],
                    "questions": {FACET_SHORT[f]: q for f, q in questions.items()},
                }
            )
    return BuildResult(ftus=ftus, quarantined=quarantined, unlabeled_doc_ids=unlabeled)


def write_build_result(path: str | Path, result: BuildResult) -> None:
    write_ftus(path, result.ftus)
    with open(quarantine_path(path), "w", encoding="utf-8") as fh:
        for record in result.quarantined:
            fh.write(_dump_line(record))


# -------------------------------------------------------------------- stats


def corpus_stats(path: str | Path) -> dict:
    """Count FTUs, unique documents, questions per facet, field distribution."""
    ftus = read_ftus(path)
    doc_ids: set[str] = set()
    fields: dict[str, int] = {}
    questions = {FACET_SHORT[f]: 0 for f in FACET_NAMES}
    for ftu in ftus:
        for doc in ftu.documents():
            if doc.doc_id not in doc_ids:
                doc_ids.add(doc.doc_id)
                if doc.field is not None:
                    fields[doc.field] = fields.get(doc.field, 0) + 1
        for facet in FACET_NAMES:
            if ftu.questions.get(facet, "").strip():
                questions[FACET_SHORT[facet]] += 1
    return {
        "ftus": len(ftus),
        "unique_documents": len(doc_ids),
        "questions_per_facet": questions,
        "field_distribution": dict(sorted(fields.items())),
    }
