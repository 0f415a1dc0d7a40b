"""Tests for the FTU construction pipeline: triplets, labeling, questions,
assembly, transcript record/replay, and corpus statistics."""

import json

import pytest

from unifar.config import FACET_NAMES
from unifar.data_construction import (
    BuildOptions,
    FacetTrainingUnit,
    FacetTriplet,
    HttpClient,
    LabeledDocument,
    RecordingClient,
    ReplayClient,
    ScriptedClient,
    build_ftus,
    corpus_stats,
    generate_question,
    label_sentences,
    load_prompt,
    merge_triplets,
    quarantine_path,
    read_documents,
    read_ftus,
    read_triplets,
    write_build_result,
    write_ftus,
)
from unifar.errors import (
    CategoryError,
    EmptyFacetText,
    ParseError,
    PosNegConflict,
    ValidationError,
)

FACETS = ("background", "method", "result")


def make_labeled_doc(doc_id, labels=FACETS, title=None, field=None):
    sentences = tuple(
        f"{doc_id} statement {i} covers {lab} material in depth."
        for i, lab in enumerate(labels)
    )
    return LabeledDocument(
        doc_id=doc_id, title=title, sentences=sentences, labels=tuple(labels), field=field
    )


def question_text(n_words=30):
    return " ".join(f"term{i}" for i in range(n_words))


def labeling_json(doc, categories=None, fence=False, prose=False):
    categories = categories or list(doc.labels) or ["background"] * len(doc.sentences)
    entries = [
        {"sentence": s, "category": c} for s, c in zip(doc.sentences, categories)
    ]
    text = json.dumps(entries)
    if fence:
        text = f"```json\n{text}\n```"
    if prose:
        text = f"Here is the classification you asked for:\n{text}\nHope this helps!"
    return text


def make_unit(qid, field=None, questions=None):
    q = make_labeled_doc(qid, field=field)
    p = make_labeled_doc(qid + "-p")
    n = make_labeled_doc(qid + "-n")
    return FacetTrainingUnit(
        query_doc=q,
        pos={f: (p,) for f in FACETS},
        neg={f: (n,) for f in FACETS},
        questions=questions or {f: question_text(26 + i) for i, f in enumerate(FACETS)},
    )


# ----------------------------------------------------------------- documents


class TestLabeledDocument:
    def test_labels_are_canonicalized(self):
        doc = LabeledDocument("d", None, ("a.", "b."), labels=("bg", "mt"))
        assert doc.labels == ("background", "method")

    def test_label_count_mismatch_rejected(self):
        with pytest.raises(ValidationError) as info:
            LabeledDocument("d", None, ("a.", "b."), labels=("background",))
        assert info.value.field_path == "d.labels"

    def test_with_labels_returns_labeled_copy(self):
        doc = LabeledDocument("d", "T", ("a.", "b."), field="cs")
        assert not doc.is_labeled
        relabeled = doc.with_labels(("method", "result"))
        assert relabeled.is_labeled
        assert relabeled.labels == ("method", "result")
        assert relabeled.title == "T" and relabeled.field == "cs"
        assert not doc.is_labeled  # original untouched

    def test_facet_sentences_filters_by_label(self):
        doc = make_labeled_doc("d", labels=("background", "method", "background"))
        picked = doc.facet_sentences("bg")
        assert picked == (doc.sentences[0], doc.sentences[2])
        assert doc.facet_sentences("result") == ()

    def test_record_roundtrip_preserves_fields(self):
        doc = make_labeled_doc("d", title="A Title", field="physics")
        again = LabeledDocument.from_record(doc.to_record())
        assert again == doc

    def test_field_omitted_from_record_when_absent(self):
        assert "field" not in make_labeled_doc("d").to_record()

    def test_from_record_splits_text_when_no_sentences(self):
        doc = LabeledDocument.from_record(
            {"id": "t", "text": "First point stands. Second point follows."}
        )
        assert doc.sentences == ("First point stands.", "Second point follows.")
        assert doc.labels == ()

    def test_from_record_without_content_rejected(self):
        with pytest.raises(ValidationError):
            LabeledDocument.from_record({"id": "empty"})


class TestReadDocuments:
    def test_reads_sentence_and_text_records(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text(
            json.dumps({"id": "a", "sentences": ["One.", "Two."], "labels": ["bg", "mt"]})
            + "\n\n"
            + json.dumps({"id": "b", "text": "Alpha starts. Beta ends."})
            + "\n"
        )
        docs = read_documents(path)
        assert set(docs) == {"a", "b"}
        assert docs["a"].labels == ("background", "method")
        assert docs["b"].sentences == ("Alpha starts.", "Beta ends.")

    def test_duplicate_id_rejected_with_line_number(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        record = json.dumps({"id": "a", "sentences": ["One."]})
        path.write_text(record + "\n" + record + "\n")
        with pytest.raises(ValidationError, match="line 2"):
            read_documents(path)


# ------------------------------------------------------------------ triplets


class TestTriplets:
    def test_facet_is_canonicalized(self):
        t = FacetTriplet("q", "rs", "p", "n")
        assert t.facet == "result"

    def test_identical_ids_rejected(self):
        with pytest.raises(ValidationError):
            FacetTriplet("q", "method", "q", "n")

    def test_record_roundtrip_uses_short_facet_codes(self):
        t = FacetTriplet("q", "method", "p", "n")
        record = t.to_record()
        assert record == {"query_id": "q", "facet": "mt", "pos_id": "p", "neg_id": "n"}
        assert FacetTriplet.from_record(record) == t

    def test_read_triplets_skips_blank_lines(self, tmp_path):
        path = tmp_path / "triplets.jsonl"
        path.write_text(
            json.dumps(FacetTriplet("q", "bg", "p", "n").to_record()) + "\n\n"
        )
        assert read_triplets(path) == [FacetTriplet("q", "background", "p", "n")]

    def test_merge_groups_by_query_and_facet(self):
        triplets = [
            FacetTriplet("q1", "background", "p1", "n1"),
            FacetTriplet("q1", "background", "p2", "n1"),  # dedup negative
            FacetTriplet("q1", "method", "p3", "n2"),
            FacetTriplet("q2", "result", "p1", "n3"),
        ]
        groups = merge_triplets(triplets)
        assert sorted(groups) == ["q1", "q2"]
        g1 = groups["q1"]
        assert g1.pos["background"] == ("p1", "p2")
        assert g1.neg["background"] == ("n1",)
        assert g1.pos["method"] == ("p3",)
        assert g1.pos["result"] == ()
        assert groups["q2"].neg["result"] == ("n3",)

    def test_merge_is_order_invariant(self):
        triplets = [
            FacetTriplet("q1", "background", "p2", "n1"),
            FacetTriplet("q1", "background", "p1", "n2"),
            FacetTriplet("q2", "method", "p9", "n9"),
        ]
        assert merge_triplets(triplets) == merge_triplets(list(reversed(triplets)))

    def test_pos_neg_conflict_detected(self):
        triplets = [
            FacetTriplet("q", "method", "a", "b"),
            FacetTriplet("q", "method", "b", "a"),
        ]
        with pytest.raises(PosNegConflict) as info:
            merge_triplets(triplets)
        assert info.value.offending_ids == ["a", "b"]

    def test_same_doc_opposite_roles_across_facets_allowed(self):
        groups = merge_triplets(
            [
                FacetTriplet("q", "method", "a", "b"),
                FacetTriplet("q", "result", "b", "a"),
            ]
        )
        assert groups["q"].pos["method"] == ("a",)
        assert groups["q"].neg["result"] == ("a",)


# ------------------------------------------------------------------- prompts


class TestPrompts:
    def test_labeling_template_loads_with_placeholder(self):
        template = load_prompt("sentence_labeling")
        assert template.system
        assert "{sentences_list}" in template.user_template

    def test_question_template_loads_with_placeholders(self):
        template = load_prompt("question_generation")
        for key in ("{facet_type}", "{query_text}", "{pos_text}", "{requirement}"):
            assert key in template.user_template

    def test_fill_replaces_only_known_keys(self):
        template = load_prompt("sentence_labeling")
        filled = template.fill(sentences_list="\n1. Alpha.")
        assert "1. Alpha." in filled
        assert "{sentences_list}" not in filled
        # literal brace groups that are not substitution keys survive
        assert "{background, method, result}" in filled


# ------------------------------------------------------------------ labeling


class TestLabelSentences:
    def test_exact_match_happy_path(self):
        doc = make_labeled_doc("d").with_labels(())  # strip labels, keep sentences
        client = ScriptedClient([labeling_json(doc, ["background", "method", "result"])])
        labels = label_sentences(doc, client)
        assert labels == ("background", "method", "result")
        assert len(client.calls) == 1
        system, prompt = client.calls[0]
        assert "1. " + doc.sentences[0] in prompt
        assert f"3. {doc.sentences[2]}" in prompt

    def test_code_fenced_response_parsed(self):
        doc = make_labeled_doc("d")
        client = ScriptedClient([labeling_json(doc, fence=True)])
        assert label_sentences(doc, client) == ("background", "method", "result")

    def test_json_embedded_in_prose_parsed(self):
        doc = make_labeled_doc("d")
        client = ScriptedClient([labeling_json(doc, prose=True)])
        assert label_sentences(doc, client) == ("background", "method", "result")

    def test_short_category_codes_accepted(self):
        doc = make_labeled_doc("d")
        client = ScriptedClient([labeling_json(doc, ["bg", "mt", "rs"])])
        assert label_sentences(doc, client) == ("background", "method", "result")

    def test_fuzzy_alignment_tolerates_small_echo_drift(self):
        doc = make_labeled_doc("d")
        entries = [
            {"sentence": s.rstrip("."), "category": c}  # echo drops the period
            for s, c in zip(doc.sentences, FACETS)
        ]
        client = ScriptedClient([json.dumps(entries)])
        assert label_sentences(doc, client) == ("background", "method", "result")

    def test_duplicate_sentences_consume_entries_in_order(self):
        doc = LabeledDocument("d", None, ("Same line twice.", "Same line twice."))
        entries = [
            {"sentence": "Same line twice.", "category": "background"},
            {"sentence": "Same line twice.", "category": "method"},
        ]
        client = ScriptedClient([json.dumps(entries)])
        assert label_sentences(doc, client) == ("background", "method")

    def test_retry_recovers_from_bad_first_response(self):
        doc = make_labeled_doc("d")
        client = ScriptedClient(["not json at all", labeling_json(doc)])
        assert label_sentences(doc, client, retries=2) == FACETS
        assert len(client.calls) == 2

    def test_backoff_sleeps_doubling_between_retries(self):
        doc = make_labeled_doc("d")
        naps = []
        client = ScriptedClient(["bad", "bad", labeling_json(doc)])
        label_sentences(
            doc, client, retries=3, backoff_base=0.5, sleep=naps.append
        )
        assert naps == [0.5, 1.0]

    def test_exhausted_retries_raise_parse_error(self):
        doc = make_labeled_doc("d")
        client = ScriptedClient(["junk", "junk"])
        with pytest.raises(ParseError):
            label_sentences(doc, client, retries=2)
        assert len(client.calls) == 2

    def test_unknown_category_raises_category_error(self):
        doc = make_labeled_doc("d")
        bad = labeling_json(doc, ["background", "conclusion", "result"])
        client = ScriptedClient([bad])
        with pytest.raises(CategoryError, match="conclusion"):
            label_sentences(doc, client, retries=1)

    def test_unalignable_entries_raise_parse_error(self):
        doc = make_labeled_doc("d")
        entries = [
            {"sentence": f"Completely unrelated text {i}.", "category": "method"}
            for i in range(3)
        ]
        client = ScriptedClient([json.dumps(entries)])
        with pytest.raises(ParseError, match="aligns"):
            label_sentences(doc, client, retries=1)

    def test_empty_document_rejected_before_any_call(self):
        doc = LabeledDocument("d", None, ())
        client = ScriptedClient([])
        with pytest.raises(ValidationError):
            label_sentences(doc, client)
        assert client.calls == []


# ------------------------------------------------------------ question gen


class TestGenerateQuestion:
    def test_in_bounds_first_try(self):
        query = make_labeled_doc("q")
        pos = make_labeled_doc("p")
        client = ScriptedClient([question_text(25)])
        text, flagged = generate_question(query, [pos], "method", client)
        assert text == question_text(25)
        assert flagged is False
        assert len(client.calls) == 1

    def test_prompt_carries_facet_texts_and_requirement(self):
        query = make_labeled_doc("q")
        pos = make_labeled_doc("p")
        client = ScriptedClient([question_text(30)])
        generate_question(query, [pos], "method", client)
        system, prompt = client.calls[0]
        assert system == load_prompt("question_generation").system
        assert query.facet_sentences("method")[0] in prompt
        assert pos.facet_sentences("method")[0] in prompt
        assert "technical methods, experimental design, and innovations" in prompt
        assert "{facet_type}" not in prompt
        assert "Generated method query:" in prompt

    def test_reprompt_once_when_out_of_bounds(self):
        query = make_labeled_doc("q")
        client = ScriptedClient(["too short", question_text(50)])
        text, flagged = generate_question(query, [], "background", client)
        assert text == question_text(50)
        assert flagged is False
        assert len(client.calls) == 2

    def test_second_violation_accepted_but_flagged(self):
        query = make_labeled_doc("q")
        client = ScriptedClient(["too short", question_text(51)])
        text, flagged = generate_question(query, [], "background", client)
        assert flagged is True
        assert text == question_text(51)

    def test_quotes_fences_and_whitespace_stripped(self):
        query = make_labeled_doc("q")
        raw = '```\n"' + "  ".join(f"term{i}" for i in range(30)) + '"\n```'
        client = ScriptedClient([raw])
        text, flagged = generate_question(query, [], "result", client)
        assert text == question_text(30)
        assert flagged is False

    def test_max_pos_docs_truncates_prompt_material(self):
        query = make_labeled_doc("q")
        pos = [make_labeled_doc(f"p{i}") for i in range(4)]
        client = ScriptedClient([question_text(30)])
        generate_question(query, pos, "result", client, max_pos_docs=2)
        prompt = client.calls[0][1]
        assert pos[0].facet_sentences("result")[0] in prompt
        assert pos[1].facet_sentences("result")[0] in prompt
        assert pos[2].facet_sentences("result")[0] not in prompt

    def test_positives_without_facet_text_skipped(self):
        query = make_labeled_doc("q")
        no_result = make_labeled_doc("p", labels=("background", "method"))
        client = ScriptedClient([question_text(30)])
        generate_question(query, [no_result], "result", client)
        assert no_result.sentences[0] not in client.calls[0][1]

    def test_query_without_facet_text_rejected_before_any_call(self):
        query = make_labeled_doc("q", labels=("background", "method"))
        client = ScriptedClient([])
        with pytest.raises(EmptyFacetText, match="result"):
            generate_question(query, [], "result", client)
        assert client.calls == []


# --------------------------------------------------------------------- FTUs


class TestFacetTrainingUnit:
    def test_documents_unique_query_first_then_sorted(self):
        shared = make_labeled_doc("m-doc")
        unit = FacetTrainingUnit(
            query_doc=make_labeled_doc("zz-query"),
            pos={"background": (shared, make_labeled_doc("a-doc")), "method": (shared,)},
            neg={"result": (make_labeled_doc("k-doc"),)},
            questions={f: question_text() for f in FACETS},
        )
        ids = [d.doc_id for d in unit.documents()]
        assert ids == ["zz-query", "a-doc", "k-doc", "m-doc"]

    def test_validate_passes_on_complete_unit(self):
        make_unit("q1").validate()

    def test_validate_rejects_missing_question(self):
        unit = make_unit("q1")
        unit.questions.pop("method")
        with pytest.raises(ValidationError) as info:
            unit.validate()
        assert info.value.field_path == "questions.method"

    def test_validate_rejects_blank_question(self):
        unit = make_unit("q1", questions={"background": question_text(),
                                          "method": "   ",
                                          "result": question_text()})
        with pytest.raises(ValidationError):
            unit.validate()

    def test_validate_rejects_unlabeled_document(self):
        unit = make_unit("q1")
        bare = LabeledDocument("bare", None, ("No labels here.",))
        unit.neg["method"] = (bare,)
        with pytest.raises(ValidationError) as info:
            unit.validate()
        assert info.value.field_path == "documents.bare.labels"

    def test_validate_rejects_pos_neg_overlap(self):
        unit = make_unit("q1")
        unit.neg["background"] = unit.pos["background"]
        with pytest.raises(ValidationError) as info:
            unit.validate()
        assert info.value.field_path == "pos.background"

    def test_record_roundtrip_uses_short_keys(self):
        unit = make_unit("q1", field="cs")
        record = unit.to_record()
        assert set(record["pos"]) == {"bg", "mt", "rs"}
        assert set(record["questions"]) == {"bg", "mt", "rs"}
        again = FacetTrainingUnit.from_record(record)
        assert again.query_doc == unit.query_doc
        assert again.pos == unit.pos
        assert again.neg == unit.neg
        assert again.questions == unit.questions


class TestFtuFiles:
    def test_write_read_write_is_byte_identical(self, tmp_path):
        units = [make_unit("q1", field="cs"), make_unit("q2")]
        first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_ftus(first, units)
        write_ftus(second, read_ftus(first))
        assert first.read_bytes() == second.read_bytes()

    def test_lines_are_compact_sorted_json(self, tmp_path):
        path = tmp_path / "ftus.jsonl"
        write_ftus(path, [make_unit("q1")])
        line = path.read_text().splitlines()[0]
        parsed = json.loads(line)
        assert line == json.dumps(parsed, sort_keys=True, separators=(",", ":"))
        assert list(parsed) == sorted(parsed)

    def test_corrupt_line_reported_with_line_number(self, tmp_path):
        path = tmp_path / "ftus.jsonl"
        write_ftus(path, [make_unit("q1")])
        with open(path, "a") as fh:
            fh.write("{this is not json\n")
        with pytest.raises(ValidationError, match="line 2") as info:
            read_ftus(path)
        assert info.value.field_path == "line 2"

    def test_structurally_wrong_line_reported(self, tmp_path):
        path = tmp_path / "ftus.jsonl"
        path.write_text('{"query_doc": {"id": "x", "sentences": ["A."]}}\n')
        with pytest.raises(ValidationError, match="line 1"):
            read_ftus(path)


# ----------------------------------------------------------------- clients


class TestClients:
    def test_scripted_client_replays_in_order_then_fails(self):
        client = ScriptedClient(["one", "two"])
        assert client.complete("s", "p1") == "one"
        assert client.complete("s", "p2") == "two"
        with pytest.raises(RuntimeError, match="ran out"):
            client.complete("s", "p3")

    def test_recording_client_truncates_and_appends_jsonl(self, tmp_path):
        path = tmp_path / "transcript.jsonl"
        path.write_text("stale content\n")
        client = RecordingClient(ScriptedClient(["answer"]), path)
        assert path.read_text() == ""
        assert client.complete("sys", "ask") == "answer"
        record = json.loads(path.read_text().splitlines()[0])
        assert record == {"system": "sys", "prompt": "ask", "response": "answer"}

    def test_replay_client_returns_recorded_responses(self, tmp_path):
        path = tmp_path / "t.jsonl"
        recorder = RecordingClient(ScriptedClient(["a", "b"]), path)
        recorder.complete("s", "p1")
        recorder.complete("s", "p2")
        replay = ReplayClient(path)
        assert replay.complete("s", "p1") == "a"
        assert replay.complete("s", "p2") == "b"
        with pytest.raises(RuntimeError, match="exhausted"):
            replay.complete("s", "p3")

    def test_replay_client_strict_rejects_prompt_drift(self, tmp_path):
        path = tmp_path / "t.jsonl"
        RecordingClient(ScriptedClient(["a"]), path).complete("s", "recorded prompt")
        with pytest.raises(RuntimeError, match="mismatch"):
            ReplayClient(path).complete("s", "different prompt")
        assert ReplayClient(path, strict=False).complete("s", "different prompt") == "a"

    def test_http_client_speaks_chat_completions(self, monkeypatch):
        seen = {}

        class FakeResponse:
            def read(self):
                return json.dumps(
                    {"choices": [{"message": {"content": "reply text"}}]}
                ).encode()

            def __enter__(self):
                return self

            def __exit__(self, *args):
                return False

        def fake_urlopen(request, timeout):
            seen["url"] = request.full_url
            seen["auth"] = request.get_header("Authorization")
            seen["payload"] = json.loads(request.data.decode())
            seen["timeout"] = timeout
            return FakeResponse()

        monkeypatch.setattr("urllib.request.urlopen", fake_urlopen)
        client = HttpClient(
            api_key="secret-key", base_url="https://llm.example.test/v1/", model="m-1"
        )
        assert client.complete("sys", "user question") == "reply text"
        assert seen["url"] == "https://llm.example.test/v1/chat/completions"
        assert seen["auth"] == "Bearer secret-key"
        assert seen["payload"]["model"] == "m-1"
        assert seen["payload"]["messages"] == [
            {"role": "system", "content": "sys"},
            {"role": "user", "content": "user question"},
        ]


# ---------------------------------------------------------------- pipeline


class TestBuildFtus:
    def test_prelabeled_corpus_only_generates_questions(self):
        docs = {d.doc_id: d for d in (make_labeled_doc(i) for i in ("q1", "p1", "n1"))}
        triplets = [FacetTriplet("q1", f, "p1", "n1") for f in FACETS]
        client = ScriptedClient([question_text(25 + i) for i in range(3)])
        result = build_ftus(triplets, docs, client)
        assert len(result.ftus) == 1
        assert result.quarantined == [] and result.unlabeled_doc_ids == []
        ftu = result.ftus[0]
        assert ftu.ftu_id == "q1"
        assert ftu.questions == {
            "background": question_text(25),
            "method": question_text(26),
            "result": question_text(27),
        }
        assert [d.doc_id for d in ftu.pos["method"]] == ["p1"]
        assert len(client.calls) == 3  # no labeling calls

    def test_unlabeled_docs_labeled_before_questions(self):
        bare = LabeledDocument(
            "q1",
            None,
            (
                "Prior work leaves a gap.",
                "A new procedure is introduced.",
                "Accuracy improves measurably.",
            ),
        )
        docs = {"q1": bare, "p1": make_labeled_doc("p1"), "n1": make_labeled_doc("n1")}
        triplets = [FacetTriplet("q1", f, "p1", "n1") for f in FACETS]
        responses = [
            labeling_json(bare, ["background", "method", "result"]),
            question_text(25),
            question_text(30),
            question_text(35),
        ]
        client = ScriptedClient(responses)
        result = build_ftus(triplets, docs, client)
        assert len(result.ftus) == 1
        assert result.ftus[0].query_doc.labels == FACETS
        assert len(client.calls) == 4

    def test_quarantine_reasons_and_partial_rate(self):
        docs = {
            "qa": make_labeled_doc("qa"),
            "qc": LabeledDocument("qc", None, ("Only one unlabeled line.",)),
            "qd": make_labeled_doc("qd", labels=("background", "method", "background")),
            "pa": make_labeled_doc("pa"),
            "na": make_labeled_doc("na"),
        }
        triplets = []
        for qid in ("qa", "qb", "qc", "qd"):
            triplets.extend(FacetTriplet(qid, f, "pa", "na") for f in FACETS)
        responses = [
            "unparseable labeling output",  # qc labeling fails (retries=1)
            question_text(25),  # qa background
            question_text(26),  # qa method
            question_text(27),  # qa result
            question_text(28),  # qd background
            question_text(29),  # qd method — then result has no facet text
        ]
        client = ScriptedClient(responses)
        result = build_ftus(triplets, docs, client, BuildOptions(retries=1))

        assert [f.ftu_id for f in result.ftus] == ["qa"]
        assert result.unlabeled_doc_ids == ["qb", "qc"]
        reasons = {q["query_doc_id"]: q["reasons"] for q in result.quarantined}
        assert reasons == {
            "qb": ["query document missing"],
            "qc": ["query document unlabeled"],
            "qd": ["no result sentences in query document"],
        }
        qd_record = next(q for q in result.quarantined if q["query_doc_id"] == "qd")
        assert set(qd_record["questions"]) == {"bg", "mt"}
        assert result.partial_rate == pytest.approx(3 / 4)

    def test_partial_rate_zero_when_nothing_built(self):
        result = build_ftus([], {}, ScriptedClient([]))
        assert result.ftus == [] and result.partial_rate == 0.0

    def test_unlabelable_positive_dropped_but_unit_survives(self):
        bad_pos = LabeledDocument("p-bad", None, ("Unlabeled positive line.",))
        docs = {
            "q1": make_labeled_doc("q1"),
            "p-ok": make_labeled_doc("p-ok"),
            "p-bad": bad_pos,
            "n1": make_labeled_doc("n1"),
        }
        triplets = [
            FacetTriplet("q1", "method", "p-ok", "n1"),
            FacetTriplet("q1", "method", "p-bad", "n1"),
        ]
        responses = ["garbage", question_text(25), question_text(30), question_text(40)]
        result = build_ftus(triplets, docs, ScriptedClient(responses), BuildOptions(retries=1))
        assert result.unlabeled_doc_ids == ["p-bad"]
        assert len(result.ftus) == 1
        assert [d.doc_id for d in result.ftus[0].pos["method"]] == ["p-ok"]

    def test_twice_out_of_bounds_question_records_warning(self):
        docs = {d.doc_id: d for d in (make_labeled_doc(i) for i in ("q1", "p1", "n1"))}
        triplets = [FacetTriplet("q1", "background", "p1", "n1")]
        responses = [
            "short",  # background attempt 1
            "still short",  # background attempt 2 -> flagged
            question_text(30),  # method
            question_text(30),  # result
        ]
        result = build_ftus(triplets, docs, ScriptedClient(responses))
        (ftu,) = result.ftus
        assert ftu.warnings == (
            "question:background outside 25-50 words after reprompt",
        )

    def test_write_build_result_emits_unit_and_quarantine_files(self, tmp_path):
        docs = {
            "qa": make_labeled_doc("qa"),
            "pa": make_labeled_doc("pa"),
            "na": make_labeled_doc("na"),
        }
        triplets = [FacetTriplet(q, "method", "pa", "na") for q in ("qa", "qb")]
        responses = [question_text(25), question_text(30), question_text(35)]
        result = build_ftus(triplets, docs, ScriptedClient(responses))
        out = tmp_path / "ftus.jsonl"
        write_build_result(out, result)
        assert len(read_ftus(out)) == 1
        quarantine_lines = quarantine_path(out).read_text().splitlines()
        assert json.loads(quarantine_lines[0])["query_doc_id"] == "qb"

    def test_recorded_run_replays_byte_identical(self, tmp_path):
        bare = LabeledDocument(
            "q1",
            None,
            (
                "Existing tools struggle at scale.",
                "The routine processes inputs in stages.",
                "Throughput doubles in trials.",
            ),
        )
        docs = {"q1": bare, "p1": make_labeled_doc("p1"), "n1": make_labeled_doc("n1")}
        triplets = [FacetTriplet("q1", f, "p1", "n1") for f in FACETS]
        responses = [
            labeling_json(bare, ["background", "method", "result"]),
            question_text(26),
            question_text(31),
            question_text(44),
        ]
        transcript = tmp_path / "transcript.jsonl"
        recorder = RecordingClient(ScriptedClient(responses), transcript)
        first_out = tmp_path / "first.jsonl"
        write_build_result(first_out, build_ftus(triplets, docs, recorder))

        lines = transcript.read_text().splitlines()
        assert len(lines) == 4
        assert all(set(json.loads(l)) == {"prompt", "response", "system"} for l in lines)

        second_out = tmp_path / "second.jsonl"
        write_build_result(
            second_out, build_ftus(triplets, docs, ReplayClient(transcript))
        )
        assert first_out.read_bytes() == second_out.read_bytes()
        assert quarantine_path(first_out).read_bytes() == quarantine_path(second_out).read_bytes()


# ------------------------------------------------------------------- stats


class TestCorpusStats:
    def test_hand_tallied_counts(self, tmp_path):
        shared = make_labeled_doc("shared", field="biology")
        unit_a = FacetTrainingUnit(
            query_doc=make_labeled_doc("qa", field="chemistry"),
            pos={f: (shared,) for f in FACETS},
            neg={"background": (make_labeled_doc("na"),)},
            questions={f: question_text() for f in FACETS},
        )
        unit_b = FacetTrainingUnit(
            query_doc=make_labeled_doc("qb", field="chemistry"),
            pos={f: (shared,) for f in FACETS},
            neg={"method": (make_labeled_doc("nb", field="biology"),)},
            questions={
                "background": question_text(),
                "method": question_text(),
                "result": "",  # uncounted
            },
        )
        path = tmp_path / "ftus.jsonl"
        write_ftus(path, [unit_a, unit_b])
        stats = corpus_stats(path)
        assert stats == {
            "ftus": 2,
            "unique_documents": 5,  # qa, qb, shared, na, nb
            "questions_per_facet": {"bg": 2, "mt": 2, "rs": 1},
            "field_distribution": {"biology": 2, "chemistry": 2},
        }
