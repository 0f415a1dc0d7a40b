"""Library tour: facet representations, attention maps, and facet search.

Builds a small randomly-initialized model, represents one document and one
question, prints the per-facet attention over sentences, and runs both
scoring strategies over a three-document index.  Everything is deterministic
and finishes in a few seconds on a CPU.

Run:  python3 demos/quickstart.py
"""

from unifar.config import AggregationConfig, EncoderConfig, FACET_NAMES
from unifar.encoding import DOCUMENT, QUESTION, segment_input
from unifar.model import UnifarModel
from unifar.retrieval import FacetIndex, ScoringStrategy, score, similarity_matrix


def banner(text: str) -> None:
    print(f"\n=== {text} " + "=" * max(0, 60 - len(text)))


def main() -> None:
    banner("build a model")
    model = UnifarModel.build(
        EncoderConfig(
            base_model_name="lookup", hidden_size=32, vocab_size=2048,
            max_sequence_length=128,
        ),
        AggregationConfig(head_count=2),
        seed=7,
    )
    print(f"facets: {', '.join(FACET_NAMES)}")

    banner("represent a document (sentence branch)")
    doc = segment_input(
        [
            "Prior pipelines reprocess the full input on every update.",
            "We split the input into stages and cache intermediate state.",
            "End-to-end latency drops by 41% on the stress workload.",
        ],
        kind=DOCUMENT,
        title="Staged caching for incremental pipelines",
        input_id="paper-1",
    )
    rep = model.represent(doc)
    print(f"branch={rep.branch}  embeddings={tuple(rep.embeddings.shape)}")
    labels = ["title", "sent0", "sent1", "sent2"]
    print("attention rows (facet x sentence, each row sums to 1):")
    header = "            " + "  ".join(f"{l:>7}" for l in labels)
    print(header)
    for name, row in zip(FACET_NAMES, rep.attention.detach().numpy()):
        cells = "  ".join(f"{v:7.3f}" for v in row)
        print(f"  {name:<10}{cells}")

    banner("represent a question (token branch)")
    question = segment_input(
        "how much does staged caching cut latency",
        kind=QUESTION,
        input_id="q-1",
    )
    q_rep = model.represent(question)
    print(f"branch={q_rep.branch}  (short inputs attend over tokens instead)")

    banner("facet similarity matrix and scoring strategies")
    matrix = similarity_matrix(q_rep, rep)
    print("query-facet x candidate-facet cosine grid:")
    for name, row in zip(FACET_NAMES, matrix.values):
        print(f"  {name:<10}" + "  ".join(f"{v:7.3f}" for v in row))
    for strategy in (ScoringStrategy.diagonal_mean(), ScoringStrategy.for_facet(1)):
        print(f"  score[{strategy.label():<12}] = {score(matrix, strategy):.4f}")

    banner("index three documents and search")
    corpus = [
        doc,
        segment_input(
            [
                "Survey articles catalogue caching strategies.",
                "We group systems by eviction policy.",
                "Coverage spans two decades of work.",
            ],
            kind=DOCUMENT,
            input_id="paper-2",
        ),
        segment_input(
            [
                "Measurement noise dominates small benchmarks.",
                "We bootstrap confidence intervals per run.",
                "Variance shrinks fourfold under the protocol.",
            ],
            kind=DOCUMENT,
            input_id="paper-3",
        ),
    ]
    index = FacetIndex.build(model.represent_corpus(corpus))
    for strategy_text in ("diag-mean", "facet:method"):
        strategy = ScoringStrategy.parse(strategy_text)
        hits = index.search(q_rep, strategy, k=3)
        ranked = ", ".join(f"{cid}={s:.3f}" for cid, s in hits)
        print(f"  {strategy_text:<12} -> {ranked}")

    print("\nDone. An untrained model ranks arbitrarily; see train_planted.py")
    print("for the same machinery after a short training run.")


if __name__ == "__main__":
    main()
