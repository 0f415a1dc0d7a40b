"""Learning demo: contrastive + alignment training on a separable corpus.

Generates a small synthetic corpus whose topics and facets are marked by
dedicated vocabulary, trains the model for a few hundred optimizer steps, and
compares held-out retrieval quality before and after.  The lookup encoder can
learn the task from token overlap alone, so the whole story fits in well
under a minute on a CPU and is fully deterministic.

Run:  python3 demos/train_planted.py
"""

from __future__ import annotations

from unifar.config import AggregationConfig, EncoderConfig, FACET_NAMES, TrainConfig
from unifar.data_construction import FacetTrainingUnit, LabeledDocument
from unifar.encoding import QUESTION, segment_input
from unifar.evaluation import average_precision
from unifar.model import UnifarModel
from unifar.retrieval import FacetIndex, ScoringStrategy
from unifar.training import train

N_TOPICS = 8
VARIANTS = 4


def term(facet: str, topic: int, j: int) -> str:
    return f"{facet[:2]}topic{topic}term{j}"


def doc_id(topic: int, variant: int) -> str:
    return f"t{topic}d{variant}"


def make_document(topic: int, variant: int) -> LabeledDocument:
    sentences, labels = [], []
    for facet in FACET_NAMES:
        for half in range(2):
            words = [
                term(facet, topic, half * 2),
                term(facet, topic, half * 2 + 1),
                f"variant{variant}extra{half}",
            ]
            sentences.append(" ".join(words))
            labels.append(facet)
    return LabeledDocument(
        doc_id=doc_id(topic, variant),
        title=None,
        sentences=tuple(sentences),
        labels=tuple(labels),
        field="synthetic",
    )


def make_corpus() -> list[LabeledDocument]:
    return [
        make_document(topic, variant)
        for topic in range(N_TOPICS)
        for variant in range(VARIANTS)
    ]


def training_question(topic: int, facet: str) -> str:
    words = ["what", "does", "the", "work", "on"]
    words += [term(facet, topic, j) for j in range(4)]
    words += ["tell", "us"] + [f"pad{facet[:2]}{topic}w{i}" for i in range(16)]
    return " ".join(words)


def make_ftus(corpus: list[LabeledDocument]) -> list[FacetTrainingUnit]:
    by_id = {d.doc_id: d for d in corpus}
    pos_variant = {"background": 1, "method": 2, "result": 3}
    units = []
    for topic in range(N_TOPICS):
        pos, neg = {}, {}
        for facet_index, facet in enumerate(FACET_NAMES):
            pos[facet] = (by_id[doc_id(topic, pos_variant[facet])],)
            neg[facet] = tuple(
                by_id[
                    doc_id(
                        (topic + offset + facet_index) % N_TOPICS,
                        1 + (offset + facet_index) % 3,
                    )
                ]
                for offset in (1, 2, 3)
            )
        units.append(
            FacetTrainingUnit(
                query_doc=by_id[doc_id(topic, 0)],
                pos=pos,
                neg=neg,
                questions={f: training_question(topic, f) for f in FACET_NAMES},
            )
        )
    return units


def heldout_map(model: UnifarModel, corpus: list[LabeledDocument]) -> float:
    """Mean average precision of unseen facet-vocabulary probes."""
    index = FacetIndex.build(model.represent_corpus(d.to_sequence() for d in corpus))
    strategy = ScoringStrategy.diagonal_mean()
    values = []
    for topic in range(N_TOPICS):
        facet = FACET_NAMES[topic % len(FACET_NAMES)]
        probe = segment_input(
            " ".join(term(facet, topic, j) for j in range(4)),
            kind=QUESTION,
            input_id=f"probe{topic}",
        )
        ranking = [
            cid
            for cid, _ in index.search(model.represent(probe), strategy, k=index.count)
        ]
        relevant = {doc_id(topic, v) for v in range(VARIANTS)}
        values.append(average_precision(ranking, relevant))
    return sum(values) / len(values)


def main() -> None:
    corpus = make_corpus()
    ftus = make_ftus(corpus)
    print(f"corpus: {len(corpus)} documents, {len(ftus)} training units")

    model = UnifarModel.build(
        EncoderConfig(
            base_model_name="lookup", hidden_size=16, vocab_size=512,
            max_sequence_length=64,
        ),
        AggregationConfig(head_count=1),
        seed=13,
    )
    before = heldout_map(model, corpus)
    print(f"held-out MAP before training: {before:.4f}")

    cfg = TrainConfig(
        epochs=100,
        batch_size=4,
        grad_accumulation=1,
        warmup_fraction=0.05,
        lr_base=2e-3,
        lr_aggregation=5e-3,
        lambda_start=0.3,
        lambda_end=0.5,
        seed=13,
        max_steps=200,
    )
    result = train(model, ftus, cfg)
    history = result.history
    print(f"\ntrained for {result.total_steps} optimizer steps; loss trajectory:")
    for record in [history[0], history[len(history) // 4], history[len(history) // 2], history[-1]]:
        print(
            f"  step {record['step']:>3}  total={record['total']:.4f}  "
            f"dd={record['l_dd']:.4f}  qd={record['l_qd']:.4f}  kl={record['l_kl']:.4f}"
        )

    after = heldout_map(result.model, corpus)
    drop = history[-1]["total"] / history[0]["total"]
    print(f"\nloss ratio final/initial: {drop:.3f}")
    print(f"held-out MAP before: {before:.4f}   after: {after:.4f}")
    print("\nThe probes share vocabulary with their topic's documents only, so")
    print("the jump in MAP shows the facet embeddings picked up the planted")
    print("topic/facet structure rather than memorizing the training queries.")


if __name__ == "__main__":
    main()
