"""UniFAR: unified facet-aware representations for scientific retrieval.

One model serves both document-document and question-document retrieval by
representing every input as one embedding per facet (background, method,
result), aggregated from sentence- or token-level encoder outputs by
anchor-conditioned attention.
"""

from .aggregation import (
    SENTENCE,
    TOKEN,
    FacetAggregator,
    FacetAttention,
    FacetRepresentation,
    select_branch,
)
from .config import (
    FACET_NAMES,
    FACET_SHORT,
    AggregationConfig,
    EncoderConfig,
    RunConfig,
    TrainConfig,
    canonical_facet,
    load_config,
    mpnet_low_lr,
)
from .data_construction import (
    BuildOptions,
    BuildResult,
    FacetTrainingUnit,
    FacetTriplet,
    LabeledDocument,
    LlmClient,
    RecordingClient,
    ReplayClient,
    ScriptedClient,
    assemble_ftu,
    build_ftus,
    corpus_stats,
    generate_question,
    label_sentences,
    merge_triplets,
    read_ftus,
    write_ftus,
)
from .encoding import (
    DOCUMENT,
    QUESTION,
    HashTokenizer,
    InputSequence,
    LookupEncoder,
    TokenizedInput,
    read_corpus,
    segment_input,
    split_sentences,
    tokenize,
)
from .errors import UnifarError
from .evaluation import (
    BenchmarkQuery,
    MetricReport,
    average_precision,
    mrr,
    ndcg,
    ndcg_pct20,
    r_precision,
    recall_at_k,
    run_benchmark,
)
from .model import EncodedInput, UnifarModel, load_checkpoint, save_checkpoint
from .retrieval import (
    FacetIndex,
    FacetSimilarityMatrix,
    ScoringStrategy,
    score,
    search,
    similarity_matrix,
)
from .training import (
    ContrastiveBatch,
    GoldAlignment,
    anneal_lambda,
    gold_matrix,
    info_nce,
    loss_dd,
    loss_kl,
    loss_qd,
    total_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationConfig",
    "BenchmarkQuery",
    "BuildOptions",
    "BuildResult",
    "ContrastiveBatch",
    "DOCUMENT",
    "EncodedInput",
    "EncoderConfig",
    "FACET_NAMES",
    "FACET_SHORT",
    "FacetAggregator",
    "FacetAttention",
    "FacetIndex",
    "FacetRepresentation",
    "FacetSimilarityMatrix",
    "FacetTrainingUnit",
    "FacetTriplet",
    "GoldAlignment",
    "HashTokenizer",
    "InputSequence",
    "LabeledDocument",
    "LlmClient",
    "LookupEncoder",
    "MetricReport",
    "QUESTION",
    "RecordingClient",
    "ReplayClient",
    "RunConfig",
    "SENTENCE",
    "ScoringStrategy",
    "ScriptedClient",
    "TOKEN",
    "TokenizedInput",
    "TrainConfig",
    "UnifarError",
    "UnifarModel",
    "anneal_lambda",
    "assemble_ftu",
    "average_precision",
    "build_ftus",
    "canonical_facet",
    "corpus_stats",
    "generate_question",
    "gold_matrix",
    "info_nce",
    "label_sentences",
    "load_checkpoint",
    "load_config",
    "loss_dd",
    "loss_kl",
    "loss_qd",
    "merge_triplets",
    "mpnet_low_lr",
    "mrr",
    "ndcg",
    "ndcg_pct20",
    "r_precision",
    "read_corpus",
    "read_ftus",
    "recall_at_k",
    "run_benchmark",
    "save_checkpoint",
    "score",
    "search",
    "segment_input",
    "select_branch",
    "similarity_matrix",
    "split_sentences",
    "tokenize",
    "total_loss",
    "train",
    "write_ftus",
]
