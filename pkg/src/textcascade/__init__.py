"""Two-stage text classification for many classes and few samples per class.

A fast recurrent scorer proposes t candidate classes; a slow
nearest-neighbor scorer over bags of syntactic features reranks them to the
final top N. The package also ships the profiling (alpha/rho curves),
accuracy lower-bound verification, change-point-based selection of t, and a
random-hyperplane LSH baseline for candidate generation.
"""

from .cascade import (
    BoundCheck,
    CascadeConfig,
    EvaluationReport,
    PreparedQuery,
    ProfileCurve,
    QueryProfile,
    UndefinedProfileError,
    candidate_ts,
    estimate_profiles,
    evaluate_cascade_at,
    min_t_for_usefulness,
    run_cascade,
    select_t,
    verify_lower_bound,
)
from .embeddings import VectorFormatError, WordVectorTable, cosine, load_vectors, unit_rows
from .harness import (
    Corpus,
    CorpusRecord,
    ExperimentData,
    IngestConfig,
    IngestError,
    SweepResult,
    SweepSpec,
    SynthConfig,
    evaluate,
    ingest,
    synth_corpus,
    write_corpus_files,
)
from .lsh import (
    HashTables,
    HyperplaneFamily,
    build_tables,
    candidates_class_based,
    candidates_text_based,
    hash_bag,
    hash_vector,
    lsh_classify,
    make_family,
)
from .neighbor import (
    ScoredClass,
    TrainingIndex,
    build_index,
    class_scores,
    score_bow,
    score_snbigram,
    sim,
    top_n,
)
from .recurrent import (
    ClassDistribution,
    DivergenceError,
    GruParams,
    LstmParams,
    TrainConfig,
    gru_forward,
    load_params,
    lstm_forward,
    save_params,
    top_t,
    train,
)
from .syntax import (
    DEFAULT_WEIGHT_POLICY,
    ConlluParseError,
    DependencyTree,
    Edge,
    Token,
    WeightPolicy,
    fallback_edges,
    generate_bag,
    read_conllu,
)

__version__ = "0.1.0"
