"""Gene / function-change / disease relation extraction from abstracts.

The pipeline grounds tagger output against gold annotations, enumerates
gene-disease candidate pairs per abstract (synthesizing negatives), splits
documents 80/20 under a KL constraint, encodes each pair with its abstract as
a capped subword sequence, trains a transformer encoder classifier with
class-balanced batches / early stopping / random restarts, and evaluates with
one-vs-all and micro/macro metrics against a categorical-sampling baseline.
"""

from .corpus import (
    AbstractDoc,
    CorpusStore,
    EntityMention,
    EntityType,
    Label,
    NUM_CLASSES,
    POSITIVE_LABELS,
    Provenance,
    RelationInstance,
    load_corpus,
    load_instances,
    validate_dataset,
    validate_instance,
    write_corpus,
    write_instances,
)
from .encoder_input import (
    EncodedExample,
    PaddedBatch,
    Vocab,
    build_sequence,
    encode_instances,
    load_encoded,
    load_vocab,
    pad_batch,
    save_vocab,
    wordpiece_tokenize,
    write_encoded,
)
from .metrics import (
    ClassCounts,
    MetricsReport,
    confusion_counts,
    format_report_table,
    macro_average,
    mean_reports,
    metrics_report,
    prf,
    random_baseline,
)
from .ner_align import (
    AlignmentKind,
    AlignmentOutcome,
    AlignmentReport,
    CandidatePair,
    NerMention,
    align_mention,
    alignment_report,
    build_instances,
    generate_candidate_pairs,
    label_pairs,
    load_ner_mentions,
    normalize_surface,
)
from .net import (
    ModelConfig,
    ModelParams,
    forward,
    grad,
    init_params,
    load_checkpoint,
    nll_loss,
    predict,
    save_checkpoint,
    sgd_step,
)
from .splitter import (
    LabelDistribution,
    Split,
    entropy_bits,
    kl_divergence_bits,
    label_distribution,
    labels_by_doc,
    read_split,
    split_corpus,
    write_split,
)
from .trainer import (
    RestartResult,
    StoppingCriterion,
    TrainConfig,
    TrainHistory,
    early_stop_check,
    make_balanced_batches,
    run_restarts,
    train_one,
)

__version__ = "0.1.0"
