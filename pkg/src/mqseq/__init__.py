"""Subject classification for multiple-choice medical exam questions.

Pipeline: parse question files -> tokenize and encode -> mean-pool and
L2-normalize into an N x D embedding matrix -> train a linear softmax head
with AdamW -> evaluate accuracy -> project to 2-D with exact t-SNE.
"""

from .classifier import (
    ClassifierState,
    HeadGradients,
    TrainConfig,
    TrainHistory,
    adamw_step,
    forward_logits,
    load_checkpoint,
    predict,
    save_checkpoint,
    softmax_cross_entropy,
    train,
)
from .dataset import (
    QuestionRecord,
    Split,
    SplitSummary,
    SubjectVocabulary,
    build_vocabulary,
    load_split,
    parse_records,
    serialize_records,
    summarize_splits,
)
from .embedding import (
    EmbeddingMatrix,
    embed_corpus,
    l2_normalize,
    mean_pool,
    read_cache,
    write_cache,
)
from .encoder import (
    Casing,
    EncoderBackend,
    EncoderOutput,
    TokenBatch,
    TokenizerSpec,
    build_whitespace_spec,
    load_backend,
    read_tokenizer_spec,
    reference_backend,
    tokenize_batch,
    write_tokenizer_spec,
)
from .evaluation import EvalReport, accuracy, build_report, confusion_matrix
from .tsne import (
    AffinityMatrix,
    Projection,
    TsneConfig,
    calibrate_sigmas,
    joint_affinities,
    kl_divergence,
    pairwise_sq_distances,
    project_embeddings,
    tsne_optimize,
)

__version__ = "0.1.0"
