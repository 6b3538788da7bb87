"""CRUSH: hate-speech detection training with social-graph self-supervision.

Three phases over a pluggable sentence encoder: continual MLM pre-training
on domain text, user-anchored contrastive pre-training (posts by the same
author pull together), and fine-tuning regularized by thread/timeline
context. Inference needs only the text.
"""

from .config import TrainConfig, load_config
from .errors import (
    AnchorSkipped,
    CheckpointError,
    ConfigError,
    CrushError,
    GraphFormatError,
)
from .evaluation import (
    MetricsReport,
    accuracy,
    binary_f1,
    classification_report,
    context_bucket_f1,
    fewshot_curve,
    macro_f1,
    mae_metric,
    mann_whitney_u,
    mse_metric,
    regression_report,
)
from .losses import (
    contextual_ce,
    contextual_classification_loss,
    contextual_mse,
    contextual_regression_loss,
    contrastive_nll,
    cross_entropy,
    mse,
    robust_ua_loss,
)
from .model import (
    CrushModel,
    MaskedBatch,
    PredictionHead,
    PretrainedEncoderAdapter,
    ToyEncoder,
    ToyTokenizer,
    class_probs,
    load_checkpoint,
    mlm_loss,
    mlm_mask,
    model_from_checkpoint,
    param_diff,
    predict_class,
    save_checkpoint,
    state_digest,
)
from .pipeline import (
    PhaseReport,
    build_model,
    finetune_plain,
    infer,
    predict_texts,
    run_phase_cp,
    run_phase_cr,
    run_phase_ua,
)
from .rng import rng_stream
from .sampling import (
    AuxPostSet,
    ContextSet,
    PostSet,
    UserSet,
    fewshot_subsample,
    proxy_class_labels,
    sample_aux_post_set,
    sample_context_set,
    sample_post_set,
    sample_user_set,
)
from .social_graph import (
    IngestReport,
    Label,
    Post,
    SocialGraph,
    ingest_posts,
    load_graph,
    normalize_text,
    save_graph,
    thread_posts,
    user_posts,
)

__version__ = "0.1.0"
