"""conflab: a desk-scale seq2seq lab for learned confidence estimation.

A small encoder-decoder transformer (on a hand-rolled reverse-mode autodiff
core) trains a confidence head jointly with translation by letting the model
ask for ground-truth hints at a penalty. The confidence signal feeds
unsupervised quality-estimation metrics, confidence-based label smoothing,
and noisy-label / out-of-domain detection experiments, all reproducible from
seeds on synthetic translation tasks.
"""

from .autodiff import Graph, LOG_FLOOR, cross_entropy, sigmoid_values, softmax_values
from .data import (
    Batch,
    ParallelCorpus,
    TaskSpec,
    corrupt_targets,
    generate_corpus,
    generate_ood_corpus,
    load_parallel_text,
    make_batches,
)
from .errors import (
    ConfigError,
    ConflabError,
    CorrelationUndefinedError,
    DataFormatError,
    DivergenceError,
    NumericError,
    SingleClassError,
    StateError,
    VocabMismatchError,
)
from .gradcheck import grad_check, grad_check_params
from .inference import Hypothesis, ForcedScore, beam_search, force_decode, greedy_decode, mc_passes
from .metrics import (
    DetectionReport,
    ScoredSentence,
    density_report,
    detection_metrics,
    metric_conf,
    metric_d_family,
    metric_sent_std,
    metric_sent_std_conf,
    metric_softmax_ent,
    metric_tp,
    pearson,
)
from .model import (
    ModelConfig,
    SeqModel,
    StepOutput,
    forward_teacher_forced,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .rng import RngState
from .training import (
    LossBreakdown,
    TrainSchedule,
    conf_loss,
    conf_smoothing_mass,
    hint_interpolate,
    lambda_at,
    nmt_loss,
    smooth_targets,
    total_loss,
    train,
)
from .vocab import Vocab

__version__ = "0.1.0"
