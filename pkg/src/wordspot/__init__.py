"""Keyword spotting and localization on fixed-duration audio clips."""

from .features import (
    AudioFormatError,
    FeatureConfig,
    extract,
    fit_duration,
    normalize_features,
    read_wav,
    stft_features,
    wav_duration,
    write_wav,
)
from .grid import (
    DETECTION_CSV_FIELDS,
    CellPrediction,
    DetectionRecord,
    Event,
    GridConfig,
    PredictionGrid,
    TargetGrid,
    TimingBox,
    assign_cell,
    box_to_interval,
    cell_span,
    decode,
    decode_batch,
    detections_from_jsonl,
    detections_to_csv,
    detections_to_jsonl,
    encode_targets,
    iou,
)
from .kernels import HAVE_NATIVE, best_joint_scores
from .loss import (
    LOSS_MODES,
    GridGradients,
    LossBreakdown,
    LossWeights,
    detection_loss,
    loss_gradient,
    loss_gradient_check,
    responsible_box,
)
from .corpus import (
    NOISE_KINDS,
    AlignmentRecord,
    Lexicon,
    ManifestClip,
    build_lexicon,
    extract_clips,
    inject_noise,
    normalize_word,
    prepare_clips,
    read_alignment_csv,
    synth_corpus,
    write_alignment_csv,
    write_synth_corpus,
)
from .metrics import (
    DEFAULT_THETA_GRID,
    IOU_MODES,
    MatchResult,
    TwvConfig,
    actual_accuracy,
    atwv,
    f_score,
    filter_by_theta,
    match_corpus,
    match_detections,
    mean_iou,
    mtwv,
    precision_recall_f1,
    sweep_threshold,
)
from .network import (
    BACKBONES,
    Detector,
    DivergenceError,
    backbone_spec,
    build_model,
    detection_loss_batch,
    load_checkpoint,
    model_from_checkpoint,
    predict_grid,
    pretrain_classifier,
    replace_head,
    save_checkpoint,
    train_detector,
    trunk_checksum,
)
from .evaluate import (
    detection_report,
    evaluate_detector,
    noise_robustness_curve,
)

__version__ = "0.1.0"
