"""Open-vocabulary temporal action detection via phase-decomposed labels."""

from .config import (
    AlignmentMode,
    FilteringMode,
    MaskStyle,
    ModelConfig,
    ScheduleKind,
    TrainConfig,
    WeightInput,
)
from .data import (
    DatasetManifest,
    FeatureSequence,
    OpenVocabSplit,
    Segment,
    VideoInfo,
    make_splits,
    read_features,
    write_features,
)
from .detector import DetectorOutput, PhaseDetector
from .errors import (
    ConfigError,
    DataError,
    DescriptionParseError,
    DivergenceError,
    FeatureFormatError,
    NumericError,
    PhaseTadError,
    ProviderError,
)
from .metrics import EvalConfig, EvalResult, average_precision, mean_ap, tiou
from .phases import CANONICAL_PHASES, Phase, phase_set
from .postprocess import (
    Detection,
    assemble_proposals,
    read_detections,
    soft_nms,
    suppress,
    write_detections,
)
from .semantics import (
    DescriptionCache,
    DescriptionLibrary,
    HashedTextEncoder,
    PhaseDescriptionSet,
    PhaseEmbeddingBank,
    decompose_label,
    encode_phase_bank,
    merge_descriptions,
    wrap_description,
)
from .synthetic import SyntheticDataset, SyntheticSpec, generate_synthetic
from .training import (
    AblationResult,
    Checkpoint,
    TrainResult,
    detect,
    evaluate_transfer,
    run_ablation,
    train,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
