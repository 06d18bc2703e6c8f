"""Synthetic room-reference grounding: spatial-language data generation,
a joint language/geometry transformer, and viewpoint-aware evaluation."""

from .ablation import run_ablation, write_ablation_csv
from .artifacts import GroundingData, config_fingerprint, load_corpus
from .checkpoint import load_checkpoint, save_checkpoint
from .encoding import (
    NormBounds,
    TokenSequence,
    Vocab,
    build_vocab,
    encode_sample,
    spatial_encode,
)
from .errors import (
    AmbiguityError,
    ConfigError,
    DataError,
    DensityError,
    GenerationSkip,
    MissingArtifactError,
    ResolutionError,
    RoomRefError,
    SequenceOverflowError,
)
from .evaluation import (
    EvalConfig,
    Metrics,
    apply_orientation_mode,
    evaluate,
    predict_target,
)
from .model import (
    GroundingModel,
    ModelConfig,
    expected_parameter_count,
    init_model,
    select_target,
)
from .objectives import (
    LossBundle,
    LossTargets,
    LossWeights,
    MaskingPolicy,
    apply_noun_masking,
    compute_loss,
)
from .oracle import (
    RelationSpec,
    relation_direction,
    resolve_reference,
    valid_orientations,
)
from .perception import NoiseModel, RankedLabels, classify_objects
from .scenes import (
    BoundingBox,
    GenConfig,
    Scene,
    SceneObject,
    generate_scene,
    rotate_scene,
    validate_scene,
)
from .seeding import derive_seed
from .training import AdamW, TrainConfig, grad_check, lr_at, train
from .utterances import UtteranceRecord, generate_corpus, generate_utterance

__version__ = "0.1.0"
