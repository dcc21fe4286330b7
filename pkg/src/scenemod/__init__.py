"""scenemod: attribute-conditioned adapter modules over a toy tracker.

Train one lightweight expert per scene-attribute value (LoRA on linear
layers, scale-and-shift on convolutions), route experts by scene tags, and
merge them in parameter space into a single specialized model.
"""

from .adapters import (
    LoraAdapter,
    ScaleShiftAdapter,
    absorb_scale_shift,
    lora_delta,
    lora_forward,
    lora_init,
    ssf_forward,
    ssf_init,
    ssf_task_vector,
)
from .bench import BenchRow, compose_for_query, run_benchmark, track_sequence
from .checkpoint import file_digest, load_checkpoint, save_checkpoint
from .composition import (
    CompositionPlan,
    TaskVector,
    attribute_task_vector,
    compose,
    merged_forward_check,
)
from .errors import (
    CheckpointError,
    ConfigError,
    CorruptHeaderError,
    DataError,
    DuplicateNameError,
    NumericError,
    ScenemodError,
    ShapeError,
    TruncatedPayloadError,
)
from .metrics import TrackingMetrics, evaluate, iou, match_frame
from .routing import (
    AdapterModule,
    AttributeSchema,
    ModuleInventory,
    all_modules_route,
    classify_lighting,
    classify_occupancy,
    default_schema,
    flip_attribute,
    hard_route,
    opposite_route,
    soft_route,
)
from .synth import SyntheticSequence, generate_sequence, load_sequence, save_sequence
from .tensor import ParameterStore, add, as_tensor, conv2d, hadamard, matmul, scale, store_diff
from .toynet import (
    NetSpec,
    ToyNetwork,
    TrainingConfig,
    backward,
    bootstrap_train,
    finite_diff_check,
    forward,
    fresh_inventory,
    fresh_module,
    train_all_modules,
    train_module,
)

__version__ = "0.1.0"
