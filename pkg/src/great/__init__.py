"""Graph-reasoning patch interaction for vision transformers, desk scale.

A small numpy library: a float64 autodiff tape, patch tokenization, the
graph reasoning interaction block with a dense attention reference, an
encoder with a linear segmentation head, closed-form complexity accounting,
and a deterministic training/evaluation harness.
"""

from .tensor import (
    NumericalError,
    ShapeError,
    Tensor,
    backward,
    finite_diff_grad,
)
from .patching import (
    ConfigError,
    PatchEmbedWeights,
    TokenGrid,
    embed_and_position,
    partition,
    tokenize,
    unpatch,
)
from .greab import (
    GraphLayer,
    GraphState,
    GreabWeights,
    diffuse,
    diffuse_stack,
    greab_forward,
    greab_interact,
    init_greab,
    multi_head_greab,
    node_map,
    patch_project,
)
from .attention import MhaWeights, attention_state_size, init_mha, mha_forward
from .encoder import (
    ModelConfig,
    ModelWeights,
    encoder_forward,
    great_layer_forward,
    init_model,
    model_loss,
    model_predict,
    named_parameters,
    seg_head,
)
from .complexity import CostReport, interaction_cost, measure_interaction, param_count
from .data import SyntheticDataset, gen_synthetic
from .metrics import MetricsRecord, evaluate
from .train import RunConfig, TrainResult, evaluate_model, train
from .gradcheck import GradcheckReport, run_gradcheck
from .bench import run_bench

__version__ = "0.1.0"
