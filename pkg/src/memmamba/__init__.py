"""MemMamba at desk scale: a diagonal SSM stack with a note-block state pool,
cross-token and cross-layer attention, fidelity metrics, bound checks,
synthetic tasks, training and scaling benchmarks."""

__version__ = "0.1.0"

from .batched import MemMambaModel, forward_batch
from .block import attend, cross_layer_attention, cross_token_attention, fuse, layer_forward
from .errors import (DimensionError, DivergenceError, InputError, InstabilityError, MemMambaError,
                     NumericalError, ParameterError, SingularityError)
from .fidelity import FidelityReport, eclmf, etmf, etmf_delta, fidelity_report
from .model import LayerTrace, ModelConfig, init_weights, load_checkpoint, model_forward, save_checkpoint
from .notes import StatePool, StateSummary, pool_insert, state_importance, summarize, token_importance
from .ssm import SSMParams, ScanState, contribution_bound, ssm_scan, ssm_step
from .tasks import TaskSample, eval_passkey, gen_copy, gen_passkey, load_corpus
from .theory import (BoundCheck, bibo_bound, equal_budget_lengths, layered_decay, pooling_error_check,
                     recall_bounds)
from .training import TrainConfig, backward, cross_entropy, optimizer_step, perplexity, train
