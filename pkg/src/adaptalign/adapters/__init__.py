"""Adapter/mapper models and the training regimes built on them."""

from .models import (
    ADAPTER_KINDS,
    AdapterModel,
    LossBreakdown,
    MapperModel,
    adapter_forward,
    gelu,
    gelu_grad,
    gradients,
    load_model,
    loss_and_gradients,
    mapper_forward,
    model_from_dict,
    model_to_dict,
    mse_loss,
    predict,
    save_model,
)
from .train import (
    MODES,
    Adam,
    TraceRecord,
    TrainConfig,
    TrainTrace,
    align_adapter_stage1,
    evaluate,
    finetune,
    init_adapter,
    init_models,
    train_reference,
)

__all__ = [name for name in dir() if not name.startswith("_")]
