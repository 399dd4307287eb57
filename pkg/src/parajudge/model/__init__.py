from .config import ModelConfig
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, SEP_ID, VOCAB_SIZE, ByteTokenizer
from .optim import Adam
from .transformer import (
    BaseModel,
    Trace,
    backward,
    backward_lora,
    ffn_host_names,
    forward,
    generate,
    host_shape,
    nll_loss,
    nll_loss_and_grad,
    pretrain_base,
)
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "BOS_ID",
    "BaseModel",
    "ByteTokenizer",
    "EOS_ID",
    "ModelConfig",
    "PAD_ID",
    "SEP_ID",
    "Trace",
    "VOCAB_SIZE",
    "backward",
    "backward_lora",
    "ffn_host_names",
    "forward",
    "generate",
    "host_shape",
    "load_checkpoint",
    "nll_loss",
    "nll_loss_and_grad",
    "pretrain_base",
    "save_checkpoint",
]
