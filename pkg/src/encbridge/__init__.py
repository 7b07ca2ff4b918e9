"""Encoder-decoder bridge: route all encoder layers into each decoder layer's
cross-attention through a bias-free linear map."""

from .analysis import BlockNormMatrix, block_norms, export_heatmap, weight_drift
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Vocab, gen_synthetic, load_tsv, make_batches
from .eval import BleuReport, corpus_bleu, evaluate, evaluate_loss
from .init import (InitScheme, init_bridge, init_constant_one, init_gca, init_original_connection,
                   init_random_xavier)
from .model import (BridgeWeights, EncoderOutputs, ModelConfig, Seq2Seq, bridge_forward,
                    decoder_forward, encoder_forward, greedy_decode)
from .tensor import Tensor, no_grad
from .train import AdamState, TrainConfig, adam_step, train_run

__version__ = "0.1.0"
