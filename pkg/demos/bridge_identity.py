"""
An identity bridge changes nothing
==================================

The bridge feeds every decoder layer ``concat(encoder layers) @ W_i``.
With the original-connection init, ``W_i`` copies the top encoder layer
and zeroes the rest, so a freshly bridged model should produce the same
logits as the stock model it was attached to.
"""

import numpy as np

from encbridge import tensor as T
from encbridge.init import init_bridge
from encbridge.model import ModelConfig, Seq2Seq

cfg = ModelConfig(vocab_size=60, d_model=64, n_heads=4, d_ff=128, n_enc_layers=4, n_dec_layers=4)
model = Seq2Seq.create(cfg, seed=0)

rng = np.random.default_rng(0)
src = rng.integers(3, cfg.vocab_size, size=(4, 12))
src[:, -1] = cfg.eos_id
tgt = np.concatenate([np.full((4, 1), cfg.bos_id), rng.integers(3, cfg.vocab_size, size=(4, 9))], 1)

with T.no_grad():
    stock = model.forward(src, tgt).data

# one (4*64) x 64 matrix per decoder layer
bridge = init_bridge("original", cfg.n_enc_layers, cfg.n_dec_layers, cfg.d_model)
print("bridge matrices:", [w.shape for w in bridge.per_decoder_layer])
print("extra parameters:", bridge.n_parameters())

model.attach_bridge(bridge)
with T.no_grad():
    bridged = model.forward(src, tgt).data

rel = np.abs(bridged - stock).max() / np.abs(stock).max()
print(f"max relative logit difference: {rel:.2e}")

# GCA routing instead sends decoder layer i to encoder layer L-1-i, which
# is a different network from the start
model.attach_bridge(init_bridge("gca", 4, 4, 64))
with T.no_grad():
    gca = model.forward(src, tgt).data
print(f"GCA vs stock, max relative difference: {np.abs(gca - stock).max() / np.abs(stock).max():.3f}")
