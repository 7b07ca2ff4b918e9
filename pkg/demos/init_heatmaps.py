"""
Bridge initializations as block-norm heatmaps
=============================================

Each bridge matrix is a vertical stack of ``d_model x d_model`` blocks, one
per encoder layer. Taking the Frobenius norm of each block gives a small
decoder-by-encoder grid that summarizes where each decoder layer reads from.
"""

import sys
from pathlib import Path

import numpy as np

from encbridge.analysis import block_norms, export_heatmap
from encbridge.init import VARIANTS, InitScheme, init_bridge

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/init_heatmaps")
n_enc = n_dec = 6
d_model = 32

np.set_printoptions(precision=2, suppress=True)
for variant in VARIANTS:
    bridge = init_bridge(InitScheme(variant, seed=0), n_enc, n_dec, d_model)
    grid = block_norms(bridge, scheme=variant)
    print(f"{variant}  (rows: decoder layer, cols: encoder layer)")
    print(grid.values)
    export_heatmap(grid, out / variant / "block_norms.pgm", format="pgm", upscale=16)
    export_heatmap(grid, out / variant / "block_norms.csv", format="csv")

# original: a single bright column at the top encoder layer
# gca:      the anti-diagonal
# ones:     flat, every block has norm d_model
# xavier:   flat-ish noise
print("wrote", sorted(str(p.relative_to(out)) for p in out.rglob("*.pgm")))
