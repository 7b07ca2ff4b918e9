"""
Checking the autograd engine against finite differences
=======================================================

Every gradient in the bridged model, body and bridge alike, is compared
with a central difference at 64-bit precision.
"""

from encbridge.gradcheck import gradcheck_model, tiny_config

cfg = tiny_config()
print(cfg)
report = gradcheck_model(cfg, seed=0, bridge_init="xavier")

worst = sorted(report.errors.items(), key=lambda kv: -kv[1])[:5]
for name, err in worst:
    print(f"{name:32s} {err:.2e}")
print("PASS" if report.passed else "FAIL", f"max relative error {report.max_error:.2e}")

# attention key biases have an exactly zero gradient (softmax is shift
# invariant per query), so their error is measured against a small floor
print("key bias error:", report.errors["enc.0.attn.k.bias"])
