"""Training graph vs deployed integers: the same bits, provably.

The training forward pass fake-quantizes weights and activations onto the
exact power-of-two grids the integer engine uses.  Because every product
and sum stays inside float64's exact-integer range, the two
implementations are not merely close -- they are equal, integer for
integer, at every timestep.

This script builds a random model, calibrates activation scales, freezes
the integer model, and then diffs every intermediate (the cell inputs u,
memory states m, hidden activations h) plus the logits across the two
paths.  It also round-trips the deployable model file.

Run: python demos/03_bit_exact_inference.py
"""

import tempfile
from pathlib import Path

import numpy as np

from lmukws.lmu import CellConfig, LayerConfig, ModelConfig, build_model
from lmukws.modelfile import load_model, save_model
from lmukws.qmodel import calibrate_activation_scales, freeze, quantized_forward
from lmukws.training import hat_forward_trace

CONFIG = ModelConfig(
    input_dim=8,
    layers=(
        LayerConfig(hidden=12, cells=(CellConfig(6, 0.2), CellConfig(6, 0.4))),
        LayerConfig(hidden=10, cells=(CellConfig(8, 0.3),)),
    ),
    weight_bits=4,
)


def main():
    rng = np.random.default_rng(42)
    model = build_model(CONFIG, rng)
    for layer in model.layers:
        layer.hidden_encoder[:] = rng.uniform(-0.4, 0.4, layer.hidden_encoder.shape)
        layer.bias[:] = rng.uniform(-0.3, 0.3, layer.bias.shape)

    # 1. calibrate: activation grids come from observed float ranges
    calib = [rng.standard_normal((25, 8)) for _ in range(8)]
    scales = calibrate_activation_scales(model, calib)
    print("calibrated activation scale exponents:")
    print(f"  input 2^{scales.input_exp}")
    for i, (u_e, m_e, h_e) in enumerate(scales.layer_exps):
        print(f"  layer {i}: u 2^{u_e}, m 2^{m_e}, h 2^{h_e}")

    # 2. freeze: weights quantized, worst-case accumulators proven safe
    qm = freeze(model, CONFIG.weight_bits, scales)

    # 3. diff the two implementations over fresh sequences
    checked = mismatched = 0
    for _ in range(50):
        feats = rng.standard_normal((30, 8)) * rng.uniform(0.5, 2.0)
        logits_q, _, trace_q = quantized_forward(qm, feats, collect_trace=True)
        logits_t, trace_t = hat_forward_trace(model, feats, scales, CONFIG.weight_bits)
        same = np.array_equal(logits_q, logits_t)
        for t in range(feats.shape[0]):
            for li in range(len(qm.layers)):
                for key in ("u", "m", "h"):
                    same &= np.array_equal(trace_q[key][t][li], trace_t[key][t][li])
        checked += 1
        mismatched += 0 if same else 1
    print(f"\n{checked} random sequences diffed at full intermediate depth: "
          f"{mismatched} mismatches")

    # 4. the serialized model preserves the arithmetic exactly
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.lmuq"
        save_model(qm, path)
        reloaded = load_model(path)
        feats = rng.standard_normal((40, 8))
        a, _ = quantized_forward(qm, feats)
        b, _ = quantized_forward(reloaded, feats)
        print(f"saved model is {path.stat().st_size} bytes; "
              f"reloaded logits identical: {np.array_equal(a, b)}")

    print("\naccuracy measured on this training graph IS deployed accuracy --")
    print("there is no quantization gap left to discover on the device.")


if __name__ == "__main__":
    main()
