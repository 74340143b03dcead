"""The fixed-point vocabulary: power-of-two grids, round-half-even, packing.

Every number the deployed engine touches lives on a grid real = q * 2^e
with a signed integer q of 4, 7, 8, or 32 bits.  Because the grids are
powers of two, rescaling is a bit shift, and because rounding is
half-to-even everywhere, training can reproduce deployment arithmetic
bit for bit.

Run: python demos/02_fixed_point.py
"""

import numpy as np

from lmukws.fixedpoint import (
    QuantSpec,
    fake_quant,
    pack_nibbles,
    quantize,
    round_half_even_rshift,
    scale_exp_for_max,
    unpack_nibbles,
    weight_quant_spec,
)


def main():
    print("-- choosing a scale ------------------------------------------")
    for max_abs, bits in ((7.0, 4), (7.5, 4), (0.9, 4), (1.0, 8)):
        e = scale_exp_for_max(max_abs, bits)
        spec = QuantSpec(bits, e)
        print(f"max |w| = {max_abs:<4} at {bits}-bit -> scale 2^{e:+d} "
              f"(covers up to {spec.qmax * spec.step})")

    print()
    print("-- rounding is half-to-even ----------------------------------")
    spec = QuantSpec(8, -1)  # grid step 0.5
    xs = np.array([0.25, 0.75, 1.25, -0.25])
    print("values:", xs, "-> grid ints:", quantize(xs, spec).q, "(ties go to even)")
    acc = np.array([5, 7, -5, -3], dtype=np.int64)
    print("integer >>1 with the same rule:", acc, "->", round_half_even_rshift(acc, 1))

    print()
    print("-- fake-quant mirrors the integer grid -----------------------")
    w = np.array([0.30, -0.02, 0.11, 0.49])
    spec = weight_quant_spec(w, 4)
    y, mask = fake_quant(w, spec)
    print(f"weights {w} on a 4-bit grid 2^{spec.scale_exp}:")
    print(f"  fake-quant values {y}")
    print(f"  as integers      {quantize(w, spec).q}  (y = q * step exactly)")
    print(f"  in-range mask    {mask}  (gradients pass only where True)")

    print()
    print("-- 4-bit weights pack two per byte ---------------------------")
    q = quantize(w, spec).q
    packed = pack_nibbles(q)
    print(f"ints {q.tolist()} -> bytes {packed.hex()} -> {unpack_nibbles(packed, q.size).tolist()}")


if __name__ == "__main__":
    main()
