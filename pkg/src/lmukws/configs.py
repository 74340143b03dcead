"""Shipped model presets.

Four sized presets span the accuracy/size trade-off: two dense models (one
8-bit, one 4-bit) and two aggressively pruned 4-bit models.  Hidden widths
were chosen so the kbits size metric lands on round targets (1683 / 361 /
105 / 49 kbits); cells within a layer use a ladder of window lengths so the
memory covers multiple timescales of a one-second utterance.  A small "toy"
preset exists for smoke tests and the bundled synthetic dataset.
"""

from __future__ import annotations

from .lmu import CellConfig, LayerConfig, ModelConfig

N_MEL = 40

THETA_LADDER = (0.1, 0.2, 0.4, 0.8)


def _cells(order: int) -> tuple:
    return tuple(CellConfig(order=order, theta=t) for t in THETA_LADDER)


def _preset(hidden, order, weight_bits, target_sparsity=0.0) -> ModelConfig:
    h1, h2 = hidden
    return ModelConfig(
        input_dim=N_MEL,
        layers=(
            LayerConfig(hidden=h1, cells=_cells(order)),
            LayerConfig(hidden=h2, cells=_cells(order)),
        ),
        weight_bits=weight_bits,
        target_sparsity=target_sparsity,
    )


REFERENCE_CONFIGS = {
    # dense 8-bit: 210375 parameters -> 1683.0 kbits
    "lmu1": _preset((387, 382), 12, weight_bits=8),
    # dense 4-bit: 90250 parameters -> 361.0 kbits
    "lmu2": _preset((210, 228), 16, weight_bits=4),
    # 4-bit, 80% pruned: 131250 -> 26250 kept -> 105.0 kbits
    "lmu3": _preset((218, 356), 16, weight_bits=4, target_sparsity=0.80),
    # 4-bit, 91% pruned: 136111 -> 12250 kept -> 49.0 kbits
    "lmu4": _preset((307, 312), 8, weight_bits=4, target_sparsity=0.91),
    # small single-layer model for demos and the synthetic dataset
    "toy": ModelConfig(
        input_dim=N_MEL,
        layers=(
            LayerConfig(
                hidden=32,
                cells=(CellConfig(order=8, theta=0.2),
                       CellConfig(order=8, theta=0.4)),
            ),
        ),
        weight_bits=4,
    ),
}

REFERENCE_NAMES = tuple(REFERENCE_CONFIGS)


def reference_config(name: str) -> ModelConfig:
    try:
        return REFERENCE_CONFIGS[name]
    except KeyError:
        raise KeyError(
            f"unknown model preset {name!r}; choose from {', '.join(REFERENCE_NAMES)}"
        ) from None
