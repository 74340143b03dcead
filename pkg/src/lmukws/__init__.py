"""Streaming Legendre-memory keyword spotting.

Quantized recurrent keyword-spotting models built on the Legendre memory
unit: bit-exact integer inference, quantization- and pruning-aware training,
a log-mel speech frontend, and a power/area cost model for a dedicated
accelerator.
"""

__version__ = "0.1.0"
