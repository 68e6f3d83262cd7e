"""Pure-numpy fallback for the compiled dot-product kernel.

``np.einsum`` with ``optimize=False`` computes every output element as an
independent reduction over the feature axis, so results are bit-identical
for any tiling of the inputs and any thread count (unlike BLAS matmul,
whose accumulation order changes with operand shapes).
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def dot_block(a: np.ndarray, b: np.ndarray, out: np.ndarray) -> np.ndarray:
    """out[i, j] = sum_d a[i, d] * b[j, d], accumulated in float64."""
    np.einsum("id,jd->ij", a, b, out=out, dtype=np.float64, optimize=False)
    return out
