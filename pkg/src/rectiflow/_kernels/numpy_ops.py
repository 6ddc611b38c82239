"""Pure numpy implementations of the convolution hot loops.

These mirror the compiled kernels in ``_convcy`` exactly; the package picks
one of the two at import time (see ``rectiflow._kernels``).

Patch matrices live in (C*kh*kw, B*ho*wo) layout: the kernel position is
the slow axis and the output pixel the fast one, so both the unfold and the
fold-back walk contiguous rows of the padded input.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "numpy"


def im2col(xp, kh, kw, sh, sw, ho, wo):
    """Unfold a padded (B, C, Hp, Wp) float32 input into patch columns of
    shape (C*kh*kw, B*ho*wo)."""
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw, :, :]          # (B, C, ho, wo, kh, kw)
    cols = windows.transpose(1, 4, 5, 0, 2, 3)          # (C, kh, kw, B, ho, wo)
    return np.ascontiguousarray(cols).reshape(xp.shape[1] * kh * kw, -1)


def col2im(cols, b, c, hp, wp, kh, kw, sh, sw, ho, wo):
    """Scatter-add patch columns back onto a padded-input-shaped buffer.

    cols: (C*kh*kw, B*ho*wo) float32. Returns (B, C, Hp, Wp) float32.
    """
    xp = np.zeros((b, c, hp, wp), dtype=np.float32)
    patches = cols.reshape(c, kh, kw, b, ho, wo).transpose(3, 0, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += patches[:, :, i, j]
    return xp
