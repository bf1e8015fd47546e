"""Pure numpy im2col / col2im, used when the compiled extension is absent.

Same layout as the compiled kernels: rows are output positions (n, oh, ow),
columns are (c, i, j).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, sh, sw, ph, pw, out_h, out_w):
    n, c = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (out_h - 1) * sh + 1 : sh, : (out_w - 1) * sw + 1 : sw]
    # (n, c, oh, ow, i, j) -> (n, oh, ow, c, i, j)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * out_h * out_w, c * kh * kw
    )


def col2im(cols, n, c, h, w, kh, kw, sh, sw, ph, pw, out_h, out_w):
    hp, wp = h + 2 * ph, w + 2 * pw
    # room for windows that hang past the padded edge (output_padding case)
    hp = max(hp, (out_h - 1) * sh + kh)
    wp = max(wp, (out_w - 1) * sw + kw)
    xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    blocks = cols.reshape(n, out_h, out_w, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + (out_h - 1) * sh + 1 : sh, j : j + (out_w - 1) * sw + 1 : sw] += blocks[
                :, :, i, j
            ]
    return np.ascontiguousarray(xp[:, :, ph : ph + h, pw : pw + w])
