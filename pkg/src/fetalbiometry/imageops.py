"""Low-level raster operations shared by the data and measurement pipelines.

All functions operate on 2-D numpy arrays and use the half-pixel-center
sampling convention (pixel i covers the interval [i, i+1) with its center
at i + 0.5), matching the common image-resize behaviour.
"""

import numpy as np


def bilinear_resize(img, out_h, out_w):
    """Resize a 2-D array with bilinear interpolation."""
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()

    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)

    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]

    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def nearest_resize(img, out_h, out_w):
    """Resize a 2-D array with nearest-neighbor sampling (mask-safe)."""
    img = np.asarray(img)
    in_h, in_w = img.shape
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = np.minimum(((np.arange(out_h) + 0.5) * (in_h / out_h)).astype(int), in_h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * (in_w / out_w)).astype(int), in_w - 1)
    return img[np.ix_(ys, xs)]


def cross_element(size=5):
    """Cross-shaped structuring element (a plus sign), odd size."""
    if size % 2 == 0 or size < 1:
        raise ValueError(f"structuring element size must be odd, got {size}")
    se = np.zeros((size, size), dtype=bool)
    c = size // 2
    se[c, :] = True
    se[:, c] = True
    return se


def _se_offsets(se):
    c = np.array(se.shape) // 2
    return [(int(dy - c[0]), int(dx - c[1])) for dy, dx in zip(*np.nonzero(se))]


def binary_erode(mask, se):
    """Binary erosion; pixels outside the image count as foreground.

    Padding with foreground keeps a frame-filling mask intact (erosion
    followed by dilation must be the identity on a uniform field); dilation
    uses the opposite convention.
    """
    mask = np.asarray(mask).astype(bool)
    pad = max(se.shape) // 2
    padded = np.pad(mask, pad, mode="constant", constant_values=True)
    out = np.ones_like(mask)
    h, w = mask.shape
    for dy, dx in _se_offsets(se):
        out &= padded[pad + dy : pad + dy + h, pad + dx : pad + dx + w]
    return out.astype(np.uint8)


def binary_dilate(mask, se):
    """Binary dilation; pixels outside the image count as background."""
    mask = np.asarray(mask).astype(bool)
    pad = max(se.shape) // 2
    padded = np.pad(mask, pad, mode="constant", constant_values=False)
    out = np.zeros_like(mask)
    h, w = mask.shape
    for dy, dx in _se_offsets(se):
        out |= padded[pad - dy : pad - dy + h, pad - dx : pad - dx + w]
    return out.astype(np.uint8)


def median_blur_binary(mask, size=5):
    """Median filter on a binary mask: majority vote in a size x size window.

    Window counts use edge-replicated borders so the filter is unbiased at
    the image boundary.
    """
    if size % 2 == 0:
        raise ValueError(f"median window must be odd, got {size}")
    mask = np.asarray(mask).astype(np.int32)
    pad = size // 2
    padded = np.pad(mask, pad, mode="edge")
    # integral image for O(1) window sums
    ii = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
    ii[1:, 1:] = np.cumsum(np.cumsum(padded, axis=0), axis=1)
    h, w = mask.shape
    counts = (
        ii[size : size + h, size : size + w]
        - ii[:h, size : size + w]
        - ii[size : size + h, :w]
        + ii[:h, :w]
    )
    return (counts * 2 > size * size).astype(np.uint8)


def letterbox_square(img, fill=0.0):
    """Zero-pad a 2-D array to a centered square of its larger dimension."""
    h, w = img.shape
    if h == w:
        return np.asarray(img).copy()
    side = max(h, w)
    out = np.full((side, side), fill, dtype=np.asarray(img).dtype)
    y0 = (side - h) // 2
    x0 = (side - w) // 2
    out[y0 : y0 + h, x0 : x0 + w] = img
    return out
