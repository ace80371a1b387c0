"""Deterministic measurement geometry.

Turns a segmentation probability map plus a predicted class into clinical
measurements in millimetres: mask cleanup, contour tracing, polyline
simplification, ellipse / rectangle fitting and the pixel-to-mm conversion.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, FitError
from .imageops import (
    bilinear_resize,
    binary_dilate,
    binary_erode,
    cross_element,
    median_blur_binary,
)
from .labels import ClassLabel

# Traced boundary points are pixel centers, which sit inside the continuous
# outline of a rasterized shape; fitted dimensions are widened by these
# empirically calibrated constants to undo the inward bias (the polyline
# simplification keeps mostly outer corner points, so the residual bias is
# well under half a pixel). Per semi-axis for ellipse fits, per side for
# rectangle fits.
ELLIPSE_COMPENSATION_PX = 0.2
RECT_COMPENSATION_PX = 0.4

# Polyline simplification tolerance as a fraction of the contour arc length;
# an absolute tolerance would break scale equivariance.
RDP_ARC_FRACTION = 0.005


@dataclass(frozen=True)
class BinaryMask:
    """A {0,1} mask at some image resolution with isotropic pixel spacing."""

    data: np.ndarray
    pixel_spacing: float  # mm per pixel

    def __post_init__(self):
        if self.pixel_spacing <= 0:
            raise ValueError(f"pixel_spacing must be > 0, got {self.pixel_spacing}")
        if self.data.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.data.shape}")


@dataclass(frozen=True)
class EllipseFit:
    cx: float
    cy: float
    a: float  # semi-major, pixels
    b: float  # semi-minor, pixels
    theta: float  # major-axis angle, radians in [0, pi)

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise ValueError(f"require a >= b > 0, got a={self.a}, b={self.b}")
        if not (0.0 <= self.theta < math.pi):
            raise ValueError(f"theta must lie in [0, pi), got {self.theta}")


@dataclass(frozen=True)
class RotatedRect:
    cx: float
    cy: float
    long: float  # pixels
    short: float  # pixels
    angle: float  # long-side direction, radians in [0, pi)

    def __post_init__(self):
        if not (self.long >= self.short >= 0):
            raise ValueError(f"require long >= short >= 0, got {self.long}, {self.short}")


@dataclass(frozen=True)
class BiometryResult:
    """Per-frame measurement outcome; absent values stay None."""

    label: ClassLabel
    hc_mm: Optional[float] = None
    bpd_mm: Optional[float] = None
    ac_mm: Optional[float] = None
    fl_mm: Optional[float] = None
    reason: Optional[str] = None

    def to_json_dict(self, frame_id=None):
        d = {
            "label": self.label.name.lower(),
            "hc_mm": self.hc_mm,
            "bpd_mm": self.bpd_mm,
            "ac_mm": self.ac_mm,
            "fl_mm": self.fl_mm,
            "reason": self.reason,
        }
        if frame_id is not None:
            d = {"frame_id": frame_id, **d}
        return d


def postprocess(prob, out_size, threshold=0.6, pixel_spacing=1.0):
    """Clean a segmentation probability map into a binary mask.

    Pipeline: bilinear resize to out_size -> threshold -> erosion and
    dilation with a 5x5 cross element -> 5x5 median blur -> re-binarize.

    Parameters
    ----------
    prob : 2-D array of probabilities in [0, 1].
    out_size : int or (height, width); target resolution (the original
        image size when undoing the network resize).
    threshold : binarization level applied after the resize.
    pixel_spacing : mm per pixel at the output resolution.
    """
    prob = np.asarray(prob, dtype=np.float64)
    if prob.ndim != 2:
        raise ContractError(f"probability map must be 2-D, got shape {prob.shape}")
    if isinstance(out_size, int):
        out_h = out_w = out_size
    else:
        out_h, out_w = out_size
    resized = bilinear_resize(prob, out_h, out_w)
    mask = (resized >= threshold).astype(np.uint8)
    se = cross_element(5)
    mask = binary_erode(mask, se)
    mask = binary_dilate(mask, se)
    mask = median_blur_binary(mask, 5)
    mask = (mask >= 0.5).astype(np.uint8)
    return BinaryMask(data=mask, pixel_spacing=pixel_spacing)


# Moore neighborhood in clockwise order starting east: (dx, dy) with y down.
_NEIGHBORS = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)]


def _trace_boundary(component, start_y, start_x):
    """Moore-neighbor border following around one 8-connected component.

    ``start`` must be the leftmost pixel of the component's topmost row, so
    the pixel to its west is guaranteed background. Terminates with Jacob's
    criterion (start pixel re-entered from the initial backtrack position).
    """
    h, w = component.shape

    def fg(x, y):
        return 0 <= x < w and 0 <= y < h and component[y, x]

    start = (start_x, start_y)
    backtrack = (start_x - 1, start_y)
    contour = [start]
    cur = start
    first_state = (cur, backtrack)
    max_steps = 4 * int(component.sum()) + 8
    for _ in range(max_steps):
        # index of the backtrack pixel in cur's neighborhood
        bdx, bdy = backtrack[0] - cur[0], backtrack[1] - cur[1]
        bidx = _NEIGHBORS.index((bdx, bdy))
        nxt = None
        for k in range(1, 9):
            dx, dy = _NEIGHBORS[(bidx + k) % 8]
            cand = (cur[0] + dx, cur[1] + dy)
            if fg(cand[0], cand[1]):
                nxt = cand
                break
            backtrack = cand
        if nxt is None:
            break  # isolated single pixel
        cur = nxt
        if (cur, backtrack) == first_state:
            break
        contour.append(cur)
    return np.asarray(contour, dtype=np.float64)


def find_contours(mask):
    """Outer boundaries of 8-connected foreground components.

    Returns a list of (K, 2) float arrays of (x, y) pixel coordinates,
    ordered by enclosed pixel area, largest first.
    """
    if isinstance(mask, BinaryMask):
        mask = mask.data
    mask = (np.asarray(mask) > 0).astype(np.uint8)
    if mask.ndim != 2:
        raise ContractError(f"mask must be 2-D, got shape {mask.shape}")
    from scipy import ndimage

    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    results = []
    for comp_id in range(1, n + 1):
        component = labels == comp_id
        area = int(component.sum())
        ys, xs = np.nonzero(component)
        top = ys.min()
        left = xs[ys == top].min()
        contour = _trace_boundary(component, int(top), int(left))
        results.append((area, contour))
    results.sort(key=lambda item: item[0], reverse=True)
    return [contour for _, contour in results]


def polygon_area(points):
    """Signed shoelace area of a closed polygon (positive if clockwise
    in image coordinates, y down)."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def contour_enclosed_area(points):
    """Pixel area enclosed by a traced boundary, boundary pixels included.

    Pick's theorem for a lattice polygon whose steps are unit or diagonal:
    pixels = interior + boundary = shoelace + boundary/2 + 1.
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        return float(len(pts))
    return abs(polygon_area(pts)) + 0.5 * len(pts) + 1.0


def _point_segment_distance(points, p0, p1):
    """Distance from each point to the segment p0-p1, vectorized."""
    seg = p1 - p0
    seg_sq = float(seg @ seg)
    rel = points - p0
    if seg_sq == 0.0:
        return np.hypot(rel[:, 0], rel[:, 1])
    t = np.clip((rel @ seg) / seg_sq, 0.0, 1.0)
    proj = p0 + t[:, None] * seg
    diff = points - proj
    return np.hypot(diff[:, 0], diff[:, 1])


def rdp(points, epsilon):
    """Ramer-Douglas-Peucker simplification of an open polyline.

    Endpoints are always kept; every dropped point lies within ``epsilon``
    of the simplified polyline (distances measured to segments, not to
    infinite lines, so the guarantee holds for arbitrary inputs).
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        return pts.copy()
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        d = _point_segment_distance(pts[i + 1 : j], pts[i], pts[j])
        k = int(np.argmax(d))
        if d[k] > epsilon:
            k += i + 1
            keep[k] = True
            stack.append((i, k))
            stack.append((k, j))
    return pts[keep]


def fit_ellipse(points):
    """Direct least-squares ellipse fit (conic constraint 4AC - B^2 = 1).

    Numerically stable reduced formulation; input coordinates are centered
    before building the scatter matrices. Raises FitError for fewer than
    5 points or a degenerate configuration.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ContractError(f"points must be (N, 2), got shape {pts.shape}")
    if len(pts) < 5:
        raise FitError(f"ellipse fit needs >= 5 points, got {len(pts)}")
    mx, my = pts.mean(axis=0)
    x = pts[:, 0] - mx
    y = pts[:, 1] - my

    D1 = np.column_stack([x * x, x * y, y * y])
    D2 = np.column_stack([x, y, np.ones_like(x)])
    S1 = D1.T @ D1
    S2 = D1.T @ D2
    S3 = D2.T @ D2
    try:
        T = -np.linalg.solve(S3, S2.T)
    except np.linalg.LinAlgError:
        raise FitError("degenerate point configuration") from None
    M = S1 + S2 @ T
    # premultiply by inv(C) for the constraint matrix C = [[0,0,2],[0,-1,0],[2,0,0]]
    M = np.vstack([M[2] / 2.0, -M[1], M[0] / 2.0])
    evals, evecs = np.linalg.eig(M)
    a1 = None
    for j in range(3):
        if abs(np.imag(evals[j])) > 1e-9 * max(1.0, abs(np.real(evals[j]))):
            continue
        v = np.real(evecs[:, j])
        if 4.0 * v[0] * v[2] - v[1] ** 2 > 0:
            a1 = v
            break
    if a1 is None:
        raise FitError("no ellipse satisfies the conic constraint")
    a2 = T @ a1
    A, B, C = a1
    D, E, F = a2

    # conic -> geometric, still in the centered frame
    M2 = np.array([[A, B / 2.0], [B / 2.0, C]])
    try:
        cx, cy = np.linalg.solve(M2, [-D / 2.0, -E / 2.0])
    except np.linalg.LinAlgError:
        raise FitError("degenerate conic") from None
    f0 = F + (D * cx + E * cy) / 2.0
    lam, vecs = np.linalg.eigh(M2)
    with np.errstate(divide="ignore", invalid="ignore"):
        axes_sq = -f0 / lam
    if np.any(axes_sq <= 0) or not np.all(np.isfinite(axes_sq)):
        raise FitError("fit is not an ellipse")
    axes = np.sqrt(axes_sq)
    major = int(np.argmax(axes))
    a = float(axes[major])
    b = float(axes[1 - major])
    vx, vy = vecs[:, major]
    theta = math.atan2(vy, vx) % math.pi
    return EllipseFit(cx=float(cx + mx), cy=float(cy + my), a=a, b=b, theta=theta)


def ellipse_perimeter(a, b):
    """Ramanujan's first approximation of the ellipse perimeter."""
    if a <= 0 or b <= 0:
        raise ValueError(f"semi-axes must be > 0, got a={a}, b={b}")
    return math.pi * (3.0 * (a + b) - math.sqrt((3.0 * a + b) * (a + 3.0 * b)))


def convex_hull(points):
    """Convex hull (monotone chain), counter-clockwise, no repeated point."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, u, v):
        return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1])


def min_area_rect(points):
    """Minimal-area enclosing rotated rectangle via rotating calipers.

    Degenerate inputs yield a rectangle with short side 0 (a segment) or
    both sides 0 (a point).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ContractError(f"points must be (N, 2), got shape {pts.shape}")
    hull = convex_hull(pts)
    if len(hull) == 1:
        return RotatedRect(cx=float(hull[0, 0]), cy=float(hull[0, 1]), long=0.0, short=0.0, angle=0.0)
    if len(hull) == 2:
        d = hull[1] - hull[0]
        center = hull.mean(axis=0)
        angle = math.atan2(d[1], d[0]) % math.pi
        return RotatedRect(
            cx=float(center[0]),
            cy=float(center[1]),
            long=float(np.hypot(d[0], d[1])),
            short=0.0,
            angle=angle,
        )

    best = None
    edges = np.roll(hull, -1, axis=0) - hull
    for edge in edges:
        norm = np.hypot(edge[0], edge[1])
        if norm == 0:
            continue
        u = edge / norm  # long-axis candidate direction
        v = np.array([-u[1], u[0]])
        proj_u = hull @ u
        proj_v = hull @ v
        du = proj_u.max() - proj_u.min()
        dv = proj_v.max() - proj_v.min()
        area = du * dv
        if best is None or area < best[0]:
            cu = 0.5 * (proj_u.max() + proj_u.min())
            cv = 0.5 * (proj_v.max() + proj_v.min())
            center = cu * u + cv * v
            best = (area, du, dv, center, u, v)

    _, du, dv, center, u, v = best
    if du >= dv:
        long_side, short_side, direction = du, dv, u
    else:
        long_side, short_side, direction = dv, du, v
    angle = math.atan2(direction[1], direction[0]) % math.pi
    return RotatedRect(
        cx=float(center[0]),
        cy=float(center[1]),
        long=float(long_side),
        short=float(short_side),
        angle=angle,
    )


def contour_arc_length(points, closed=True):
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    seg = np.diff(pts, axis=0)
    length = float(np.hypot(seg[:, 0], seg[:, 1]).sum())
    if closed:
        length += float(np.hypot(*(pts[0] - pts[-1])))
    return length


def measure_with_fit(label, mask):
    """Like measure(), also returning the fitted shape for rendering.

    The second element is the compensated EllipseFit or RotatedRect the
    numbers came from, or None when nothing was measurable.
    """
    label = ClassLabel(label)
    if label == ClassLabel.BACKGROUND:
        return BiometryResult(label=label), None

    contours = find_contours(mask.data)
    if not contours:
        return BiometryResult(label=label, reason="empty_mask"), None
    contour = contours[0]
    if len(contour) < 3:
        return BiometryResult(label=label, reason="degenerate_contour"), None

    spacing = mask.pixel_spacing
    if label in (ClassLabel.HEAD, ClassLabel.ABDOMEN):
        eps = RDP_ARC_FRACTION * contour_arc_length(contour)
        simplified = rdp(contour, eps) if eps > 0 else contour
        try:
            ell = fit_ellipse(simplified)
        except FitError:
            return BiometryResult(label=label, reason="ellipse_fit_failed"), None
        a = ell.a + ELLIPSE_COMPENSATION_PX
        b = ell.b + ELLIPSE_COMPENSATION_PX
        fit = EllipseFit(cx=ell.cx, cy=ell.cy, a=a, b=b, theta=ell.theta)
        circumference = ellipse_perimeter(a, b) * spacing
        if label == ClassLabel.HEAD:
            return (
                BiometryResult(label=label, hc_mm=circumference, bpd_mm=2.0 * b * spacing),
                fit,
            )
        return BiometryResult(label=label, ac_mm=circumference), fit

    rect = min_area_rect(contour)
    comp = RotatedRect(cx=rect.cx, cy=rect.cy,
                       long=rect.long + 2.0 * RECT_COMPENSATION_PX,
                       short=rect.short + 2.0 * RECT_COMPENSATION_PX,
                       angle=rect.angle)
    length = comp.long * spacing
    return BiometryResult(label=label, fl_mm=length), comp


def measure(label, mask):
    """Convert a cleaned BinaryMask into class-appropriate measurements.

    Head and abdomen contours are simplified and fitted with an ellipse
    (circumference via the Ramanujan perimeter; the head additionally gets
    the minor-axis diameter). The femur contour is fitted with a rotated
    rectangle whose long side is the length. Pixel values are converted to
    millimetres with the mask's pixel spacing.
    """
    return measure_with_fit(label, mask)[0]
