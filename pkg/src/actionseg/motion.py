"""Dense optical flow between consecutive frames and flow-derived fields.

Flow is estimated with the classic Horn-Schunck method (Jacobi iterations on
the regularized brightness-constancy equations). Derivative operators use
central differences in the interior and one-sided differences at borders.
All functions are pure and deterministic for fixed inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve

try:  # optional: ~3x faster smoothing kernel in the flow solver
    import cv2
except ImportError:  # pragma: no cover - depends on environment
    cv2 = None


@dataclass
class FlowField:
    """Per-pixel flow components in pixels/frame. ``u`` horizontal, ``v`` vertical."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.ndim != 2 or self.u.shape != self.v.shape:
            raise ValueError("u and v must be 2-D arrays of identical shape")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("flow components must be finite")

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]


def _image(frame) -> np.ndarray:
    """Accept a Frame or a bare 2-D array."""
    arr = frame.pixels if hasattr(frame, "pixels") else np.asarray(frame, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    return np.asarray(arr, dtype=np.float64)


# Weighted 8-neighbour average used by the Horn-Schunck smoothness term.
_AVG_KERNEL = np.array(
    [
        [1 / 12, 1 / 6, 1 / 12],
        [1 / 6, 0.0, 1 / 6],
        [1 / 12, 1 / 6, 1 / 12],
    ]
)


def _hs_derivatives(img0: np.ndarray, img1: np.ndarray):
    """Spatio-temporal derivatives averaged over the 2x2x2 cube.

    Averaging forward differences across both frames makes the estimates
    consistent at the half-grid point, so an integer translation yields a
    data term that the true constant flow satisfies exactly.
    """
    p0 = np.pad(img0, ((0, 1), (0, 1)), mode="edge")
    p1 = np.pad(img1, ((0, 1), (0, 1)), mode="edge")
    ex = 0.25 * (
        (p0[:-1, 1:] - p0[:-1, :-1])
        + (p0[1:, 1:] - p0[1:, :-1])
        + (p1[:-1, 1:] - p1[:-1, :-1])
        + (p1[1:, 1:] - p1[1:, :-1])
    )
    ey = 0.25 * (
        (p0[1:, :-1] - p0[:-1, :-1])
        + (p0[1:, 1:] - p0[:-1, 1:])
        + (p1[1:, :-1] - p1[:-1, :-1])
        + (p1[1:, 1:] - p1[:-1, 1:])
    )
    et = 0.25 * (
        (p1[:-1, :-1] - p0[:-1, :-1])
        + (p1[:-1, 1:] - p0[:-1, 1:])
        + (p1[1:, :-1] - p0[1:, :-1])
        + (p1[1:, 1:] - p0[1:, 1:])
    )
    return ex, ey, et


if cv2 is not None:

    def _neighbour_avg(field: np.ndarray) -> np.ndarray:
        return cv2.filter2D(field, -1, _AVG_KERNEL, borderType=cv2.BORDER_REPLICATE)

else:

    def _neighbour_avg(field: np.ndarray) -> np.ndarray:
        return convolve(field, _AVG_KERNEL, mode="nearest")


def horn_schunck(prev, nxt, alpha: float = 15.0, iters: int = 200) -> FlowField:
    """Estimate dense flow from ``prev`` to ``nxt``.

    ``alpha`` weighs the smoothness term; ``iters`` fixes the number of
    Jacobi iterations (no early exit, so outputs are bit-reproducible).
    """
    img0, img1 = _image(prev), _image(nxt)
    if img0.shape != img1.shape:
        raise ValueError(f"frame shapes differ: {img0.shape} vs {img1.shape}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if iters < 1:
        raise ValueError("iters must be >= 1")

    ex, ey, et = _hs_derivatives(img0, img1)
    inv_denom = 1.0 / (alpha * alpha + ex * ex + ey * ey)
    ex_n = ex * inv_denom
    ey_n = ey * inv_denom
    et_n = et * inv_denom
    u = np.zeros_like(img0)
    v = np.zeros_like(img0)
    shared = np.empty_like(img0)
    tmp = np.empty_like(img0)
    for _ in range(iters):
        ubar = _neighbour_avg(u)
        vbar = _neighbour_avg(v)
        np.multiply(ex_n, ubar, out=shared)
        np.multiply(ey_n, vbar, out=tmp)
        shared += tmp
        shared += et_n
        np.multiply(ex, shared, out=tmp)
        np.subtract(ubar, tmp, out=u)
        np.multiply(ey, shared, out=tmp)
        np.subtract(vbar, tmp, out=v)
    return FlowField(u, v)


def flow_time_derivative(flow_prev: FlowField, flow_curr: FlowField):
    """Forward-difference temporal derivative of the flow, per component."""
    if flow_prev.u.shape != flow_curr.u.shape:
        raise ValueError("flow fields must share dimensions")
    return flow_curr.u - flow_prev.u, flow_curr.v - flow_prev.v


def _require_min_size(flow: FlowField) -> None:
    if flow.width < 3 or flow.height < 3:
        raise ValueError("field too small for derivative stencils (need >= 3x3)")


def flow_divergence(flow: FlowField) -> np.ndarray:
    """du/dx + dv/dy, central in the interior, one-sided at borders."""
    _require_min_size(flow)
    return np.gradient(flow.u, axis=1) + np.gradient(flow.v, axis=0)


def flow_vorticity(flow: FlowField) -> np.ndarray:
    """dv/dx - du/dy, central in the interior, one-sided at borders."""
    _require_min_size(flow)
    return np.gradient(flow.v, axis=1) - np.gradient(flow.u, axis=0)


# ---------------------------------------------------------------------------
# debug dump format: raw little-endian float64, u plane then v plane,
# with a JSON sidecar describing the geometry.

def save_flow(flow: FlowField, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(flow.u.astype("<f8").tobytes())
        fh.write(flow.v.astype("<f8").tobytes())
    sidecar = {
        "width": flow.width,
        "height": flow.height,
        "order": "u-then-v",
        "dtype": "<f8",
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_flow(path) -> FlowField:
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    w, h = int(sidecar["width"]), int(sidecar["height"])
    raw = np.fromfile(path, dtype="<f8")
    if raw.size != 2 * w * h:
        raise ValueError(f"{path}: expected {2 * w * h} floats, found {raw.size}")
    return FlowField(raw[: w * h].reshape(h, w), raw[w * h :].reshape(h, w))
