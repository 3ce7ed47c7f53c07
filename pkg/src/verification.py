"""
Manufactured solutions and forcing hooks for convergence studies
"""

import logging
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np

from .discretization import Forcing, FsiSpace

logger = logging.getLogger(__name__)

def _smoothstep(t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """C3 step S(t) on [0, 1] with its first two derivatives"""
    t = np.clip(t, 0.0, 1.0)
    S = 35 * t ** 4 - 84 * t ** 5 + 70 * t ** 6 - 20 * t ** 7
    dS = 140 * t ** 3 * (1 - t) ** 3
    d2S = 420 * t ** 2 * (1 - t) ** 2 * (1 - 2 * t)
    return S, dS, d2S

@dataclass(frozen=True)
class StreamFunctionFlow:
    """
    Solenoidal 2-D field u = (psi_y, -psi_x) with psi = y s(r).

    s = 1 for r <= r_inner and s = 0 for r >= r_outer, so u = e_1 near the
    body and u = 0 near the outer circle.
    """
    r_inner: float
    r_outer: float

    def _radial(self, r: np.ndarray):
        width = self.r_outer - self.r_inner
        S, dS, d2S = _smoothstep((r - self.r_inner) / width)
        return 1.0 - S, -dS / width, -d2S / width ** 2

    def velocity(self, points: np.ndarray) -> np.ndarray:
        x, y = points[..., 0], points[..., 1]
        r = np.hypot(x, y)
        s, s1, _ = self._radial(r)
        psi_x = x * y * s1 / r
        psi_y = s + y ** 2 * s1 / r
        return np.stack([psi_y, -psi_x], axis=-1)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """(..., k, l) = d u_k / d x_l"""
        x, y = points[..., 0], points[..., 1]
        r = np.hypot(x, y)
        _, s1, s2 = self._radial(r)
        psi_xx = y * (s2 * x ** 2 / r ** 2 + s1 * y ** 2 / r ** 3)
        psi_xy = x * (s2 * y ** 2 / r ** 2 + s1 * x ** 2 / r ** 3)
        psi_yy = 3 * y * s1 / r + y ** 3 * s2 / r ** 2 - y ** 3 * s1 / r ** 3
        g = np.empty(points.shape[:-1] + (2, 2))
        g[..., 0, 0] = psi_xy
        g[..., 0, 1] = psi_yy
        g[..., 1, 0] = -psi_xx
        g[..., 1, 1] = -psi_xy
        return g

def steady_forcing(flow: StreamFunctionFlow, lam: float) -> Forcing:
    """Weak forcing making flow (with zero pressure) an exact steady solution at lam"""
    def forcing(points: np.ndarray):
        u = flow.velocity(points)
        g = flow.gradient(points)
        convection = np.einsum("...l,...kl->...k", u, g)
        f = lam * (convection - g[..., :, 0])
        F = g + np.swapaxes(g, -1, -2)
        return f, F
    return forcing

def bump_forcing(center: Sequence[float], radius: float, amplitude: float = 1.0,
                 frequency: float = 1.0) -> Callable[[float, np.ndarray], Tuple[np.ndarray, np.ndarray]]:
    """Compactly supported transverse body force amplitude * sin(frequency t) * (1 - s^2)^3"""
    c = np.asarray(center, dtype=float)

    def forcing(t: float, points: np.ndarray):
        s2 = np.sum((points - c) ** 2, axis=-1) / radius ** 2
        w = np.where(s2 < 1.0, (1.0 - s2) ** 3, 0.0)
        f = np.zeros(points.shape)
        f[..., 1] = amplitude * np.sin(frequency * t) * w
        return f, np.zeros(points.shape + (points.shape[-1],))
    return forcing

def l2_error(space: FsiSpace, u_full: np.ndarray, exact: Callable[[np.ndarray], np.ndarray]) -> float:
    """L2 norm of u_h - u_exact by quadrature"""
    total = 0.0
    for sl in space.chunks():
        _, wdet = space.gradients(sl)
        diff = space.evaluate(u_full, sl) - exact(space.quadrature_coordinates(sl))
        total += float(np.sum(wdet * np.sum(diff ** 2, axis=-1)))
    return float(np.sqrt(total))

def l2_norm(space: FsiSpace, u_full: np.ndarray) -> float:
    return l2_error(space, u_full, lambda pts: np.zeros(pts.shape))

def observed_orders(errors: Sequence[float], ratio: float = 2.0) -> np.ndarray:
    """log_ratio(e_i / e_{i+1}) for a sequence of errors at refinement ratio"""
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)
