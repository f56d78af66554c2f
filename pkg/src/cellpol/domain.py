"""Structured surface grids: flat torus, planar Dirichlet window, lat-lon sphere."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

KINDS = ("periodic", "window", "sphere")


@dataclass(frozen=True)
class DomainSpec:
    """Cell-centred grid with per-cell metric data.

    Coordinates are ``(x1, x2)``; on the sphere ``x1`` is the colatitude
    ``phi`` and ``x2`` the longitude ``theta``. ``metric[..., :, :]`` holds the
    diffusion tensor ``H`` (inverse metric) and ``mu`` the area density, so
    that ``-lap_Gamma u = -(1/mu) div(mu H grad u)``.
    """

    kind: str
    lower: Tuple[float, float]
    upper: Tuple[float, float]
    shape: Tuple[int, int]
    metric: np.ndarray = field(repr=False, compare=False, default=None)
    mu: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        n1, n2 = self.shape
        if n1 < 2 or n2 < 2:
            raise ValueError("need at least 2 cells per axis")
        if self.upper[0] <= self.lower[0] or self.upper[1] <= self.lower[1]:
            raise ValueError("empty extent")
        if self.metric is None or self.mu is None:
            H, mu = _default_metric(self)
            object.__setattr__(self, "metric", H)
            object.__setattr__(self, "mu", mu)
        H = self.metric
        if H.shape != (n1, n2, 2, 2) or self.mu.shape != (n1, n2):
            raise ValueError("metric samples do not match grid shape")
        lam_min = 0.5 * (H[..., 0, 0] + H[..., 1, 1]) - np.sqrt(
            0.25 * (H[..., 0, 0] - H[..., 1, 1]) ** 2 + H[..., 0, 1] ** 2)
        if not np.all(lam_min > 0.0) or not np.all(self.mu > 0.0):
            raise ValueError("metric is not uniformly elliptic")

    # constructors -------------------------------------------------------

    @classmethod
    def periodic(cls, lower, upper, shape) -> "DomainSpec":
        return cls("periodic", tuple(map(float, lower)), tuple(map(float, upper)), tuple(map(int, shape)))

    @classmethod
    def window(cls, lower, upper, shape) -> "DomainSpec":
        return cls("window", tuple(map(float, lower)), tuple(map(float, upper)), tuple(map(int, shape)))

    @classmethod
    def sphere(cls, n_phi: int, n_theta: int, phi_min_deg: float = 5.0) -> "DomainSpec":
        pm = math.radians(phi_min_deg)
        return cls("sphere", (pm, 0.0), (math.pi - pm, 2.0 * math.pi), (int(n_phi), int(n_theta)))

    # geometry -----------------------------------------------------------

    @property
    def spacing(self) -> Tuple[float, float]:
        return ((self.upper[0] - self.lower[0]) / self.shape[0],
                (self.upper[1] - self.lower[1]) / self.shape[1])

    @property
    def centers(self) -> Tuple[np.ndarray, np.ndarray]:
        h1, h2 = self.spacing
        return (self.lower[0] + (np.arange(self.shape[0]) + 0.5) * h1,
                self.lower[1] + (np.arange(self.shape[1]) + 0.5) * h2)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        c1, c2 = self.centers
        return np.meshgrid(c1, c2, indexing="ij")

    @property
    def cell_area(self) -> np.ndarray:
        h1, h2 = self.spacing
        return self.mu * (h1 * h2)

    @property
    def periodic_axes(self) -> Tuple[bool, bool]:
        if self.kind == "periodic":
            return True, True
        if self.kind == "sphere":
            return False, True
        return False, False

    @property
    def extent(self) -> Tuple[float, float]:
        return self.upper[0] - self.lower[0], self.upper[1] - self.lower[1]

    def displacement(self, point) -> Tuple[np.ndarray, np.ndarray]:
        """Cell-centre offsets ``x - point`` using the nearest periodic image."""
        X1, X2 = self.mesh()
        d1 = X1 - point[0]
        d2 = X2 - point[1]
        L1, L2 = self.extent
        p1, p2 = self.periodic_axes
        if p1:
            d1 = d1 - L1 * np.round(d1 / L1)
        if p2:
            d2 = d2 - L2 * np.round(d2 / L2)
        return d1, d2

    def coarsen(self) -> "DomainSpec":
        n1, n2 = self.shape
        if n1 % 2 or n2 % 2:
            raise ValueError("coarsening needs even grid dimensions")
        return DomainSpec(self.kind, self.lower, self.upper, (n1 // 2, n2 // 2))

    def header(self) -> dict:
        return {"kind": self.kind, "lower": list(self.lower), "upper": list(self.upper),
                "shape": list(self.shape), "spacing": list(self.spacing)}


def _default_metric(dom: DomainSpec):
    n1, n2 = dom.shape
    H = np.zeros((n1, n2, 2, 2))
    if dom.kind == "sphere":
        phi, _ = dom.mesh()
        sphi = np.sin(phi)
        H[..., 0, 0] = 1.0
        H[..., 1, 1] = 1.0 / sphi ** 2
        return H, sphi
    H[..., 0, 0] = 1.0
    H[..., 1, 1] = 1.0
    return H, np.ones((n1, n2))
