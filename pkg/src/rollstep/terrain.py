"""Terrain models: flat plane, axis-aligned boxes, gradient-noise heightfield."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FlatTerrain:
    def query(self, x: float, y: float):
        return 0.0, np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Box:
    center: tuple  # (x, y) footprint center
    size: tuple  # (sx, sy, height); the box sits on the ground plane

    def covers(self, x: float, y: float) -> bool:
        return (
            abs(x - self.center[0]) <= self.size[0] / 2.0
            and abs(y - self.center[1]) <= self.size[1] / 2.0
        )


@dataclass
class BoxTerrain:
    boxes: list[Box] = field(default_factory=list)

    def query(self, x: float, y: float):
        h = 0.0
        for b in self.boxes:
            if b.covers(x, y):
                h = max(h, b.size[2])
        return h, np.array([0.0, 0.0, 1.0])


@dataclass
class Heightfield:
    """Regular grid with bilinear interpolation and analytic normals."""

    x0: float
    y0: float
    dx: float
    dy: float
    heights: np.ndarray  # (ny, nx)
    seed: int | None = None

    def query(self, x: float, y: float):
        H = self.heights
        ny, nx = H.shape
        u = (x - self.x0) / self.dx
        v = (y - self.y0) / self.dy
        i = int(np.clip(np.floor(v), 0, ny - 2))
        j = int(np.clip(np.floor(u), 0, nx - 2))
        fu = float(np.clip(u - j, 0.0, 1.0))
        fv = float(np.clip(v - i, 0.0, 1.0))
        h00, h01 = H[i, j], H[i, j + 1]
        h10, h11 = H[i + 1, j], H[i + 1, j + 1]
        h = (1 - fv) * ((1 - fu) * h00 + fu * h01) + fv * ((1 - fu) * h10 + fu * h11)
        dhdx = ((1 - fv) * (h01 - h00) + fv * (h11 - h10)) / self.dx
        dhdy = ((1 - fu) * (h10 - h00) + fu * (h11 - h01)) / self.dy
        n = np.array([-dhdx, -dhdy, 1.0])
        return float(h), n / np.linalg.norm(n)


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _perlin_octave(xs, ys, cell: float, rng) -> np.ndarray:
    """Classic 2D gradient noise sampled on the (ys, xs) grid."""
    gx = xs / cell
    gy = ys / cell
    nx_cells = int(np.floor(gx.max())) + 2
    ny_cells = int(np.floor(gy.max())) + 2
    x0_cell = int(np.floor(gx.min()))
    y0_cell = int(np.floor(gy.min()))
    angles = rng.uniform(0.0, 2.0 * np.pi, (ny_cells - y0_cell + 1, nx_cells - x0_cell + 1))
    grads = np.stack([np.cos(angles), np.sin(angles)], axis=-1)

    GX, GY = np.meshgrid(gx, gy)
    J = np.floor(GX).astype(int) - x0_cell
    I = np.floor(GY).astype(int) - y0_cell
    fx = GX - np.floor(GX)
    fy = GY - np.floor(GY)

    def dot_corner(di, dj, ox, oy):
        g = grads[I + di, J + dj]
        return g[..., 0] * (fx - ox) + g[..., 1] * (fy - oy)

    n00 = dot_corner(0, 0, 0.0, 0.0)
    n01 = dot_corner(0, 1, 1.0, 0.0)
    n10 = dot_corner(1, 0, 0.0, 1.0)
    n11 = dot_corner(1, 1, 1.0, 1.0)
    u, v = _fade(fx), _fade(fy)
    return (1 - v) * ((1 - u) * n00 + u * n01) + v * ((1 - u) * n10 + u * n11)


def perlin_heightfield(
    seed: int,
    x_range=(-1.0, 7.0),
    y_range=(-1.5, 1.5),
    resolution: float = 0.05,
    max_height: float = 0.08,
    cell: float = 0.6,
    octaves: int = 3,
    flat_radius: float = 0.6,
) -> Heightfield:
    """Seeded gradient-noise terrain, heights in [0, max_height].

    A disc of radius ``flat_radius`` around the origin is blended flat so the
    robot starts on level ground.
    """
    rng = np.random.default_rng(seed)
    xs = np.arange(x_range[0], x_range[1] + resolution, resolution)
    ys = np.arange(y_range[0], y_range[1] + resolution, resolution)
    total = np.zeros((ys.size, xs.size))
    amp, scale = 1.0, cell
    for _ in range(octaves):
        total += amp * _perlin_octave(xs, ys, scale, rng)
        amp *= 0.5
        scale *= 0.5
    total -= total.min()
    peak = total.max()
    if peak > 0.0:
        total *= max_height / peak
    GX, GY = np.meshgrid(xs, ys)
    r = np.hypot(GX, GY)
    blend = np.clip((r - flat_radius) / flat_radius, 0.0, 1.0)
    total *= blend
    return Heightfield(xs[0], ys[0], resolution, resolution, total, seed=seed)


def terrain_from_spec(spec: dict):
    """Build a terrain from its scenario-file mapping."""
    kind = spec.get("kind", "flat")
    if kind == "flat":
        return FlatTerrain()
    if kind == "boxes":
        boxes = [
            Box(tuple(b["center"]), tuple(b["size"])) for b in spec.get("boxes", [])
        ]
        return BoxTerrain(boxes)
    if kind == "heightfield":
        return perlin_heightfield(
            seed=int(spec.get("seed", 0)),
            x_range=tuple(spec.get("x_range", (-1.0, 7.0))),
            y_range=tuple(spec.get("y_range", (-1.5, 1.5))),
            resolution=float(spec.get("resolution", 0.05)),
            max_height=float(spec.get("max_height", 0.08)),
            cell=float(spec.get("cell", 0.6)),
            octaves=int(spec.get("octaves", 3)),
        )
    raise ValueError(f"unknown terrain kind {kind!r}")
