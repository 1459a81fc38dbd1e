"""Random piecewise-constant ellipse phantoms."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import Rng


@dataclass(frozen=True)
class EllipseSpec:
    """Ellipse centered at ``(cx, cy)`` (pixels, relative to the image
    center) with semi-axes ``(a, b)``, rotated by ``angle`` radians."""

    cx: float
    cy: float
    a: float
    b: float
    angle: float
    value: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("semi-axes must be positive")

    @property
    def extent(self) -> float:
        """Radius of the smallest centered disk containing the ellipse."""
        return math.hypot(self.cx, self.cy) + max(self.a, self.b)


@dataclass(frozen=True)
class PhantomConfig:
    image_size: int = 64
    inner_count: tuple[int, int] = (8, 20)
    level_count: int = 4
    boundary_thickness: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.level_count < 2:
            raise ValueError("level_count must be >= 2")
        lo, hi = self.inner_count
        if lo < 0 or hi < lo:
            raise ValueError("inner_count must be a nonempty range")


def rasterize(ellipses, size: int) -> np.ndarray:
    """Binary per-pixel-center fill; later ellipses overwrite earlier ones."""
    c = (size - 1) / 2.0
    idx = np.arange(size) - c
    y, x = np.meshgrid(idx, idx, indexing="ij")
    img = np.zeros((size, size))
    for e in ellipses:
        ca, sa = math.cos(e.angle), math.sin(e.angle)
        dx, dy = x - e.cx, y - e.cy
        u = (dx * ca + dy * sa) / e.a
        v = (-dx * sa + dy * ca) / e.b
        img[u * u + v * v <= 1.0] = e.value
    return img


def random_ellipses(config: PhantomConfig, rng: Rng) -> list[EllipseSpec]:
    gen = rng.generator()
    n = config.image_size
    unit = n / 64.0
    radius = n / 2.0 - 1.5
    levels = gen.uniform(0.2, 1.0, size=config.level_count - 1)
    boundary_level = levels[0]
    fill_level = levels[1 % len(levels)]
    inner_levels = [lv for i, lv in enumerate(levels) if i != 1 % len(levels)] or [fill_level]

    a = gen.uniform(0.80, 0.95) * radius
    b = gen.uniform(0.65, 0.85) * radius
    phi = gen.uniform(0.0, math.pi)
    out = [EllipseSpec(0.0, 0.0, a, b, phi, float(boundary_level))]
    t = config.boundary_thickness * unit
    fa, fb = a - t, b - t
    out.append(EllipseSpec(0.0, 0.0, fa, fb, phi, float(fill_level)))

    count = int(gen.integers(config.inner_count[0], config.inner_count[1] + 1))
    cp, sp_ = math.cos(phi), math.sin(phi)
    for _ in range(count):
        ea = gen.uniform(2.0, 9.0) * unit
        eb = gen.uniform(2.0, 9.0) * unit
        room_a, room_b = fa - max(ea, eb) - 0.5, fb - max(ea, eb) - 0.5
        if room_a <= 0 or room_b <= 0:
            continue
        r = math.sqrt(gen.uniform())
        ang = gen.uniform(0.0, 2 * math.pi)
        u, v = r * room_a * math.cos(ang), r * room_b * math.sin(ang)
        cx, cy = u * cp - v * sp_, u * sp_ + v * cp
        value = float(inner_levels[int(gen.integers(len(inner_levels)))])
        out.append(EllipseSpec(cx, cy, ea, eb, gen.uniform(0.0, math.pi), value))
    return out


def random_phantom(config: PhantomConfig, rng: Rng | None = None) -> np.ndarray:
    if rng is None:
        rng = Rng(config.seed)
    return rasterize(random_ellipses(config, rng), config.image_size)


def make_corpus(config: PhantomConfig, count: int) -> list[np.ndarray]:
    """``count`` phantoms, item ``i`` drawn from stream ``(config.seed, i)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    base = Rng(config.seed)
    return [random_phantom(config, base.child(i)) for i in range(count)]


def perturb_ellipses(base, amplitude: float, rng: Rng, support_radius: float | None = None) -> list[EllipseSpec]:
    """Jitter each center coordinate and semi-axis multiplicatively by a
    factor drawn uniformly from ``[1 - amplitude, 1 + amplitude]``.

    Ellipses pushed outside ``support_radius`` are shrunk back inside and a
    warning is issued.
    """
    if not 0 <= amplitude < 1:
        raise ValueError("amplitude must lie in [0, 1)")
    gen = rng.generator()
    out = []
    clipped = 0
    for e in base:
        j = gen.uniform(-amplitude, amplitude, size=4)
        new = replace(e, cx=e.cx * (1 + j[0]), cy=e.cy * (1 + j[1]), a=e.a * (1 + j[2]), b=e.b * (1 + j[3]))
        if support_radius is not None and new.extent > support_radius:
            room = support_radius - math.hypot(new.cx, new.cy)
            if room <= 0:
                shrink = support_radius / math.hypot(new.cx, new.cy) * 0.99
                new = replace(new, cx=new.cx * shrink, cy=new.cy * shrink)
                room = support_radius - math.hypot(new.cx, new.cy)
            s = room / max(new.a, new.b)
            new = replace(new, a=new.a * s, b=new.b * s)
            clipped += 1
        out.append(new)
    if clipped:
        warnings.warn(f"{clipped} perturbed ellipse(s) clipped to the support disk", stacklevel=2)
    return out


def perturb_phantom(base, amplitude: float, rng: Rng, size: int) -> np.ndarray:
    return rasterize(perturb_ellipses(base, amplitude, rng, support_radius=size / 2.0 - 0.5), size)


def write_ellipses(path, ellipses) -> None:
    lines = ["# cx cy a b angle value"]
    lines += [f"{e.cx!r} {e.cy!r} {e.a!r} {e.b!r} {e.angle!r} {e.value!r}" for e in ellipses]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ellipses(path) -> list[EllipseSpec]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
        out.append(EllipseSpec(*map(float, parts)))
    return out
