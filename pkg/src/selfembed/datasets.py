"""Procedural toy shapes with area-uniform surface sampling."""

import numpy as np

from .config import ConfigError, ToyDatasetSpec
from .geometry import farthest_point_sample, normalize_unit_sphere

FAMILIES = ("sphere", "box", "torus", "cylinder", "two_box")


def _box_faces(lo, hi):
    """Six axis-aligned faces as (origin, edge_u, edge_v)."""
    ext = hi - lo
    faces = []
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        eu = np.zeros(3)
        ev = np.zeros(3)
        eu[u] = ext[u]
        ev[v] = ext[v]
        for side in (lo[axis], hi[axis]):
            origin = lo.copy()
            origin[axis] = side
            faces.append((origin, eu, ev))
    return faces


def _sample_faces(faces, count, rng):
    areas = np.array([np.linalg.norm(np.cross(eu, ev)) for _, eu, ev in faces])
    which = rng.choice(len(faces), size=count, p=areas / areas.sum())
    st = rng.random((count, 2))
    origins = np.array([f[0] for f in faces])[which]
    eus = np.array([f[1] for f in faces])[which]
    evs = np.array([f[2] for f in faces])[which]
    return origins + st[:, :1] * eus + st[:, 1:] * evs, which


def sample_sphere(count, rng):
    x = rng.standard_normal((count, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sample_box(count, rng, extents=None, return_faces=False):
    ext = rng.uniform(0.5, 1.5, 3) if extents is None else np.asarray(extents, dtype=float)
    faces = _box_faces(-ext / 2, ext / 2)
    pts, which = _sample_faces(faces, count, rng)
    if return_faces:
        return pts, which, faces
    return pts


def sample_torus(count, rng, major=1.0, minor=None):
    minor = rng.uniform(0.25, 0.45) if minor is None else minor
    out = np.empty((0, 3))
    # surface density is proportional to (major + minor cos(theta)); rejection sample theta
    while out.shape[0] < count:
        theta = rng.uniform(0, 2 * np.pi, 2 * count)
        keep = rng.random(2 * count) * (major + minor) < major + minor * np.cos(theta)
        theta = theta[keep]
        phi = rng.uniform(0, 2 * np.pi, theta.shape[0])
        ring = major + minor * np.cos(theta)
        pts = np.stack([ring * np.cos(phi), ring * np.sin(phi), minor * np.sin(theta)], axis=1)
        out = np.concatenate([out, pts])
    return out[:count]


def sample_cylinder(count, rng, radius=None, height=None):
    radius = rng.uniform(0.3, 0.8) if radius is None else radius
    height = rng.uniform(0.8, 2.0) if height is None else height
    side = 2 * np.pi * radius * height
    cap = np.pi * radius ** 2
    part = rng.choice(3, size=count, p=np.array([side, cap, cap]) / (side + 2 * cap))
    phi = rng.uniform(0, 2 * np.pi, count)
    rad = np.where(part == 0, radius, radius * np.sqrt(rng.random(count)))
    z = np.where(part == 0, rng.uniform(-height / 2, height / 2, count),
                 np.where(part == 1, -height / 2, height / 2))
    return np.stack([rad * np.cos(phi), rad * np.sin(phi), z], axis=1)


def sample_two_box(count, rng):
    """A wide base slab with a smaller block standing on it."""
    base = rng.uniform([1.0, 1.0, 0.15], [1.6, 1.6, 0.4])
    top = rng.uniform([0.3, 0.3, 0.4], [0.7, 0.7, 1.0])
    lo1, hi1 = -base / 2, base / 2
    shift = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), base[2] / 2 + top[2] / 2])
    lo2, hi2 = shift - top / 2, shift + top / 2
    pts, _ = _sample_faces(_box_faces(lo1, hi1) + _box_faces(lo2, hi2), count, rng)
    return pts


_SAMPLERS = {
    "sphere": sample_sphere,
    "box": sample_box,
    "torus": sample_torus,
    "cylinder": sample_cylinder,
    "two_box": sample_two_box,
}


def sample_family(family, count, rng):
    try:
        sampler = _SAMPLERS[family]
    except KeyError:
        raise ConfigError(f"unknown shape family {family!r}") from None
    return sampler(count, rng)


def make_shape(family, N, rng, noise=0.0, oversample=1):
    dense = sample_family(family, N * max(1, int(oversample)), rng)
    if oversample > 1:
        dense = dense[farthest_point_sample(dense, N, int(rng.integers(dense.shape[0])))]
    if noise > 0:
        dense = dense + rng.normal(0.0, noise, dense.shape)
    pts, _ = normalize_unit_sphere(dense)
    return pts


def make_toy_dataset(spec=None):
    """Deterministic list of unit-sphere-normalized ``(N, 3)`` clouds.

    Shapes are ordered family by family, ``samples_per_family`` each.
    """
    spec = spec or ToyDatasetSpec()
    if isinstance(spec, dict):
        spec = ToyDatasetSpec.from_dict(spec)
    for fam in spec.families:
        if fam not in _SAMPLERS:
            raise ConfigError(f"unknown shape family {fam!r}")
    rng = np.random.default_rng(spec.seed)
    return [
        make_shape(fam, spec.N, rng, spec.noise, spec.oversample)
        for fam in spec.families
        for _ in range(spec.samples_per_family)
    ]
