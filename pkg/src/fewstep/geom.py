"""Structures, toy generators, rigid superposition and random augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ValidationError

ENTITY_CLASSES = ("protein", "ligand", "dna", "rna")
TOY_KINDS = ("polymer-helix", "polymer-chain", "complex-with-ligand", "gmm")


class RngStream:
    """Seeded random stream addressed by ``(seed, stream)``.

    The stream id may be an int or a tuple of ints; child streams are derived
    by appending to the tuple, so a grid of samples can be addressed without
    any shared state. A stream is single-consumer.
    """

    def __init__(self, seed: int, stream: int | Sequence[int] = 0):
        self.seed = int(seed)
        self.stream = (int(stream),) if np.isscalar(stream) else tuple(int(s) for s in stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(ids))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"


@dataclass
class Structure:
    coords: np.ndarray
    entity: np.ndarray
    chain: np.ndarray
    bonds: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 3)
        n = len(self.coords)
        self.entity = np.asarray(self.entity, dtype=object).reshape(-1)
        self.chain = np.asarray(self.chain, dtype=int).reshape(-1)
        self.bonds = np.asarray(self.bonds, dtype=int).reshape(-1, 2)
        self.weights = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float).reshape(-1)
        if n < 1:
            raise ValidationError("structure needs at least one atom")
        if len(self.entity) != n or len(self.chain) != n or len(self.weights) != n:
            raise ValidationError("per-atom fields must match the number of coordinates")
        bad = set(self.entity) - set(ENTITY_CLASSES)
        if bad:
            raise ValidationError(f"unknown entity classes {sorted(bad)}")
        if not np.all(np.isfinite(self.coords)):
            raise ValidationError("coordinates must be finite")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValidationError("atom weights must be finite and nonnegative")
        if len(self.bonds):
            l, m = self.bonds[:, 0], self.bonds[:, 1]
            if np.any(l < 0) or np.any(m >= n) or np.any(l >= m):
                raise ValidationError("bonds must satisfy 0 <= l < m < N")
            if len({(int(a), int(b)) for a, b in self.bonds}) != len(self.bonds):
                raise ValidationError("duplicate bonds")

    @property
    def n_atoms(self) -> int:
        return len(self.coords)

    def with_coords(self, coords) -> "Structure":
        """Same topology, new coordinates."""
        return replace(self, coords=np.array(coords, dtype=float))

    def copy(self) -> "Structure":
        return Structure(self.coords.copy(), self.entity.copy(), self.chain.copy(),
                         self.bonds.copy(), self.weights.copy())

    def __eq__(self, other):
        if not isinstance(other, Structure):
            return NotImplemented
        return (np.array_equal(self.coords, other.coords)
                and np.array_equal(self.entity, other.entity)
                and np.array_equal(self.chain, other.chain)
                and np.array_equal(self.bonds, other.bonds)
                and np.array_equal(self.weights, other.weights))


@dataclass
class ToySpec:
    """Recipe for a synthetic structure.

    ``jitter`` adds per-atom Gaussian conformational noise on top of the ideal
    geometry; bond lengths are exact only when it is zero.
    """

    kind: str = "polymer-helix"
    n_atoms: int = 12
    bond_length: float = 3.8
    n_chains: int = 1
    n_ligand_atoms: int = 4
    mixture_weights: Sequence[float] = (1.0,)
    mixture_means: Sequence[Sequence[float]] = ((0.0, 0.0, 0.0),)
    component_std: float = 1.0
    jitter: float = 0.0

    def validate(self):
        if self.kind not in TOY_KINDS:
            raise ValidationError(f"unknown toy kind {self.kind!r}")
        if self.n_atoms < 1:
            raise ValidationError("n_atoms must be positive")
        if self.kind != "gmm":
            if self.n_atoms < 2:
                raise ValidationError("bonded kinds need at least 2 atoms")
            if self.bond_length <= 0:
                raise ValidationError("bond_length must be positive")
            if self.n_chains < 1 or self.n_chains > self.n_atoms // 2:
                raise ValidationError("n_chains must be in [1, n_atoms // 2]")
        if self.kind == "complex-with-ligand" and self.n_ligand_atoms < 1:
            raise ValidationError("complex-with-ligand needs ligand atoms")
        if self.kind == "gmm":
            w = np.asarray(self.mixture_weights, dtype=float)
            mu = np.asarray(self.mixture_means, dtype=float).reshape(-1, 3)
            if len(w) != len(mu) or len(w) == 0:
                raise ValidationError("mixture weights and means disagree in length")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValidationError("mixture weights must be nonnegative and sum to 1")
            if self.component_std <= 0:
                raise ValidationError("component std must be positive")
        if self.jitter < 0:
            raise ValidationError("jitter must be nonnegative")


def _helix(n, bond_length, turn=math.radians(100.0)):
    # radius fixed relative to bond length, rise solved so |x_{i+1} - x_i| = bond_length
    r = 0.605 * bond_length
    rise = math.sqrt(bond_length**2 - 2 * r * r * (1 - math.cos(turn)))
    k = np.arange(n)
    return np.stack([r * np.cos(k * turn), r * np.sin(k * turn), k * rise], axis=1)


def _walk(n, bond_length, gen, min_angle=math.radians(90.0)):
    # random walk with a bend limit so consecutive bonds never fold back
    x = np.zeros((n, 3))
    prev = None
    for i in range(1, n):
        while True:
            d = gen.standard_normal(3)
            d /= np.linalg.norm(d)
            if prev is None or np.dot(d, prev) > math.cos(math.pi - min_angle):
                break
        x[i] = x[i - 1] + bond_length * d
        prev = d
    return x


def _chain_sizes(n, n_chains):
    base, extra = divmod(n, n_chains)
    return [base + (1 if i < extra else 0) for i in range(n_chains)]


def gen_toy(spec: ToySpec, rng: RngStream) -> Structure:
    """Draw one structure from ``spec``; deterministic in ``(spec, rng)``."""
    spec.validate()
    gen = rng.gen
    if spec.kind == "gmm":
        w = np.asarray(spec.mixture_weights, dtype=float)
        mu = np.asarray(spec.mixture_means, dtype=float).reshape(-1, 3)
        comp = gen.choice(len(w), size=spec.n_atoms, p=w / w.sum())
        coords = mu[comp] + spec.component_std * gen.standard_normal((spec.n_atoms, 3))
        return Structure(coords, ["protein"] * spec.n_atoms, np.zeros(spec.n_atoms, dtype=int))

    coords, entity, chain, bonds = [], [], [], []
    start = 0
    sizes = _chain_sizes(spec.n_atoms, spec.n_chains)
    for c, size in enumerate(sizes):
        if spec.kind == "polymer-chain":
            x = _walk(size, spec.bond_length, gen)
        else:
            x = _helix(size, spec.bond_length)
            # side-by-side chains, 10 A apart
            x = x + np.array([10.0 * c, 0.0, 0.0])
        coords.append(x)
        entity += ["protein"] * size
        chain += [c] * size
        bonds += [(start + i, start + i + 1) for i in range(size - 1)]
        start += size
    coords = np.concatenate(coords)

    if spec.kind == "complex-with-ligand":
        # ligand sits off the helix axis near its middle, placed at a random azimuth
        phi = gen.uniform(0, 2 * math.pi)
        radial = np.array([math.cos(phi), math.sin(phi), 0.0])
        anchor = coords.mean(axis=0) + (0.605 * spec.bond_length + 4.0) * radial
        along = np.array([-radial[1], radial[0], 0.0])
        lig = anchor + spec.bond_length * _zigzag(spec.n_ligand_atoms, along, radial)
        lig_chain = (max(chain) + 1) if chain else 0
        bonds += [(start + i, start + i + 1) for i in range(spec.n_ligand_atoms - 1)]
        coords = np.concatenate([coords, lig])
        entity += ["ligand"] * spec.n_ligand_atoms
        chain += [lig_chain] * spec.n_ligand_atoms

    coords = coords - coords.mean(axis=0)
    if spec.jitter > 0:
        coords = coords + spec.jitter * gen.standard_normal(coords.shape)
    return Structure(coords, entity, chain, bonds)


def _zigzag(n, along, out, angle=math.radians(30.0)):
    # cumulative unit steps alternating +-angle about `along`, in the (along, z) plane
    side = np.cross(along, out)
    pos = np.zeros((n, 3))
    for k in range(1, n):
        sign = 1.0 if k % 2 else -1.0
        d = math.cos(angle) * along + sign * math.sin(angle) * side
        pos[k] = pos[k - 1] + d / np.linalg.norm(d)
    return pos


def random_rotation(gen: np.random.Generator) -> np.ndarray:
    """Uniform rotation from a normalized Gaussian quaternion."""
    q = gen.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def center_random_augmentation(x, rng: RngStream, translation_std: float = 1.0,
                               rotate: bool = True):
    """Center, rotate uniformly at random, then translate by an isotropic Gaussian.

    Accepts a Structure or an ``(N, 3)`` array and returns the same kind. The
    rotation is drawn even when ``rotate`` is False so that toggling it does not
    shift the rest of the stream.
    """
    coords = x.coords if isinstance(x, Structure) else np.asarray(x, dtype=float)
    gen = rng.gen
    R = random_rotation(gen)
    shift = translation_std * gen.standard_normal(3)
    out = coords - coords.mean(axis=0)
    if rotate:
        out = out @ R.T
    out = out + shift
    return x.with_coords(out) if isinstance(x, Structure) else out


def _as_coords(x):
    return x.coords if isinstance(x, Structure) else np.asarray(x, dtype=float)


def kabsch_transform(mobile, target, weights=None):
    """Weighted optimal proper rotation and translation mapping mobile onto target.

    Returns ``(R, t)`` with ``mobile @ R.T + t`` the superposed coordinates.
    """
    P, Q = _as_coords(mobile), _as_coords(target)
    if P.shape != Q.shape:
        raise ValidationError(f"atom count mismatch: {len(P)} vs {len(Q)}")
    w = np.ones(len(P)) if weights is None else np.asarray(weights, dtype=float)
    if len(w) != len(P) or np.any(w < 0) or w.sum() <= 0:
        raise ValidationError("weights must be nonnegative, not all zero, one per atom")
    w = w / w.sum()
    p0 = w @ P
    q0 = w @ Q
    H = (P - p0).T @ ((Q - q0) * w[:, None])
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    return R, q0 - p0 @ R.T


def kabsch_align(pred, target, weights=None):
    """Superpose ``pred`` onto ``target``; returns ``(aligned, rmsd)``.

    The RMSD is weighted by the normalized weights and is the minimum over all
    proper rigid motions.
    """
    P, Q = _as_coords(pred), _as_coords(target)
    R, t = kabsch_transform(P, Q, weights)
    aligned = P @ R.T + t
    w = np.ones(len(P)) if weights is None else np.asarray(weights, dtype=float)
    rmsd = math.sqrt(max(float(w @ np.sum((aligned - Q) ** 2, axis=1)) / w.sum(), 0.0))
    out = pred.with_coords(aligned) if isinstance(pred, Structure) else aligned
    return out, rmsd


def pairwise_distances(coords) -> np.ndarray:
    x = _as_coords(coords)
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


# -- text serialization -----------------------------------------------------

def format_structure(s: Structure) -> str:
    lines = []
    for i in range(s.n_atoms):
        x, y, z = s.coords[i]
        lines.append(f"{i} {s.chain[i]} {s.entity[i]} {x:.17g} {y:.17g} {z:.17g} {s.weights[i]:.17g}")
    for l, m in s.bonds:
        lines.append(f"BOND {l} {m}")
    return "\n".join(lines) + "\n"


class StructureParseError(ValueError):
    def __init__(self, msg, offset):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


def parse_structure(text: str) -> Structure:
    """Inverse of :func:`format_structure`; errors carry the byte offset."""
    coords, chain, entity, weights, bonds = [], [], [], [], []
    offset = 0
    for line in text.splitlines(keepends=True):
        here = offset
        offset += len(line.encode())
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "BOND":
                if len(parts) != 3:
                    raise ValueError("BOND needs two indices")
                bonds.append((int(parts[1]), int(parts[2])))
                continue
            if bonds:
                raise ValueError("atom record after BOND records")
            if len(parts) != 7:
                raise ValueError(f"expected 7 fields, got {len(parts)}")
            if int(parts[0]) != len(coords):
                raise ValueError(f"atom index {parts[0]} out of sequence")
            chain.append(int(parts[1]))
            entity.append(parts[2])
            coords.append([float(v) for v in parts[3:6]])
            weights.append(float(parts[6]))
        except ValueError as e:
            raise StructureParseError(str(e), here) from None
    if not coords:
        raise StructureParseError("no atom records", 0)
    try:
        return Structure(np.array(coords), entity, chain,
                         np.array(bonds, dtype=int).reshape(-1, 2), np.array(weights))
    except ValidationError as e:
        raise StructureParseError(str(e), 0) from None


def write_structure(s: Structure, path):
    with open(path, "w") as f:
        f.write(format_structure(s))


def read_structure(path) -> Structure:
    with open(path) as f:
        return parse_structure(f.read())
