"""Random planar truss generation and finite-element modal analysis.

Trusses are sampled inside a trapezoidal domain: the four corners are always
present, interior joints are drawn uniformly, and members come from a Delaunay
triangulation of the joint set.  Bar elements (axial stiffness, lumped mass)
are assembled into reduced system matrices and the generalized eigenproblem
K phi = omega^2 M phi yields natural frequencies and mode shapes.  Modal
damping ratios follow the Rayleigh model zeta = a0/(2 w) + a1 w / 2.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay, QhullError


class GenerationError(RuntimeError):
    """Truss generation could not produce a valid structure."""


class AssemblyError(ValueError):
    """System matrices could not be assembled from the given truss."""


class DampingRangeError(ValueError):
    """Rayleigh coefficients produce a damping ratio outside (0, 1)."""


DEFAULT_CORNERS = ((0.0, 0.0), (10.0, 0.0), (8.0, 3.0), (2.0, 3.0))

MAX_GEOMETRY_ATTEMPTS = 100
MAX_RAYLEIGH_ATTEMPTS = 50

_MIN_NODE_SPACING = 0.15  # m, keeps Delaunay well conditioned


@dataclass(frozen=True)
class TrussGenConfig:
    """Sampling ranges for one population of random trusses."""

    corners: tuple[tuple[float, float], ...] = DEFAULT_CORNERS
    n_nodes: tuple[int, int] = (8, 30)
    youngs_modulus: tuple[float, float] = (180e9, 220e9)  # Pa
    area: tuple[float, float] = (5e-4, 2e-3)  # m^2
    density: tuple[float, float] = (7600.0, 8100.0)  # kg/m^3
    rayleigh_a0: tuple[float, float] = (0.5, 4.0)  # 1/s
    rayleigh_a1: tuple[float, float] = (2e-5, 2e-4)  # s
    support_nodes: tuple[int, ...] = (0, 1)
    n_modes: int = 4
    seed: int = 0
    damping_window: tuple[float, float] = (0.005, 0.05)

    def validate(self) -> None:
        if len(self.corners) != 4:
            raise ValueError("trapezoid needs exactly 4 corners")
        if abs(_polygon_area(np.asarray(self.corners, float))) < 1e-9:
            raise GenerationError("degenerate trapezoid: zero area")
        if self.n_nodes[0] < 4 or self.n_nodes[1] < self.n_nodes[0]:
            raise ValueError("node-count range must satisfy 4 <= N_min <= N_max")
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        for name in ("youngs_modulus", "area", "density", "rayleigh_a0", "rayleigh_a1"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise ValueError(f"{name} range must be strictly positive and ordered")
        if len(set(self.support_nodes)) < 2:
            raise ValueError("at least 2 supported nodes are required")
        if any(not 0 <= s < 4 for s in self.support_nodes):
            raise ValueError("support indices must address the 4 corner nodes")
        if not (0.0 < self.damping_window[0] < self.damping_window[1] < 1.0):
            raise ValueError("damping window must satisfy 0 < lo < hi < 1")


@dataclass
class TrussModel:
    """Geometry, connectivity, materials and supports of one truss."""

    nodes: np.ndarray  # (N, 2) m
    elements: np.ndarray  # (E, 2) int, i < j, unique
    youngs_modulus: np.ndarray  # (E,) Pa
    area: np.ndarray  # (E,) m^2
    density: np.ndarray  # (E,) kg/m^3
    support_mask: np.ndarray  # (N, 2) bool, True = fixed DOF
    rayleigh_a0: float
    rayleigh_a1: float

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def n_elements(self) -> int:
        return int(self.elements.shape[0])

    def validate(self) -> None:
        n = self.n_nodes
        if self.elements.min(initial=0) < 0 or self.elements.max(initial=-1) >= n:
            raise ValueError("element index out of range")
        if len({tuple(sorted(e)) for e in self.elements.tolist()}) != self.n_elements:
            raise ValueError("duplicate elements")
        lengths = element_lengths(self.nodes, self.elements)
        if np.any(lengths <= 0.0):
            raise ValueError("zero-length element")
        if not _is_connected(n, self.elements):
            raise ValueError("element graph is disconnected")


@dataclass
class SystemMatrices:
    """Reduced mass/stiffness matrices with supported DOFs eliminated."""

    mass: np.ndarray  # (n_dof, n_dof) kg
    stiffness: np.ndarray  # (n_dof, n_dof) N/m
    dof_map: np.ndarray  # (N, 2) int, row index of (node, direction), -1 if fixed

    @property
    def n_dof(self) -> int:
        return int(self.mass.shape[0])


@dataclass
class ModalSolution:
    """First M modes of a truss: frequencies, damping, per-node shapes.

    ``shapes`` holds one scalar per node per mode (the vertical displacement
    component) with unit-norm columns and the largest-magnitude entry of each
    column made positive.  ``dof_vectors`` keeps the mass-normalized free-DOF
    eigenvectors used for response synthesis.
    """

    freqs: np.ndarray  # (M,) Hz, ascending
    zetas: np.ndarray  # (M,) dimensionless
    shapes: np.ndarray  # (N, M)
    omegas: np.ndarray  # (M,) rad/s
    dof_vectors: np.ndarray  # (n_dof, M)
    dof_map: np.ndarray  # (N, 2)

    @property
    def n_modes(self) -> int:
        return int(self.freqs.shape[0])


def _polygon_area(corners: np.ndarray) -> float:
    x, y = corners[:, 0], corners[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _points_in_polygon(points: np.ndarray, corners: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Inside test for a convex polygon, boundary counts as inside."""
    poly = corners if _polygon_area(corners) > 0 else corners[::-1]
    inside = np.ones(len(points), dtype=bool)
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        cross = (b[0] - a[0]) * (points[:, 1] - a[1]) - (b[1] - a[1]) * (points[:, 0] - a[0])
        inside &= cross >= -tol
    return inside


def _is_connected(n_nodes: int, elements: np.ndarray) -> bool:
    if n_nodes == 0:
        return False
    adj = np.zeros((n_nodes, n_nodes), dtype=np.int8)
    adj[elements[:, 0], elements[:, 1]] = 1
    adj[elements[:, 1], elements[:, 0]] = 1
    n_comp, _ = connected_components(adj, directed=False)
    return int(n_comp) == 1


def element_lengths(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    d = nodes[elements[:, 1]] - nodes[elements[:, 0]]
    return np.hypot(d[:, 0], d[:, 1])


def _delaunay_edges(points: np.ndarray) -> np.ndarray:
    tri = Delaunay(points)
    edges = set()
    for simplex in tri.simplices:
        for a, b in ((0, 1), (1, 2), (0, 2)):
            i, j = int(simplex[a]), int(simplex[b])
            edges.add((min(i, j), max(i, j)))
    return np.array(sorted(edges), dtype=np.int64)


def generate_truss(seed: int, cfg: TrussGenConfig) -> TrussModel:
    """Sample one connected random truss; deterministic for a given seed."""
    cfg.validate()
    corners = np.asarray(cfg.corners, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x7472]))
    lo, hi = corners.min(axis=0), corners.max(axis=0)

    for _ in range(MAX_GEOMETRY_ATTEMPTS):
        n_total = int(rng.integers(cfg.n_nodes[0], cfg.n_nodes[1] + 1))
        interior = []
        guard = 0
        while len(interior) < n_total - 4 and guard < 10000:
            guard += 1
            p = rng.uniform(lo, hi)
            if not _points_in_polygon(p[None, :], corners)[0]:
                continue
            others = np.vstack([corners] + interior) if interior else corners
            if np.min(np.hypot(*(others - p).T)) < _MIN_NODE_SPACING:
                continue
            interior.append(p)
        if len(interior) < n_total - 4:
            continue
        nodes = np.vstack([corners] + interior)

        try:
            edges = _delaunay_edges(nodes)
        except QhullError:
            continue
        mids = 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])
        edges = edges[_points_in_polygon(mids, corners)]
        if edges.size == 0 or not _is_connected(len(nodes), edges):
            continue

        n_el = len(edges)
        model = TrussModel(
            nodes=nodes,
            elements=edges,
            youngs_modulus=rng.uniform(*cfg.youngs_modulus, size=n_el),
            area=rng.uniform(*cfg.area, size=n_el),
            density=rng.uniform(*cfg.density, size=n_el),
            support_mask=_support_mask(len(nodes), cfg.support_nodes),
            rayleigh_a0=float(rng.uniform(*cfg.rayleigh_a0)),
            rayleigh_a1=float(rng.uniform(*cfg.rayleigh_a1)),
        )
        model.validate()
        return model

    raise GenerationError(
        f"no connected truss found after {MAX_GEOMETRY_ATTEMPTS} attempts (seed={seed})"
    )


def _support_mask(n_nodes: int, support_nodes: tuple[int, ...]) -> np.ndarray:
    mask = np.zeros((n_nodes, 2), dtype=bool)
    for s in support_nodes:
        mask[s, :] = True  # pinned: both translations fixed
    return mask


def assemble_system(truss: TrussModel) -> SystemMatrices:
    """Assemble reduced K, M for 2D bar elements with lumped mass."""
    n = truss.n_nodes
    ndof = 2 * n
    K = np.zeros((ndof, ndof))
    m_diag = np.zeros(ndof)

    for e in range(truss.n_elements):
        i, j = truss.elements[e]
        dx, dy = truss.nodes[j] - truss.nodes[i]
        L = float(np.hypot(dx, dy))
        if L <= 0.0:
            raise AssemblyError(f"zero-length element {i}-{j}")
        c, s = dx / L, dy / L
        coeff = truss.youngs_modulus[e] * truss.area[e] / L
        d = np.array([-c, -s, c, s])
        k_el = coeff * np.outer(d, d)  # exactly symmetric by construction
        dofs = [2 * i, 2 * i + 1, 2 * j, 2 * j + 1]
        K[np.ix_(dofs, dofs)] += k_el
        half_mass = 0.5 * truss.density[e] * truss.area[e] * L
        m_diag[2 * i : 2 * i + 2] += half_mass
        m_diag[2 * j : 2 * j + 2] += half_mass

    if not np.all(np.isfinite(K)):
        raise AssemblyError("non-finite stiffness entries")

    fixed = truss.support_mask.reshape(-1)
    if int(fixed.sum()) < 3:
        raise AssemblyError("insufficient supports: rigid-body modes remain")
    free = np.flatnonzero(~fixed)

    K_red = K[np.ix_(free, free)]
    M_red = np.diag(m_diag[free])
    try:
        scipy.linalg.cholesky(K_red)
    except scipy.linalg.LinAlgError as exc:
        raise AssemblyError("stiffness not positive definite: mechanism detected") from exc

    dof_map = np.full((n, 2), -1, dtype=np.int64)
    dof_map.reshape(-1)[free] = np.arange(free.size)
    return SystemMatrices(mass=M_red, stiffness=K_red, dof_map=dof_map)


def solve_modes(sys: SystemMatrices, n_modes: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smallest ``n_modes`` of K phi = w^2 M phi.

    Returns (freqs_hz, omegas, vectors) with mass-normalized eigenvectors as
    columns, ascending frequency order.
    """
    if n_modes > sys.n_dof:
        raise ValueError(f"n_modes={n_modes} exceeds {sys.n_dof} retained DOFs")
    if not (np.all(np.isfinite(sys.stiffness)) and np.all(np.isfinite(sys.mass))):
        raise ValueError("non-finite system matrices")
    w2, vec = scipy.linalg.eigh(sys.stiffness, sys.mass)
    w2 = w2[:n_modes]
    vec = vec[:, :n_modes]
    if np.any(w2 <= 0.0):
        raise ValueError("non-positive eigenvalue: structure is not fully restrained")
    omegas = np.sqrt(w2)
    return omegas / (2.0 * np.pi), omegas, vec


def node_shapes_from_vectors(vectors: np.ndarray, dof_map: np.ndarray) -> np.ndarray:
    """Extract per-node vertical components, unit-normalize, fix sign.

    Sign convention: the largest-magnitude entry of every column is positive.
    Returns (N, M); raises if a mode carries no usable vertical motion.
    """
    n, m = dof_map.shape[0], vectors.shape[1]
    shapes = np.zeros((n, m))
    ydofs = dof_map[:, 1]
    has_y = ydofs >= 0
    shapes[has_y, :] = vectors[ydofs[has_y], :]
    norms = np.linalg.norm(shapes, axis=0)
    full = np.linalg.norm(vectors, axis=0)
    if np.any(norms < 1e-4 * full):
        raise GenerationError("mode with negligible vertical motion")
    shapes = shapes / norms
    flip = shapes[np.abs(shapes).argmax(axis=0), np.arange(m)] < 0
    shapes[:, flip] *= -1.0
    return shapes


def rayleigh_zeta(a0: float, a1: float, omegas: np.ndarray) -> np.ndarray:
    """Raw Rayleigh formula zeta = a0/(2 w) + a1 w / 2, unvalidated."""
    omegas = np.asarray(omegas, dtype=np.float64)
    if np.any(omegas <= 0.0):
        raise ValueError("omegas must be strictly positive")
    return a0 / (2.0 * omegas) + a1 * omegas / 2.0


def assign_damping(a0: float, a1: float, omegas: np.ndarray) -> np.ndarray:
    """Rayleigh modal damping, validated to lie strictly inside (0, 1)."""
    zetas = rayleigh_zeta(a0, a1, omegas)
    if np.any(zetas <= 0.0) or np.any(zetas >= 1.0):
        raise DampingRangeError("damping ratio outside (0, 1); resample (a0, a1)")
    return zetas


def sample_rayleigh(
    rng: np.random.Generator, omegas: np.ndarray, cfg: TrussGenConfig
) -> tuple[float, float, np.ndarray]:
    """Draw (a0, a1) until all modal zetas fall in the configured window."""
    lo, hi = cfg.damping_window
    for _ in range(MAX_RAYLEIGH_ATTEMPTS):
        a0 = float(rng.uniform(*cfg.rayleigh_a0))
        a1 = float(rng.uniform(*cfg.rayleigh_a1))
        try:
            zetas = assign_damping(a0, a1, omegas)
        except DampingRangeError:
            continue
        if np.all((zetas >= lo) & (zetas <= hi)):
            return a0, a1, zetas
    raise GenerationError(
        f"no Rayleigh draw matched the damping window after {MAX_RAYLEIGH_ATTEMPTS} tries"
    )


def analyze(truss: TrussModel, n_modes: int) -> ModalSolution:
    """Full modal analysis of one truss: assemble, solve, extract, damp."""
    sys = assemble_system(truss)
    freqs, omegas, vectors = solve_modes(sys, n_modes)
    shapes = node_shapes_from_vectors(vectors, sys.dof_map)
    # keep dof vectors sign-consistent with the per-node scalar shapes
    ydofs = sys.dof_map[:, 1]
    has_y = ydofs >= 0
    raw = vectors[ydofs[has_y], :]
    agree = np.sign(np.sum(raw * shapes[has_y, :], axis=0))
    vectors = vectors * np.where(agree == 0, 1.0, agree)
    zetas = assign_damping(truss.rayleigh_a0, truss.rayleigh_a1, omegas)
    return ModalSolution(
        freqs=freqs,
        zetas=zetas,
        shapes=shapes,
        omegas=omegas,
        dof_vectors=vectors,
        dof_map=sys.dof_map,
    )


def with_damping(truss: TrussModel, a0: float, a1: float) -> TrussModel:
    return replace(truss, rayleigh_a0=a0, rayleigh_a1=a1)
