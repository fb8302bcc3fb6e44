"""Linear-elastic evaluation of density fields on the structured grid.

Each element gets an ersatz modulus ``E(rho) = e_min + rho * (E - e_min)``
from the mean of its nodal densities. The resulting small-strain problem is
solved with Jacobi-preconditioned conjugate gradients (or a sparse direct
factorization), and the objectives are read off the solution: maximum von
Mises stress over solid elements, material volume and, for mechanisms, the
reaction force of the output spring.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

from .field import DensityField, Mesh, Sample, SampleStatus, node_index

SENTINEL = 1e30
SOLID_THRESHOLD = 0.5


class SolverError(RuntimeError):
    """The iterative solver stopped before reaching its tolerance."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(f"no convergence after {iterations} iterations (relative residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class Material:
    youngs_modulus: float = 1.0
    poisson_ratio: float = 0.3
    e_min: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.poisson_ratio < 0.5:
            raise ValueError(f"poisson_ratio must lie in (0, 0.5), got {self.poisson_ratio}")
        if not self.youngs_modulus > self.e_min > 0.0:
            raise ValueError("need youngs_modulus > e_min > 0")


class ObjectiveSet(enum.Enum):
    STRESS_VOLUME = "stress_volume"
    STRESS_VOLUME_REACTION = "stress_volume_reaction"

    @property
    def n_objectives(self) -> int:
        return 2 if self is ObjectiveSet.STRESS_VOLUME else 3


@dataclass(frozen=True)
class Spring:
    node: int
    direction: int
    stiffness: float
    is_output: bool = False
    # +1 or -1: sign of the output displacement that counts as useful motion
    orientation: float = 1.0


@dataclass
class ProblemSpec:
    """Boundary-value problem and objective choice on a fixed grid.

    ``symmetry_planes`` holds ``(axis, side)`` pairs; nodes on that face
    (``side`` 0 = low, 1 = high) have their displacement normal to it fixed.
    ``passive_void`` optionally marks elements that are always void, which
    carves non-rectangular design domains out of the grid; ``passive_solid``
    marks elements that are always solid, such as pads under load ports.
    """

    mesh: Mesh
    material: Material = dc_field(default_factory=Material)
    fixed_dofs: list = dc_field(default_factory=list)
    loads: list = dc_field(default_factory=list)
    springs: list = dc_field(default_factory=list)
    symmetry_planes: list = dc_field(default_factory=list)
    objective_set: ObjectiveSet = ObjectiveSet.STRESS_VOLUME
    constraints: list = dc_field(default_factory=list)
    passive_void: np.ndarray | None = None
    passive_solid: np.ndarray | None = None
    name: str = "custom"

    def __post_init__(self):
        self.springs = [s if isinstance(s, Spring) else Spring(*s) for s in self.springs]
        if not self.fixed_dofs and not self.symmetry_planes:
            raise ValueError("problem needs at least one fixed DOF or symmetry plane")
        outputs = [s for s in self.springs if s.is_output]
        if self.objective_set is ObjectiveSet.STRESS_VOLUME_REACTION and len(outputs) != 1:
            raise ValueError("the reaction objective needs exactly one output spring")
        for name in ("passive_void", "passive_solid"):
            mask = getattr(self, name)
            if mask is None:
                continue
            mask = np.asarray(mask, dtype=bool).ravel()
            if mask.size != self.mesh.n_elements:
                raise ValueError(f"{name} mask does not match the element count")
            setattr(self, name, mask)
        if self.passive_void is not None and self.passive_solid is not None:
            if np.any(self.passive_void & self.passive_solid):
                raise ValueError("an element cannot be both passive void and passive solid")

    @property
    def n_dof(self) -> int:
        return self.mesh.n_nodes * self.mesh.dimensionality

    @property
    def output_spring(self) -> Spring | None:
        return next((s for s in self.springs if s.is_output), None)

    def constrained_dofs(self) -> np.ndarray:
        dim = self.mesh.dimensionality
        dofs = [node * dim + d for node, d in self.fixed_dofs]
        coords = np.rint(self.mesh.node_coordinates() / self.mesh.element_length).astype(int)
        for axis, side in self.symmetry_planes:
            level = 0 if side == 0 else self.mesh.dims[axis]
            nodes = np.flatnonzero(coords[:, axis] == level)
            dofs.extend(nodes * dim + axis)
        return np.unique(np.asarray(dofs, dtype=int))

    def supported_nodes(self) -> np.ndarray:
        return np.unique([node for node, _ in self.fixed_dofs]).astype(int)

    def load_vector(self, scale: float = 1.0) -> np.ndarray:
        f = np.zeros(self.n_dof)
        dim = self.mesh.dimensionality
        for node, d, magnitude in self.loads:
            f[node * dim + d] += scale * magnitude
        return f


@dataclass
class LinearSystem:
    K: sparse.csr_matrix  # full stiffness including springs
    f: np.ndarray
    free: np.ndarray
    element_moduli: np.ndarray
    flag: str | None = None  # "void" or "disconnected" when no solve is meaningful

    def reduced(self):
        K = self.K[self.free][:, self.free]
        return K.tocsr(), self.f[self.free]


@dataclass
class SolveResult:
    displacements: np.ndarray
    element_stress: np.ndarray
    max_von_mises: float
    volume: float
    reaction_force: float
    solver_iterations: int
    converged: bool


# -- element matrices --------------------------------------------------------

def elasticity_matrix(material: Material, dimensionality: int) -> np.ndarray:
    """Plane-stress (2D) or isotropic 3D constitutive matrix, Voigt order."""
    E, nu = material.youngs_modulus, material.poisson_ratio
    if dimensionality == 2:
        return E / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] += 2 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu
    return D


def _corners(dim):
    c = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    if dim == 2:
        return c
    return np.vstack([np.c_[c, np.zeros(4)], np.c_[c, np.ones(4)]])


def strain_displacement(element_length: float, dimensionality: int, point=None) -> np.ndarray:
    """B matrix at a local point in [0, 1]^dim (element centroid by default)."""
    dim = dimensionality
    corners = _corners(dim)
    p = np.full(dim, 0.5) if point is None else np.asarray(point, dtype=float)
    # trilinear shape-function gradients in local coordinates
    grads = np.empty((len(corners), dim))
    for a, c in enumerate(corners):
        factors = np.where(c == 1, p, 1 - p)
        signs = np.where(c == 1, 1.0, -1.0)
        for d in range(dim):
            grads[a, d] = signs[d] * np.prod(np.delete(factors, d))
    grads /= element_length
    n = len(corners)
    if dim == 2:
        B = np.zeros((3, 2 * n))
        B[0, 0::2] = grads[:, 0]
        B[1, 1::2] = grads[:, 1]
        B[2, 0::2] = grads[:, 1]
        B[2, 1::2] = grads[:, 0]
        return B
    B = np.zeros((6, 3 * n))
    for d in range(3):
        B[d, d::3] = grads[:, d]
    # engineering shear strains: yz, xz, xy
    for row, (i, j) in zip(range(3, 6), ((1, 2), (0, 2), (0, 1))):
        B[row, i::3] = grads[:, j]
        B[row, j::3] = grads[:, i]
    return B


@lru_cache(maxsize=16)
def _element_stiffness_cached(E, nu, e_min, element_length, dimensionality):
    material = Material(E, nu, e_min)
    D = elasticity_matrix(material, dimensionality)
    g = 0.5 + np.array([-1.0, 1.0]) / (2 * np.sqrt(3.0))
    weight = element_length**dimensionality / 2**dimensionality
    K = 0.0
    for point in itertools.product(g, repeat=dimensionality):
        B = strain_displacement(element_length, dimensionality, point)
        K = K + weight * B.T @ D @ B
    K = 0.5 * (K + K.T)
    K.setflags(write=False)
    return K


def element_stiffness(material: Material, element_length: float, dimensionality: int) -> np.ndarray:
    """Bilinear quad (plane stress, unit thickness) or trilinear hex stiffness."""
    if dimensionality not in (2, 3):
        raise ValueError(f"dimensionality must be 2 or 3, got {dimensionality}")
    return _element_stiffness_cached(material.youngs_modulus, material.poisson_ratio,
                                     material.e_min, float(element_length), dimensionality)


def element_dofs(mesh: Mesh) -> np.ndarray:
    dim = mesh.dimensionality
    nodes = mesh.element_nodes()
    return (nodes[:, :, None] * dim + np.arange(dim)).reshape(len(nodes), -1)


# -- assembly and solution ---------------------------------------------------

def element_density(field: DensityField, spec: ProblemSpec) -> np.ndarray:
    rho = np.clip(field.element_densities(), 0.0, 1.0)
    if spec.passive_void is not None:
        rho = np.where(spec.passive_void, 0.0, rho)
    if spec.passive_solid is not None:
        rho = np.where(spec.passive_solid, 1.0, rho)
    return rho


def solid_connected(rho: np.ndarray, spec: ProblemSpec) -> bool:
    """Do solid elements link every loaded node to some supported node?"""
    mesh = spec.mesh
    solid = np.flatnonzero(rho >= SOLID_THRESHOLD)
    supports = spec.supported_nodes()
    loaded = np.unique([node for node, _, m in spec.loads if m != 0]).astype(int)
    if solid.size == 0:
        return False
    if supports.size == 0 or loaded.size == 0:
        return True
    conn = mesh.element_nodes()[solid]
    n_solid = len(solid)
    # bipartite graph: solid elements and nodes; elements sharing a node are linked
    rows = np.repeat(np.arange(n_solid), conn.shape[1])
    cols = n_solid + conn.ravel()
    size = n_solid + mesh.n_nodes
    graph = sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(size, size))
    _, labels = csgraph.connected_components(graph, directed=False)
    touched = np.zeros(mesh.n_nodes, dtype=bool)
    touched[conn.ravel()] = True
    if not touched[loaded].all() or not touched[supports].any():
        return False
    support_labels = set(labels[n_solid + supports[touched[supports]]])
    return all(labels[n_solid + node] in support_labels for node in loaded)


def stiffness_matrix(spec: ProblemSpec, moduli: np.ndarray, extra_springs=()) -> sparse.csr_matrix:
    """Global stiffness for given element moduli, springs on the diagonal."""
    mesh = spec.mesh
    mat = spec.material
    KE = element_stiffness(Material(1.0, mat.poisson_ratio, mat.e_min / mat.youngs_modulus),
                           mesh.element_length, mesh.dimensionality)
    edof = element_dofs(mesh)
    n = edof.shape[1]
    rows = np.repeat(edof, n, axis=1).ravel()
    cols = np.tile(edof, (1, n)).ravel()
    vals = (np.asarray(moduli, dtype=float)[:, None] * KE.ravel()[None, :]).ravel()
    K = sparse.coo_matrix((vals, (rows, cols)), shape=(spec.n_dof, spec.n_dof)).tocsr()
    springs = list(spec.springs) + list(extra_springs)
    if springs:
        diag = np.zeros(spec.n_dof)
        dim = mesh.dimensionality
        for s in springs:
            diag[s.node * dim + s.direction] += s.stiffness
        K = (K + sparse.diags(diag)).tocsr()
    return K


def free_dofs(spec: ProblemSpec) -> np.ndarray:
    return np.setdiff1d(np.arange(spec.n_dof), spec.constrained_dofs())


def assemble(field: DensityField, spec: ProblemSpec, load_scale: float = 1.0) -> LinearSystem:
    """Global stiffness with springs, load vector, and the free DOF set."""
    if field.mesh != spec.mesh:
        raise ValueError("field and problem live on different meshes")
    mat = spec.material
    rho = element_density(field, spec)
    moduli = mat.e_min + rho * (mat.youngs_modulus - mat.e_min)
    K = stiffness_matrix(spec, moduli)
    flag = None
    design = np.ones(rho.size, dtype=bool)
    if spec.passive_solid is not None:
        design &= ~spec.passive_solid
    # passive pads alone do not make a structure
    if not np.any(rho[design] >= SOLID_THRESHOLD):
        flag = "void"
    elif not solid_connected(rho, spec):
        flag = "disconnected"
    return LinearSystem(K, spec.load_vector(load_scale), free_dofs(spec), moduli, flag)


def solve(K, f, method: str = "cg", rtol: float = 1e-8, max_iter: int | None = None, x0=None):
    """Solve ``K u = f``. Returns ``(u, iterations)``.

    ``"cg"`` is conjugate gradients with a Jacobi preconditioner, started
    from ``x0`` (zero by default) and stopped at relative residual ``rtol``;
    ``SolverError`` after ``max_iter`` iterations (default ten times the
    system size). ``"direct"`` uses a sparse LU factorization.
    """
    K = sparse.csr_matrix(K)
    f = np.asarray(f, dtype=float)
    n = f.size
    if method == "direct":
        return np.asarray(splinalg.spsolve(K.tocsc(), f)).reshape(n), 0
    if method != "cg":
        raise ValueError(f"unknown solver {method!r}")
    max_iter = 10 * n if max_iter is None else max_iter
    norm_f = np.linalg.norm(f)
    u = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if norm_f == 0:
        return np.zeros(n), 0
    inv_diag = 1.0 / K.diagonal()
    r = f - K @ u if x0 is not None else f.copy()
    if np.linalg.norm(r) <= rtol * norm_f:
        return u, 0
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Kp = K @ p
        alpha = rz / (p @ Kp)
        u += alpha * p
        r -= alpha * Kp
        if np.linalg.norm(r) <= rtol * norm_f:
            return u, it
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(float(np.linalg.norm(r) / norm_f), max_iter)


def solve_system(system: LinearSystem, method: str = "cg", rtol: float = 1e-8, max_iter=None):
    K, f = system.reduced()
    u_free, iterations = solve(K, f, method, rtol, max_iter)
    u = np.zeros(system.f.size)
    u[system.free] = u_free
    return u, iterations


# -- post-processing ---------------------------------------------------------

def von_mises_from_stress(stress) -> np.ndarray:
    """Von Mises measure of Voigt stress rows (3 entries in 2D, 6 in 3D)."""
    s = np.atleast_2d(np.asarray(stress, dtype=float))
    if s.shape[1] == 3:
        sx, sy, txy = s.T
        return np.sqrt(sx**2 - sx * sy + sy**2 + 3 * txy**2)
    sx, sy, sz, tyz, txz, txy = s.T
    return np.sqrt(0.5 * ((sx - sy) ** 2 + (sy - sz) ** 2 + (sz - sx) ** 2)
                   + 3 * (tyz**2 + txz**2 + txy**2))


def element_stresses(u: np.ndarray, field: DensityField, spec: ProblemSpec) -> np.ndarray:
    """Centroid stress of every element, using its ersatz modulus."""
    mesh = spec.mesh
    mat = spec.material
    rho = element_density(field, spec)
    moduli = mat.e_min + rho * (mat.youngs_modulus - mat.e_min)
    D0 = elasticity_matrix(Material(1.0, mat.poisson_ratio, mat.e_min / mat.youngs_modulus),
                           mesh.dimensionality)
    B = strain_displacement(mesh.element_length, mesh.dimensionality)
    strain = u[element_dofs(mesh)] @ B.T
    return moduli[:, None] * (strain @ D0.T)


def von_mises(u: np.ndarray, field: DensityField, spec: ProblemSpec):
    """Per-element von Mises stress and its maximum over solid elements."""
    vm = von_mises_from_stress(element_stresses(u, field, spec))
    solid = element_density(field, spec) >= SOLID_THRESHOLD
    if not solid.any():
        raise ValueError("no solid elements to take a maximum over")
    return vm, float(vm[solid].max())


def volume(field: DensityField, mesh: Mesh | None = None, passive_void=None, passive_solid=None) -> float:
    """Sum of element densities times element measure, passive regions applied."""
    mesh = field.mesh if mesh is None else mesh
    rho = np.clip(field.element_densities(), 0.0, 1.0)
    if passive_void is not None:
        rho = np.where(passive_void, 0.0, rho)
    if passive_solid is not None:
        rho = np.where(passive_solid, 1.0, rho)
    return float(rho.sum() * mesh.element_measure)


def problem_volume(field: DensityField, spec: ProblemSpec) -> float:
    return float(element_density(field, spec).sum() * spec.mesh.element_measure)


def reaction_force(u: np.ndarray, spec: ProblemSpec) -> float:
    spring = spec.output_spring
    if spring is None:
        return 0.0
    dof = spring.node * spec.mesh.dimensionality + spring.direction
    return float(spring.stiffness * spring.orientation * u[dof])


def analyze(field: DensityField, spec: ProblemSpec, solver: str = "cg",
            rtol: float = 1e-8, load_scale: float = 1.0) -> SolveResult | str:
    """Full solve; returns the void/disconnected flag instead when there is nothing to solve."""
    system = assemble(field, spec, load_scale)
    if system.flag is not None:
        return system.flag
    u, iterations = solve_system(system, solver, rtol)
    vm, vm_max = von_mises(u, field, spec)
    return SolveResult(
        displacements=u,
        element_stress=vm,
        max_von_mises=vm_max,
        volume=problem_volume(field, spec),
        reaction_force=reaction_force(u, spec),
        solver_iterations=iterations,
        converged=True,
    )


def objectives_from(result: SolveResult, spec: ProblemSpec) -> np.ndarray:
    if spec.objective_set is ObjectiveSet.STRESS_VOLUME:
        return np.array([result.max_von_mises, result.volume])
    return np.array([result.max_von_mises, result.volume, -result.reaction_force])


def evaluate(field: DensityField, spec: ProblemSpec, solver: str = "cg", rtol: float = 1e-8,
             load_scale: float = 1.0) -> tuple[np.ndarray, SampleStatus, dict]:
    """Objective vector, status and diagnostics for one field.

    Void or disconnected designs get ``SENTINEL`` in every objective and
    status INFEASIBLE. If conjugate gradients stall (floating islands held
    only by void stiffness), the solve is repeated with the direct solver;
    only if that fails too is the sample FAILED, with NaN objectives.
    """
    n_obj = spec.objective_set.n_objectives
    info = {}
    try:
        try:
            result = analyze(field, spec, solver, rtol, load_scale)
        except SolverError as exc:
            if solver == "direct":
                raise
            info["fallback"] = str(exc)
            result = analyze(field, spec, "direct", rtol, load_scale)
    except (SolverError, np.linalg.LinAlgError, RuntimeError) as exc:
        info["error"] = str(exc)
        return np.full(n_obj, np.nan), SampleStatus.FAILED, info
    if isinstance(result, str):
        return np.full(n_obj, SENTINEL), SampleStatus.INFEASIBLE, {"flag": result}
    objs = objectives_from(result, spec)
    if not np.all(np.isfinite(objs)):
        info["error"] = "non-finite objectives"
        return np.full(n_obj, np.nan), SampleStatus.FAILED, info
    info["iterations"] = result.solver_iterations
    return objs, SampleStatus.OK, info


def evaluate_sample(sample: Sample, spec: ProblemSpec, solver: str = "cg") -> Sample:
    objs, status, info = evaluate(sample.field, spec, solver)
    sample.objectives, sample.status = objs, status
    sample.info.update(info)
    return sample


# -- built-in problems -------------------------------------------------------

def _pad(mesh, lo, hi):
    """Element mask of the box ``lo <= element index < hi`` (per axis)."""
    idx = np.rint(mesh.element_centers() / mesh.element_length - 0.5).astype(int)
    return np.all((idx >= np.asarray(lo)) & (idx < np.asarray(hi)), axis=1)


def _trapezoid(n_segments):
    return [0.5] + [1.0] * (n_segments - 1) + [0.5]


def _port(mesh, fixed_coord, axis_values, weights):
    """Nodes and weights of a port; ``fixed_coord`` maps axis -> index."""
    nodes, ws = [], []
    for combo, w in zip(axis_values, weights):
        coords = [0] * mesh.dimensionality
        for axis, value in fixed_coord.items():
            coords[axis] = value
        for axis, value in combo.items():
            coords[axis] = value
        nodes.append(node_index(mesh, coords))
        ws.append(w)
    ws = np.asarray(ws, dtype=float)
    return nodes, ws / ws.sum()


def mech2d(dims=(40, 20), element_length: float = 0.01, load: float = 0.08,
           spring: float = 10.0) -> ProblemSpec:
    """Displacement-inverter half model.

    The symmetry line is the bottom edge. The input port sits at its left
    end and is pushed in +x. The output port at its right end carries a
    spring along x; useful motion is -x. The top of the left edge is
    clamped, and both ports sit on small passive-solid pads.
    """
    mesh = Mesh(dims, element_length)
    nx, ny = mesh.dims
    port = max(1, ny // 10)
    in_nodes, in_w = _port(mesh, {0: 0}, [{1: j} for j in range(port + 1)],
                           _trapezoid(port))
    loads = [(n, 0, load * w) for n, w in zip(in_nodes, in_w)]
    out = node_index(mesh, (nx, 0))
    fixed_nodes = [node_index(mesh, (0, j)) for j in range(ny - port, ny + 1)]
    pads = _pad(mesh, (0, 0), (port, port)) | _pad(mesh, (nx - port, 0), (nx, port))
    return ProblemSpec(
        mesh=mesh,
        fixed_dofs=[(n, d) for n in fixed_nodes for d in (0, 1)],
        loads=loads,
        springs=[Spring(out, 0, spring, True, -1.0)],
        symmetry_planes=[(1, 0)],
        objective_set=ObjectiveSet.STRESS_VOLUME_REACTION,
        passive_solid=pads,
        name="mech2d",
    )


def lbeam2d(dims=(40, 40), element_length: float = 0.01, load: float = 0.002,
            arm_fraction: float = 0.4) -> ProblemSpec:
    """L-shaped bracket.

    The upper-right block is passive void. The top of the vertical arm is
    clamped, and the tip of the horizontal arm carries a downward load.
    """
    mesh = Mesh(dims, element_length)
    nx, ny = mesh.dims
    ax = max(1, int(round(arm_fraction * nx)))
    ay = max(1, int(round(arm_fraction * ny)))
    centers = np.rint(mesh.element_centers() / element_length - 0.5).astype(int)
    passive = (centers[:, 0] >= ax) & (centers[:, 1] >= ay)
    clamp = [node_index(mesh, (i, ny)) for i in range(ax + 1)]
    port = max(1, ay // 8)
    tip_nodes, tip_w = _port(mesh, {0: nx}, [{1: j} for j in range(ay - port, ay + 1)],
                             _trapezoid(port))
    return ProblemSpec(
        mesh=mesh,
        fixed_dofs=[(n, d) for n in clamp for d in (0, 1)],
        loads=[(n, 1, -load * w) for n, w in zip(tip_nodes, tip_w)],
        objective_set=ObjectiveSet.STRESS_VOLUME,
        passive_void=passive,
        passive_solid=_pad(mesh, (nx - port, ay - port), (nx, ay)),
        name="lbeam2d",
    )


def mech3d_small(dims=(16, 8, 8), element_length: float = 0.01, load: float = 0.08,
                 spring: float = 10.0) -> ProblemSpec:
    """Quarter model of a 3D displacement inverter.

    Symmetry planes are y = 0 and z = 0. Input and output ports lie on
    their intersection line, and the top strip of the x = 0 face is
    clamped.
    """
    mesh = Mesh(dims, element_length)
    nx, ny, nz = mesh.dims
    port = max(1, ny // 8)
    combos, weights = [], []
    for j in range(port + 1):
        for k in range(port + 1):
            combos.append({1: j, 2: k})
            weights.append(_trapezoid(port)[j] * _trapezoid(port)[k])
    in_nodes, in_w = _port(mesh, {0: 0}, combos, weights)
    clamp = [node_index(mesh, (0, j, k)) for j in range(ny - port, ny + 1) for k in range(nz + 1)]
    return ProblemSpec(
        mesh=mesh,
        fixed_dofs=[(n, d) for n in clamp for d in (0, 1, 2)],
        loads=[(n, 0, load * w) for n, w in zip(in_nodes, in_w)],
        springs=[Spring(node_index(mesh, (nx, 0, 0)), 0, spring, True, -1.0)],
        symmetry_planes=[(1, 0), (2, 0)],
        objective_set=ObjectiveSet.STRESS_VOLUME_REACTION,
        passive_solid=_pad(mesh, (0, 0, 0), (port, port, port)) | _pad(mesh, (nx - port, 0, 0), (nx, port, port)),
        name="mech3d_small",
    )


PROBLEMS = {"mech2d": mech2d, "lbeam2d": lbeam2d, "mech3d_small": mech3d_small}


def builtin_problem(name: str, **kwargs) -> ProblemSpec:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(**kwargs)
