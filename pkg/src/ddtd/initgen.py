"""Initial material distributions from easy low-fidelity problems.

Density-based topology optimization (SIMP with a density filter and
optimality-criteria updates) is run over a sweep of volume fractions and,
for mechanisms, output-spring stiffness multipliers. Element results are
averaged to nodes, normalized with the level-set profile, and shifted so the
normalized field keeps the requested volume. A smoothed random-blob
generator is available as a cheaper alternative.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from . import fem
from .field import DensityField, Mesh
from .levelset import normalize_field


class ConvergenceWarning(UserWarning):
    """SIMP stopped at the iteration cap before the design settled."""


@dataclass
class LowFiSpec:
    base: fem.ProblemSpec
    volume_fraction: float
    penalization: float = 3.0
    filter_radius: float = 1.5  # in element lengths
    max_iterations: int = 100
    move_limit: float = 0.2
    spring_multiplier: float = 1.0
    tolerance: float = 1e-2  # max element change that counts as converged
    band: float = 0.01  # half-width h of the normalization profile

    def __post_init__(self):
        if not 0.0 < self.volume_fraction < 1.0:
            raise ValueError(f"volume_fraction must lie in (0, 1), got {self.volume_fraction}")
        if self.penalization < 1.0:
            raise ValueError("penalization must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class SimpResult:
    field: DensityField
    element_densities: np.ndarray
    objective: float
    iterations: int
    converged: bool
    history: list = dc_field(default_factory=list)


def density_filter(mesh: Mesh, radius: float) -> sparse.csr_matrix:
    """Row-normalized linear hat filter over element centers (radius in elements)."""
    centers = mesh.element_centers() / mesh.element_length
    tree = cKDTree(centers)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    i = np.r_[np.arange(len(centers)), pairs[:, 0], pairs[:, 1]]
    j = np.r_[np.arange(len(centers)), pairs[:, 1], pairs[:, 0]]
    w = radius - np.linalg.norm(centers[i] - centers[j], axis=1)
    H = sparse.coo_matrix((w, (i, j)), shape=(len(centers),) * 2).tocsr()
    return sparse.diags(1.0 / np.asarray(H.sum(axis=1)).ravel()) @ H


def element_to_nodal(mesh: Mesh, rho_e: np.ndarray) -> np.ndarray:
    """Average of the densities of the elements around each node."""
    conn = mesh.element_nodes()
    total = np.zeros(mesh.n_nodes)
    count = np.zeros(mesh.n_nodes)
    np.add.at(total, conn.ravel(), np.repeat(rho_e, conn.shape[1]))
    np.add.at(count, conn.ravel(), 1.0)
    return total / count


def _design_measure(spec: fem.ProblemSpec) -> float:
    active = spec.mesh.n_elements if spec.passive_void is None else int((~spec.passive_void).sum())
    return active * spec.mesh.element_measure


def match_volume(nodal: np.ndarray, spec: fem.ProblemSpec, target_fraction: float,
                 band: float = 0.01, iterations: int = 40) -> DensityField:
    """Normalize ``nodal + shift`` with the shift bisected to hit the target volume."""
    mesh = spec.mesh
    target = target_fraction * _design_measure(spec)

    def normalized(shift):
        return normalize_field(DensityField(mesh, np.clip(nodal + shift, 0.0, 1.0)), band)

    lo, hi = -1.0, 1.0
    best = None
    tol = 1e-4 * target
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        cand = normalized(mid)
        vol = fem.problem_volume(cand, spec)
        if best is None or abs(vol - target) < best[0]:
            best = (abs(vol - target), cand)
        if best[0] <= tol:
            break
        if vol < target:
            lo = mid
        else:
            hi = mid
    return best[1]


def _mechanism_springs(spec: fem.ProblemSpec, multiplier: float):
    """Output spring scaled by ``multiplier``; input springs of the nominal output stiffness."""
    out = spec.output_spring
    springs = [replace(s, stiffness=s.stiffness * multiplier) if s.is_output else s for s in spec.springs]
    total = sum(abs(m) for _, _, m in spec.loads)
    k_in = out.stiffness
    extra = [fem.Spring(node, d, k_in * abs(m) / total) for node, d, m in spec.loads if m != 0]
    return springs, extra


def simp_optimize(spec: LowFiSpec, seed: int | None = 0) -> SimpResult:
    """Density-filtered SIMP with optimality-criteria updates.

    Compliance is minimized for structures; for mechanisms (problems with
    an output spring) the useful output displacement is maximized, with an
    input spring of matching stiffness on the loaded nodes. ``seed`` adds a
    small deterministic perturbation to the uniform starting design.
    """
    base = spec.base
    mesh = base.mesh
    mat = base.material
    p = spec.penalization
    mechanism = base.output_spring is not None
    if mechanism:
        springs, extra = _mechanism_springs(base, spec.spring_multiplier)
        problem = replace(base, springs=springs)
    else:
        problem, extra = base, []
    void = np.zeros(mesh.n_elements, bool) if base.passive_void is None else base.passive_void
    solid = np.zeros(mesh.n_elements, bool) if base.passive_solid is None else base.passive_solid
    domain = ~void
    free_el = domain & ~solid
    linear = _LinearSolver(mesh.dimensionality)

    H = density_filter(mesh, spec.filter_radius)
    KE = fem.element_stiffness(fem.Material(1.0, mat.poisson_ratio, mat.e_min / mat.youngs_modulus),
                               mesh.element_length, mesh.dimensionality)
    edof = fem.element_dofs(mesh)
    free = fem.free_dofs(problem)
    f = problem.load_vector()
    if mechanism:
        out = problem.output_spring
        target = np.zeros(problem.n_dof)
        # minimize -orientation * u_out
        target[out.node * mesh.dimensionality + out.direction] = -out.orientation

    x = np.full(mesh.n_elements, spec.volume_fraction)
    if seed is not None:
        x += 0.01 * spec.volume_fraction * (np.random.default_rng(seed).random(mesh.n_elements) - 0.5)
    x[void] = 0.0
    x[solid] = 1.0
    history = []
    converged = False
    eta = 0.3 if mechanism else 0.5

    def physical(x):
        xp = H @ x
        xp[void] = 0.0
        xp[solid] = 1.0
        return xp

    it = 0
    for it in range(1, spec.max_iterations + 1):
        xp = physical(x)
        moduli = mat.e_min + xp**p * (mat.youngs_modulus - mat.e_min)
        linear.update(fem.stiffness_matrix(problem, moduli, extra)[free][:, free])
        u = np.zeros(problem.n_dof)
        u[free] = linear.solve(f[free], "u")
        if mechanism:
            lam = np.zeros(problem.n_dof)
            lam[free] = linear.solve(target[free], "adjoint")
            obj = float(target @ u)
            # d(target^T u)/dx = -lam^T dK/dx u
            ce = np.einsum("ij,jk,ik->i", lam[edof], KE, u[edof])
            dc = -p * xp ** (p - 1) * (mat.youngs_modulus - mat.e_min) * ce
        else:
            ce = np.einsum("ij,jk,ik->i", u[edof], KE, u[edof])
            obj = float(f @ u)
            dc = -p * xp ** (p - 1) * (mat.youngs_modulus - mat.e_min) * ce
        history.append(obj)
        dc = H.T @ dc
        dv = H.T @ np.ones(mesh.n_elements)
        x_new = _oc_update(x, dc, dv, free_el, domain, spec.volume_fraction * int(domain.sum()),
                           spec.move_limit, eta, physical)
        change = float(np.max(np.abs(x_new - x)))
        x = x_new
        if change < spec.tolerance:
            converged = True
            break
    if not converged:
        warnings.warn(f"SIMP did not settle in {spec.max_iterations} iterations", ConvergenceWarning,
                      stacklevel=2)
    xp = physical(x)
    nodal = element_to_nodal(mesh, xp)
    field = match_volume(nodal, base, spec.volume_fraction, spec.band)
    return SimpResult(field, xp, history[-1], it, converged, history)


class _LinearSolver:
    """Sparse LU in 2D; warm-started Jacobi CG in 3D, where fill-in makes LU slow."""

    def __init__(self, dimensionality):
        self.direct = dimensionality == 2
        self.guesses = {}

    def update(self, K):
        self.K = K
        if self.direct:
            self.lu = splinalg.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A")

    def solve(self, rhs, key):
        if self.direct:
            return self.lu.solve(rhs)
        try:
            u, _ = fem.solve(self.K, rhs, "cg", rtol=1e-8, x0=self.guesses.get(key))
        except fem.SolverError:
            u, _ = fem.solve(self.K, rhs, "direct")
        self.guesses[key] = u
        return u


def _oc_update(x, dc, dv, free_el, domain, target_volume, move, eta, physical):
    # bisection on the Lagrange multiplier of the volume constraint
    drive = np.maximum(-dc, 1e-30) / dv
    lo, hi = 1e-30, 1e30
    x_new = x
    while (hi - lo) / (hi + lo) > 1e-6:
        mid = np.sqrt(lo * hi)
        cand = np.clip(x * (drive / mid) ** eta, np.maximum(0.0, x - move), np.minimum(1.0, x + move))
        cand = np.where(free_el, cand, x)
        if physical(cand)[domain].sum() > target_volume:
            lo = mid
        else:
            hi = mid
        x_new = cand
    return x_new


# -- initial sets --------------------------------------------------------------

def default_sweep(spec: fem.ProblemSpec, count: int, vf_range=(0.1, 0.5), multipliers=(0.5, 1.0, 2.0)):
    """(volume fraction, spring multiplier) pairs covering ``count`` designs."""
    if spec.output_spring is None:
        return [(float(v), 1.0) for v in np.linspace(*vf_range, count)]
    n_vf = int(np.ceil(count / len(multipliers)))
    vfs = np.linspace(*vf_range, n_vf)
    return [(float(v), float(m)) for m in multipliers for v in vfs][:count]


def generate_initial_set(base: fem.ProblemSpec, count: int, sweep=None, seed: int = 0,
                         n_jobs: int = 1, **lowfi) -> list[DensityField]:
    """``count`` distinct normalized fields from a SIMP parameter sweep.

    ``sweep`` is a sequence of ``(volume_fraction, spring_multiplier)``
    pairs (default: :func:`default_sweep`). Duplicate designs collapse, and a
    sweep that cannot deliver ``count`` distinct fields raises ValueError.
    """
    if count < 2:
        raise ValueError("need at least two initial designs")
    sweep = default_sweep(base, count) if sweep is None else [tuple(s) for s in sweep]

    def job(params):
        vf, mult = params
        spec = LowFiSpec(base, vf, spring_multiplier=mult, **lowfi)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            return simp_optimize(spec, seed).field

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            fields = list(pool.map(job, sweep))
    else:
        fields = [job(params) for params in sweep]
    distinct = []
    for f in fields:
        if not any(np.array_equal(f.values, g.values) for g in distinct):
            distinct.append(f)
    if len(distinct) < max(2, count):
        raise ValueError(f"sweep produced {len(distinct)} distinct designs, {count} requested")
    return distinct[:count]


def random_blob_fields(base: fem.ProblemSpec, count: int, seed: int = 0, sigma: float = 3.0,
                       vf_range=(0.3, 0.6), band: float = 0.01) -> list[DensityField]:
    """Low-pass filtered noise thresholded to swept volume fractions."""
    rng = np.random.default_rng(seed)
    mesh = base.mesh
    fields = []
    for vf in np.linspace(*vf_range, count):
        noise = gaussian_filter(rng.normal(size=mesh.node_shape[::-1]), sigma).ravel()
        noise = (noise - noise.min()) / max(noise.max() - noise.min(), 1e-300)
        fields.append(match_volume(noise, base, float(vf), band))
    return fields
