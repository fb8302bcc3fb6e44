"""Structured-mesh density fields, samples, and their on-disk formats.

Nodes are numbered row-major with x fastest: in 2D the flat index of node
``(i, j)`` is ``j * (nx + 1) + i``; in 3D ``(i, j, k)`` maps to
``(k * (ny + 1) + j) * (nx + 1) + i``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = "DDTD1"


@dataclass(frozen=True)
class Mesh:
    """Uniform structured grid of square (2D) or cubic (3D) elements."""

    dims: tuple[int, ...]
    element_length: float = 0.01

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"mesh must be 2D or 3D, got dims={self.dims!r}")
        if any(d < 1 for d in dims):
            raise ValueError(f"all extents must be >= 1, got {dims}")
        if not self.element_length > 0:
            raise ValueError(f"element_length must be > 0, got {self.element_length}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "element_length", float(self.element_length))

    @property
    def dimensionality(self) -> int:
        return len(self.dims)

    @property
    def node_shape(self) -> tuple[int, ...]:
        return tuple(d + 1 for d in self.dims)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.dims))

    @property
    def element_measure(self) -> float:
        return self.element_length ** self.dimensionality

    @property
    def domain_measure(self) -> float:
        return self.n_elements * self.element_measure

    def node_coordinates(self) -> np.ndarray:
        """Physical coordinates of every node, shape ``(n_nodes, dim)``."""
        axes = [np.arange(s) * self.element_length for s in self.node_shape]
        # reversed so that x varies fastest in the flattened order
        grids = np.meshgrid(*axes[::-1], indexing="ij")
        return np.stack([g.ravel() for g in grids[::-1]], axis=1)

    def element_nodes(self) -> np.ndarray:
        """Node indices of every element, shape ``(n_elements, 2**dim)``.

        Local order is counter-clockwise in 2D (00, 10, 11, 01); in 3D the
        bottom face (z = 0) in that order followed by the top face.
        """
        if self.dimensionality == 2:
            nx, ny = self.dims
            i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
            i, j = i.ravel(), j.ravel()
            n0 = j * (nx + 1) + i
            return np.stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1], axis=1)
        nx, ny, nz = self.dims
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        i, j, k = i.ravel(), j.ravel(), k.ravel()
        sx, sy = 1, nx + 1
        sz = (nx + 1) * (ny + 1)
        n0 = k * sz + j * sy + i
        bottom = [n0, n0 + sx, n0 + sx + sy, n0 + sy]
        top = [b + sz for b in bottom]
        return np.stack(bottom + top, axis=1)

    def element_centers(self) -> np.ndarray:
        """Centroid coordinates of every element, shape ``(n_elements, dim)``."""
        axes = [(np.arange(d) + 0.5) * self.element_length for d in self.dims]
        grids = np.meshgrid(*axes[::-1], indexing="ij")
        return np.stack([g.ravel() for g in grids[::-1]], axis=1)


def node_index(mesh: Mesh, coords: Sequence[int]) -> int:
    """Flat row-major index (x fastest) of the lattice node at ``coords``."""
    coords = tuple(int(c) for c in coords)
    if len(coords) != mesh.dimensionality:
        raise IndexError(f"expected {mesh.dimensionality} coordinates, got {len(coords)}")
    index, stride = 0, 1
    for c, d in zip(coords, mesh.dims):
        if not 0 <= c <= d:
            raise IndexError(f"node coordinate {c} outside [0, {d}]")
        index += c * stride
        stride *= d + 1
    return index


@dataclass(frozen=True, eq=False)
class DensityField:
    """Nodal densities on a mesh. Values are stored read-only."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def grid(self) -> np.ndarray:
        """Values reshaped to the node lattice, indexed ``[z, y, x]`` / ``[y, x]``."""
        return self.values.reshape(self.mesh.node_shape[::-1])

    def element_densities(self) -> np.ndarray:
        """Mean of each element's nodal densities."""
        return self.values[self.mesh.element_nodes()].mean(axis=1)


def uniform_field(mesh: Mesh, value: float) -> DensityField:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {value}")
    return DensityField(mesh, np.full(mesh.n_nodes, float(value)))


def validate(field: DensityField) -> list[str]:
    """Return a list of human-readable violations; empty means valid."""
    violations = []
    n = field.mesh.n_nodes
    if field.values.size != n:
        violations.append(f"length {field.values.size} does not match node count {n}")
    bad = np.flatnonzero(~((field.values >= 0.0) & (field.values <= 1.0)))
    for node in bad:
        violations.append(f"node {node}: value {field.values[node]!r} outside [0, 1]")
    return violations


class SampleStatus(enum.Enum):
    UNEVALUATED = "unevaluated"
    OK = "ok"
    # void or disconnected design, carries sentinel objectives
    INFEASIBLE = "infeasible"
    # solver error, excluded from selection
    FAILED = "failed"


@dataclass
class Sample:
    """A density field with its objective vector and provenance."""

    field: DensityField
    id: int
    iteration_born: int = 0
    objectives: np.ndarray | None = None
    status: SampleStatus = SampleStatus.UNEVALUATED
    info: dict = dc_field(default_factory=dict)

    @property
    def evaluated(self) -> bool:
        return self.status is not SampleStatus.UNEVALUATED

    @property
    def selectable(self) -> bool:
        return self.status in (SampleStatus.OK, SampleStatus.INFEASIBLE)


# -- serialization -----------------------------------------------------------

def _header_tokens(mesh: Mesh) -> list[str]:
    return [MAGIC, str(mesh.dimensionality), " ".join(map(str, mesh.dims)), repr(mesh.element_length)]


def save_field(field: DensityField, path, binary: bool = False) -> None:
    """Write a field file in the text (default) or raw little-endian form.

    Text form: magic line, dimensionality, extents, element length, then one
    value per line. Binary form: magic, uint8 dimensionality, int64 extents,
    float64 element length, float64 values, all little-endian.
    """
    path = Path(path)
    mesh = field.mesh
    if binary:
        head = MAGIC.encode("ascii") + struct.pack("<B", mesh.dimensionality)
        head += struct.pack(f"<{mesh.dimensionality}q", *mesh.dims)
        head += struct.pack("<d", mesh.element_length)
        path.write_bytes(head + field.values.astype("<f8").tobytes())
        return
    lines = _header_tokens(mesh) + [repr(float(v)) for v in field.values]
    path.write_text("\n".join(lines) + "\n")


def load_field(path) -> DensityField:
    """Read either encoding; the form is detected from the content."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC.encode("ascii")):
        raise ValueError(f"{path}: not a field file (missing {MAGIC} magic)")
    rest = raw[len(MAGIC):]
    if rest[:1] in (b"\n", b"\r"):
        lines = raw.decode("ascii").split()
        dim = int(lines[1])
        dims = tuple(int(t) for t in lines[2:2 + dim])
        length = float(lines[2 + dim])
        values = np.array([float(t) for t in lines[3 + dim:]])
    else:
        dim = struct.unpack_from("<B", rest, 0)[0]
        if dim not in (2, 3):
            raise ValueError(f"{path}: bad dimensionality {dim}")
        dims = struct.unpack_from(f"<{dim}q", rest, 1)
        offset = 1 + 8 * dim
        length = struct.unpack_from("<d", rest, offset)[0]
        values = np.frombuffer(rest, dtype="<f8", offset=offset + 8).astype(float)
    mesh = Mesh(dims, length)
    if values.size != mesh.n_nodes:
        raise ValueError(f"{path}: {values.size} values for {mesh.n_nodes} nodes")
    return DensityField(mesh, values)


def export_vtk(field: DensityField, path, name: str = "density") -> None:
    """Legacy VTK STRUCTURED_POINTS export with nodal scalars."""
    mesh = field.mesh
    shape = list(mesh.node_shape) + [1] * (3 - mesh.dimensionality)
    h = mesh.element_length
    lines = [
        "# vtk DataFile Version 3.0",
        "ddtd density field",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS {} {} {}".format(*shape),
        "ORIGIN 0 0 0",
        f"SPACING {h!r} {h!r} {h!r}",
        f"POINT_DATA {mesh.n_nodes}",
        f"SCALARS {name} double 1",
        "LOOKUP_TABLE default",
    ]
    lines.extend(repr(float(v)) for v in field.values)
    Path(path).write_text("\n".join(lines) + "\n")
