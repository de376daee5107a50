"""Quadrilateral meshes: data model, a plate-with-hole generator, file I/O.

A mesh carries its DOF partition: named groups of constrained DOFs (each
driven by one value per time step; permanently fixed groups are simply driven
with zeros) and the ordered subset of group names whose net reaction forces
are recorded.  Every other DOF is free.  DOF indexing is flat:
dof = 2*node + component.
"""

import json
import numpy as np
from dataclasses import dataclass, field


class MeshFormatError(ValueError):
    """Raised for malformed or schema-violating mesh files."""


@dataclass
class QuadMesh:
    nodes: np.ndarray                     # (n_n, 2), mm
    elements: np.ndarray                  # (n_e, 4), counter-clockwise
    constrained_groups: dict = field(default_factory=dict)   # name -> dof array
    reaction_groups: list = field(default_factory=list)      # beta order

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        self.constrained_groups = {
            k: np.asarray(v, dtype=np.int64)
            for k, v in self.constrained_groups.items()}
        seen = np.concatenate([v for v in self.constrained_groups.values()]) \
            if self.constrained_groups else np.empty(0, dtype=np.int64)
        if len(np.unique(seen)) != len(seen):
            raise MeshFormatError("constrained DOF groups overlap")
        for name in self.reaction_groups:
            if name not in self.constrained_groups:
                raise MeshFormatError(
                    "reaction group %r is not a constrained group" % name)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_dofs(self):
        return 2 * self.n_nodes

    @property
    def constrained_dofs(self):
        if not self.constrained_groups:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(list(self.constrained_groups.values())))

    @property
    def free_dofs(self):
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained_dofs] = False
        return np.nonzero(mask)[0]


@dataclass
class LoadProgram:
    """Per-step prescribed values for each constrained group (columns)."""

    group_names: list
    values: np.ndarray                    # (n_t, n_groups), mm

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] < 1:
            raise ValueError("load program needs at least one step")
        if self.values.shape[1] != len(self.group_names):
            raise ValueError("values column count must match group names")

    @property
    def n_steps(self):
        return self.values.shape[0]


def tension_compression_program(mesh, driven_group, n_up, n_down, peak,
                                trough):
    """Ramp the driven group 0 -> peak in n_up steps, then down to trough.

    All other constrained groups are held at zero, mirroring a rigid-grip
    test with one displacement-controlled direction.
    """
    names = list(mesh.constrained_groups.keys())
    n_t = n_up + n_down
    values = np.zeros((n_t, len(names)))
    col = names.index(driven_group)
    up = np.linspace(0.0, peak, n_up + 1)[1:]
    down = np.linspace(peak, trough, n_down + 1)[1:]
    values[:, col] = np.concatenate([up, down])
    return LoadProgram(group_names=names, values=values)


def plate_with_hole(width=20.0, height=20.0, hole_radius=5.0, n_side=8,
                    n_radial=9):
    """Structured quad mesh of a rectangular plate with a central circular hole.

    The annular region between the hole and the outer rectangle is meshed as
    an O-grid: the rectangle perimeter is divided into 4*n_side segments and
    each perimeter node is connected radially to the hole boundary, with
    n_radial element layers in between.  Bottom-edge DOFs are fixed, top-edge
    DOFs are displacement controlled, and the horizontal/vertical net top
    reactions are recorded (in that order).

    Returns a QuadMesh with 4*n_side*(n_radial+1) nodes.
    """
    if hole_radius >= min(width, height) / 2.0:
        raise ValueError("hole radius must fit inside the plate")
    hw, hh = width / 2.0, height / 2.0
    # perimeter points of the rectangle, corner-aligned, counter-clockwise,
    # starting at the middle of the right edge
    per = []
    corners = np.array([[hw, hh], [-hw, hh], [-hw, -hh], [hw, -hh]])
    start = np.array([hw, 0.0])
    path = [start, corners[0], corners[1], corners[2], corners[3], start]
    seg_div = [n_side // 2, n_side, n_side, n_side, n_side - n_side // 2]
    if n_side % 2 != 0:
        raise ValueError("n_side must be even")
    for a, b, nd in zip(path[:-1], path[1:], seg_div):
        for i in range(nd):
            per.append(a + (b - a) * i / nd)
    per = np.array(per)                     # (4*n_side, 2)
    n_circ = per.shape[0]

    ang = np.arctan2(per[:, 1], per[:, 0])
    inner = hole_radius * np.column_stack([np.cos(ang), np.sin(ang)])

    nodes = np.empty((n_circ * (n_radial + 1), 2))
    for ring in range(n_radial + 1):
        t = ring / n_radial
        nodes[ring * n_circ:(ring + 1) * n_circ] = (1.0 - t) * inner + t * per

    elements = []
    for ring in range(n_radial):
        base0 = ring * n_circ
        base1 = (ring + 1) * n_circ
        for j in range(n_circ):
            jn = (j + 1) % n_circ
            elements.append([base0 + j, base1 + j, base1 + jn, base0 + jn])
    elements = np.array(elements, dtype=np.int64)

    tol = 1e-9 * max(width, height)
    top_nodes = np.nonzero(np.abs(nodes[:, 1] - hh) < tol)[0]
    bot_nodes = np.nonzero(np.abs(nodes[:, 1] + hh) < tol)[0]
    groups = {
        "bottom": np.sort(np.concatenate([2 * bot_nodes, 2 * bot_nodes + 1])),
        "top_x": np.sort(2 * top_nodes),
        "top_y": np.sort(2 * top_nodes + 1),
    }
    return QuadMesh(nodes=nodes, elements=elements,
                    constrained_groups=groups,
                    reaction_groups=["top_x", "top_y"])


def single_element_mesh(width=1.0, height=1.0):
    """One unit quad, stretched vertically: bottom fixed (y), top driven (y).

    Lateral contraction is left free (only one bottom corner pins x), so a
    vertical stretch produces a uniaxial stress state.
    """
    nodes = np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])
    elements = np.array([[0, 1, 2, 3]], dtype=np.int64)
    groups = {
        "bottom": np.array([0, 1, 3]),        # node0 x+y, node1 y
        "top_y": np.array([5, 7]),
    }
    return QuadMesh(nodes=nodes, elements=elements, constrained_groups=groups,
                    reaction_groups=["top_y"])


MESH_FORMAT = "yieldkit-mesh"
MESH_VERSION = 1


def save_mesh(mesh, path):
    doc = {
        "format": MESH_FORMAT,
        "version": MESH_VERSION,
        "units": {"length": "mm"},
        "nodes": mesh.nodes.tolist(),
        "elements": mesh.elements.tolist(),
        "constrained_groups": {k: v.tolist()
                               for k, v in mesh.constrained_groups.items()},
        "reaction_groups": list(mesh.reaction_groups),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_mesh(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeshFormatError("cannot parse mesh file %s: %s" % (path, exc))
    for key in ("format", "version", "nodes", "elements",
                "constrained_groups", "reaction_groups"):
        if key not in doc:
            raise MeshFormatError("mesh file missing %r block" % key)
    if doc["format"] != MESH_FORMAT:
        raise MeshFormatError("not a %s file" % MESH_FORMAT)
    return QuadMesh(nodes=np.array(doc["nodes"], dtype=float),
                    elements=np.array(doc["elements"], dtype=np.int64),
                    constrained_groups=doc["constrained_groups"],
                    reaction_groups=doc["reaction_groups"])
