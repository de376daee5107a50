"""Emulated DIC datasets: noise injection, temporal denoising, file I/O.

A Dataset couples a mesh with nodal displacement trajectories and net
reaction trajectories, plus provenance metadata (noise level, seed, smoothing
settings, elastic constants, generator config hash).  Noise is applied to the
displacements only; reaction measurements are left untouched.
"""

import json
import numpy as np
from dataclasses import dataclass, field

from .mesh import QuadMesh, MeshFormatError, MESH_FORMAT


class DatasetFormatError(ValueError):
    """Raised for malformed or schema-violating dataset files."""


@dataclass
class Dataset:
    mesh: QuadMesh
    displacements: np.ndarray          # (n_t, n_n, 2), mm
    reactions: np.ndarray              # (n_t, n_beta), kN
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.displacements = np.asarray(self.displacements, dtype=float)
        self.reactions = np.asarray(self.reactions, dtype=float)
        if self.displacements.ndim != 3 or \
                self.displacements.shape[1] != self.mesh.n_nodes or \
                self.displacements.shape[2] != 2:
            raise DatasetFormatError("displacement array shape mismatch")
        if self.reactions.shape != (self.displacements.shape[0],
                                    len(self.mesh.reaction_groups)):
            raise DatasetFormatError("reaction array shape mismatch")

    @property
    def n_steps(self):
        return self.displacements.shape[0]


def from_trajectory(mesh, trajectory, metadata=None):
    """Wrap a forward-solve Trajectory as a clean (noise-free) Dataset."""
    md = dict(metadata or {})
    md.setdefault("noise_sigma", 0.0)
    return Dataset(mesh=mesh, displacements=trajectory.displacements.copy(),
                   reactions=trajectory.reactions.copy(), metadata=md)


def add_noise(dataset, sigma, seed):
    """Gaussian noise, i.i.d. per node, component and step, on displacements.

    sigma in mm; the reactions are not perturbed.  Reproducible from seed.
    """
    if sigma < 0.0:
        raise ValueError("noise level must be non-negative")
    u = dataset.displacements.copy()
    if sigma > 0.0:
        rng = np.random.default_rng(seed)
        u += rng.normal(0.0, sigma, size=u.shape)
    md = dict(dataset.metadata)
    md["noise_sigma"] = float(sigma)
    md["noise_seed"] = int(seed)
    return Dataset(mesh=dataset.mesh, displacements=u,
                   reactions=dataset.reactions.copy(), metadata=md)


def smoothing_matrix(n_steps, window, poly_order):
    """Sliding local least-squares fit evaluated at the current sample.

    Works for even windows (the classical filter needs odd ones): each row t
    fits a polynomial to the `window` nearest samples and evaluates it at t.
    Near the boundaries the window shrinks to the available one-sided range.
    """
    if window > n_steps:
        raise ValueError("window exceeds the number of time steps")
    if poly_order >= window:
        raise ValueError("polynomial order must be below the window length")
    back = (window - 1) // 2
    fwd = window - 1 - back
    S = np.zeros((n_steps, n_steps))
    for t in range(n_steps):
        lo = max(0, t - back)
        hi = min(n_steps, t + fwd + 1)
        idx = np.arange(lo, hi)
        V = np.vander(idx - t, N=poly_order + 1, increasing=True)
        # value of the fitted polynomial at tau = t is its constant term
        G = np.linalg.solve(V.T @ V, V.T)
        S[t, idx] = G[0]
    return S


def savgol_smooth(dataset, window, poly_order=2):
    """Temporal denoising of every displacement component independently."""
    S = smoothing_matrix(dataset.n_steps, window, poly_order)
    n_t = dataset.n_steps
    u = S @ dataset.displacements.reshape(n_t, -1)
    md = dict(dataset.metadata)
    md["smoothing_window"] = int(window)
    md["smoothing_order"] = int(poly_order)
    return Dataset(mesh=dataset.mesh,
                   displacements=u.reshape(dataset.displacements.shape),
                   reactions=dataset.reactions.copy(), metadata=md)


DATASET_FORMAT = "yieldkit-dataset"
DATASET_VERSION = 1


def save_dataset(dataset, path):
    doc = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "units": {"displacement": "mm", "reaction": "kN",
                  "stress": "kN/mm^2"},
        "metadata": dataset.metadata,
        "mesh": {
            "format": MESH_FORMAT,
            "version": 1,
            "nodes": dataset.mesh.nodes.tolist(),
            "elements": dataset.mesh.elements.tolist(),
            "constrained_groups": {
                k: v.tolist()
                for k, v in dataset.mesh.constrained_groups.items()},
            "reaction_groups": list(dataset.mesh.reaction_groups),
        },
        "displacements": dataset.displacements.tolist(),
        "reactions": dataset.reactions.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_dataset(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(
                "cannot parse dataset file %s: line %d column %d: %s"
                % (path, exc.lineno, exc.colno, exc.msg))
    for key in ("format", "version", "metadata", "mesh", "displacements",
                "reactions"):
        if key not in doc:
            raise DatasetFormatError("dataset file missing %r block" % key)
    if doc["format"] != DATASET_FORMAT:
        raise DatasetFormatError("not a %s file" % DATASET_FORMAT)
    m = doc["mesh"]
    try:
        mesh = QuadMesh(nodes=np.array(m["nodes"], dtype=float),
                        elements=np.array(m["elements"], dtype=np.int64),
                        constrained_groups=m["constrained_groups"],
                        reaction_groups=m["reaction_groups"])
    except (KeyError, MeshFormatError) as exc:
        raise DatasetFormatError("dataset mesh block invalid: %s" % exc)
    return Dataset(mesh=mesh,
                   displacements=np.array(doc["displacements"], dtype=float),
                   reactions=np.array(doc["reactions"], dtype=float),
                   metadata=doc["metadata"])
