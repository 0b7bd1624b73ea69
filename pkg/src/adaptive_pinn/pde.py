"""Allen-Cahn problem: u_t = g1 * lap(u) - g2 * (u^3 - u) with periodic boundaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .net import MLP, EvalBundle, eval_with_input_derivs

INITIAL_CONDITIONS = ("example1", "example2", "example3_circle")


@dataclass(frozen=True)
class ProblemSpec:
    gamma1: float
    gamma2: float
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    final_time: float
    initial_condition: str
    ic_params: dict = field(default_factory=dict)
    boundary: str = "periodic"
    slice_increment: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> list[str]:
        errors = []
        if not self.gamma1 > 0:
            errors.append(f"gamma1 must be > 0 (got {self.gamma1})")
        if not self.gamma2 > 0:
            errors.append(f"gamma2 must be > 0 (got {self.gamma2})")
        if len(self.lower) != len(self.upper) or len(self.lower) not in (1, 2):
            errors.append("domain must be 1D or 2D with matching bounds")
        elif any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            errors.append("domain bounds must be strictly ordered")
        if not self.final_time > 0:
            errors.append("final_time must be > 0")
        if not self.slice_increment > 0:
            errors.append("slice_increment must be > 0")
        elif self.final_time > 0:
            ratio = self.final_time / self.slice_increment
            if abs(ratio - round(ratio)) * self.slice_increment > 1e-12:
                errors.append("final_time must be a multiple of slice_increment")
        if self.initial_condition not in INITIAL_CONDITIONS:
            errors.append(f"unknown initial condition {self.initial_condition!r}")
        if self.boundary != "periodic":
            errors.append(f"unsupported boundary {self.boundary!r}")
        return errors

    @property
    def spatial_dim(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def n_slices(self) -> int:
        return int(round(self.final_time / self.slice_increment))

    def slice_times(self) -> list[float]:
        return [k * self.slice_increment for k in range(1, self.n_slices + 1)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lower"] = list(self.lower)
        d["upper"] = list(self.upper)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        return cls(**d)


def free_energy_density(s):
    """Double-well potential (s^2 - 1)^2 / 4."""
    s = np.asarray(s, dtype=np.float64)
    return 0.25 * (s * s - 1.0) ** 2


def free_energy_derivs(s):
    """First and second derivative of the double well: (s^3 - s, 3s^2 - 1)."""
    s = np.asarray(s, dtype=np.float64)
    return s ** 3 - s, 3.0 * s * s - 1.0


def residual(bundle: EvalBundle, spec: ProblemSpec) -> np.ndarray:
    u = bundle.u
    return bundle.du_dt - spec.gamma1 * bundle.laplacian_x + spec.gamma2 * (u ** 3 - u)


def energy_density(u, grad_x, spec: ProblemSpec) -> np.ndarray:
    """Pointwise g1*|grad u|^2 + g2*psi(u).  ``grad_x`` is (..., d)."""
    grad_x = np.asarray(grad_x, dtype=np.float64)
    return spec.gamma1 * np.sum(grad_x * grad_x, axis=-1) + spec.gamma2 * free_energy_density(u)


def grid_axes(spec: ProblemSpec, n: int) -> list[np.ndarray]:
    """Cell-left nodes of the uniform periodic grid with ``n`` points per axis."""
    return [lo + (hi - lo) * np.arange(n) / n for lo, hi in zip(spec.lower, spec.upper)]


def periodic_gradient(field: np.ndarray, spacing) -> np.ndarray:
    """Central-difference gradient with periodic wrap, stacked on the last axis."""
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (field.ndim,))
    comps = [(np.roll(field, -1, axis=a) - np.roll(field, 1, axis=a)) / (2.0 * spacing[a])
             for a in range(field.ndim)]
    return np.stack(comps, axis=-1)


def total_energy(field: np.ndarray, spacing, spec: ProblemSpec) -> float:
    """Ginzburg-Landau energy of a periodic grid field (rectangle rule)."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != spec.spatial_dim:
        raise ValueError(f"field is {field.ndim}D, problem is {spec.spatial_dim}D")
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (field.ndim,))
    covered = spacing * np.asarray(field.shape)
    if not np.allclose(covered, spec.widths, rtol=1e-9, atol=0):
        raise ValueError(f"grid covers {covered}, domain widths are {spec.widths}")
    e = energy_density(field, periodic_gradient(field, spacing), spec)
    return float(e.sum() * np.prod(spacing))


def amplification_factor(u):
    """Coefficient -psi''(u) = 1 - 3u^2 of the error in the linearised error equation.

    Positive where errors grow (near u = 0), negative where they are damped
    (near the wells u = +-1).
    """
    return -free_energy_derivs(u)[1]


def initial_condition(spec: ProblemSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    name = spec.initial_condition
    if name == "example1":
        s = x[:, 0]
        return s * s * np.cos(np.pi * s)
    if name == "example2":
        s = x[:, 0]
        return s * s * np.sin(2.0 * np.pi * s)
    if name == "example3_circle":
        p = spec.ic_params
        eps = p.get("epsilon", 0.025)
        radius = p.get("radius", 0.35)
        cx, cy = p.get("center", (0.5, 0.5))
        r = np.sqrt((x[:, 0] - cx) ** 2 + (x[:, 1] - cy) ** 2)
        return np.tanh((radius - r) / (2.0 * eps))
    raise ValueError(f"unknown initial condition {name!r}")


def boundary_pairs(spec: ProblemSpec, t, face_positions=None):
    """Matching points on opposite faces for each axis.

    Returns a list with one ``(x_low, x_high, t)`` tuple per axis.  In 2D
    ``face_positions`` (same length as ``t``) gives the coordinate along
    the face; it defaults to the domain midpoint.
    """
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    d = spec.spatial_dim
    if spec.boundary != "periodic":
        raise ValueError(f"boundary {spec.boundary!r} is not periodic")
    if d == 1:
        lo = np.full((t.size, 1), spec.lower[0])
        hi = np.full((t.size, 1), spec.upper[0])
        return [(lo, hi, t)]
    if face_positions is None:
        face_positions = np.full((t.size, d),
                                 0.5 * (np.asarray(spec.lower) + np.asarray(spec.upper)))
    face_positions = np.asarray(face_positions, dtype=np.float64).reshape(t.size, d)
    pairs = []
    for axis in range(d):
        lo = face_positions.copy()
        hi = face_positions.copy()
        lo[:, axis] = spec.lower[axis]
        hi[:, axis] = spec.upper[axis]
        pairs.append((lo, hi, t))
    return pairs


def periodic_bc_mismatch(mlp: MLP, t, spec: ProblemSpec, face_positions=None) -> float:
    """Mean squared jump in value and normal derivative across opposite faces, summed over axes."""
    total = 0.0
    for axis, (lo, hi, tt) in enumerate(boundary_pairs(spec, t, face_positions)):
        b_lo = eval_with_input_derivs(mlp, lo, tt, order=1)
        b_hi = eval_with_input_derivs(mlp, hi, tt, order=1)
        du = b_lo.u - b_hi.u
        dn = b_lo.grad_x[:, axis] - b_hi.grad_x[:, axis]
        total += float(np.mean(du * du + dn * dn))
    return total


def interface_width(spec: ProblemSpec) -> float:
    """Width sqrt(2 g1 / g2) of the stationary tanh profile."""
    return math.sqrt(2.0 * spec.gamma1 / spec.gamma2)
