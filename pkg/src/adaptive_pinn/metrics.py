"""Error norms of a trained network against a reference solution on its grid."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .net import MLP, forward
from .reference import ReferenceSolution

_CHUNK = 65536


def network_on_grid(mlp: MLP, sol: ReferenceSolution, t: float) -> np.ndarray:
    pts = sol.grid_points()
    out = np.empty(pts.shape[0])
    for s in range(0, pts.shape[0], _CHUNK):
        p = pts[s:s + _CHUNK]
        out[s:s + _CHUNK] = forward(mlp, p, np.full(p.shape[0], t))
    return out.reshape(sol.values.shape[1:])


def relative_l2(pred: np.ndarray, ref: np.ndarray) -> float:
    denom = np.sqrt(np.mean(ref * ref))
    if denom == 0:
        raise ZeroDivisionError("reference field has zero norm")
    return float(np.sqrt(np.mean((pred - ref) ** 2)) / denom)


def relative_l2_at(mlp: MLP, sol: ReferenceSolution, T: float) -> float:
    """RMS error over the grid at snapshot ``T`` divided by the reference RMS."""
    k = sol.snapshot_index(T)
    return relative_l2(network_on_grid(mlp, sol, float(sol.snapshot_times[k])), sol.values[k])


def linf_spacetime(mlp: MLP, sol: ReferenceSolution, until: float | None = None) -> float:
    """Max |u_net - u_ref| over all snapshots up to ``until`` and all grid nodes."""
    worst = 0.0
    for k, t in enumerate(sol.snapshot_times):
        if until is not None and t > until + 1e-9:
            break
        worst = max(worst, float(np.max(np.abs(network_on_grid(mlp, sol, t) - sol.values[k]))))
    return worst


def per_snapshot_rel_l2(mlp: MLP, sol: ReferenceSolution, until: float | None = None):
    out = []
    for k, t in enumerate(sol.snapshot_times):
        if until is not None and t > until + 1e-9:
            break
        out.append((float(t), relative_l2(network_on_grid(mlp, sol, t), sol.values[k])))
    return out


@dataclass
class ErrorReport:
    rel_l2_at_T: float
    linf_spacetime: float
    per_snapshot_rel_l2: list = field(default_factory=list)
    trained_until: float = 0.0
    evaluated_at: float = 0.0
    method: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_snapshot_rel_l2"] = [list(p) for p in self.per_snapshot_rel_l2]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def error_report(mlp: MLP, sol: ReferenceSolution, T: float | None = None,
                 trained_until: float | None = None, method: str = "") -> ErrorReport:
    """Errors at horizon ``T`` (default: last reference snapshot)."""
    T = float(sol.snapshot_times[-1]) if T is None else T
    return ErrorReport(
        rel_l2_at_T=relative_l2_at(mlp, sol, T),
        linf_spacetime=linf_spacetime(mlp, sol, until=T),
        per_snapshot_rel_l2=per_snapshot_rel_l2(mlp, sol, until=T),
        trained_until=T if trained_until is None else trained_until,
        evaluated_at=T,
        method=method,
    )


def error_table(reports: dict) -> list[dict]:
    """Rows of a measure x trained-until table, one column per method.

    ``reports`` maps ``(method, trained_until)`` to an :class:`ErrorReport`.
    """
    rows = []
    for measure, key in (("relative_l2", "rel_l2_at_T"), ("linf_spacetime", "linf_spacetime")):
        untils = sorted({u for _, u in reports})
        for until in untils:
            row = {"measure": measure, "trained_until": until}
            for (method, u), rep in sorted(reports.items()):
                if u == until:
                    row[method] = getattr(rep, key)
                    row["evaluated_at"] = rep.evaluated_at
            rows.append(row)
    return rows
