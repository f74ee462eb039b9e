"""Solid body rotation benchmark and experiment driver.

The benchmark transports three bodies (slotted cylinder, cone, Gaussian
hill) once around the unit square's center under the rotating field
a = (0.5 - y, x - 0.5) with small diffusion and homogeneous Dirichlet walls.
One full revolution takes t = 2 pi. The domain splits at x = 0.5 into left
and right halves so the bodies repeatedly cross the interface.

``run_experiment`` reproduces the coupled accuracy studies: it solves the
monolithic reference, restricts it to state snapshots, builds requested
bases (state POD, descent-recorded or per-timestep adjoint collections),
runs each configured coupled solve and reports errors against the reference
at the final time. Report CSVs are byte deterministic; wall times go to a
separate timings file.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from obcoupling import assembly, coupling, rom, snapshots
from obcoupling.fom import ProblemSpec, monolithic_solve
from obcoupling.geometry import build_mesh, decompose

DT_LEVEL_64 = 1.122398e-3


def default_dt(level: int) -> float:
    """Timestep pinned at refinement level 64 and scaled like the cell area."""
    return DT_LEVEL_64 * (64.0 / level) ** 2


def rotation_field(x, y):
    """Divergence-free solid rotation about (0.5, 0.5), one turn per 2 pi."""
    return 0.5 - np.asarray(y), np.asarray(x) - 0.5


def initial_condition(x, y):
    """Slotted cylinder, cone and Gaussian hill on the unit square."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = np.exp(-((x - 0.25) ** 2 + (y - 0.5) ** 2) / (2.0 * 0.05 ** 2))
    r_cone = np.hypot(x - 0.5, y - 0.25)
    out = out + np.clip(1.0 - r_cone / 0.15, 0.0, None)
    cyl = (np.hypot(x - 0.5, y - 0.75) <= 0.15) \
        & ~((np.abs(x - 0.5) < 0.025) & (y < 0.85))
    return out + cyl.astype(np.float64)


def solid_body_rotation_problem(level: int = 32, *, nu: float = 1e-5,
                                dt: float | None = None,
                                T: float = 2.0 * math.pi) -> ProblemSpec:
    """Benchmark problem on a level x level grid split at x = 0.5."""
    if level < 4 or level % 2:
        raise ValueError("level must be even and at least 4")
    mesh = build_mesh(level, level)
    dec = decompose(mesh, 0.5)
    u0 = initial_condition(mesh.coords[:, 0], mesh.coords[:, 1])
    return ProblemSpec(decomposition=dec, nu=nu, a=rotation_field, f=None,
                       u0=u0, dt=default_dt(level) if dt is None else dt, T=T)


def relative_errors(ops_1: assembly.OperatorSet, ops_2: assembly.OperatorSet,
                    final_1: np.ndarray, final_2: np.ndarray,
                    ref_1: np.ndarray, ref_2: np.ndarray) -> dict[str, float]:
    """Relative L2 and H1 errors against a reference, summed over subdomains.

    Every element belongs to exactly one subdomain, so adding the two
    subdomain quadratic forms integrates each element once. All compared
    fields satisfy identical Dirichlet data, hence the free-DOF restricted
    forms equal the full ones.
    """
    def forms(ops, e, r):
        return {
            "l2": (float(e @ (ops.M @ e)), float(r @ (ops.M @ r))),
            "h1": (float(e @ (ops.M @ e)) + float(e @ (ops.K @ e)),
                   float(r @ (ops.M @ r)) + float(r @ (ops.K @ r))),
            "h1_semi": (float(e @ (ops.K @ e)), float(r @ (ops.K @ r))),
        }

    f_1 = forms(ops_1, final_1 - ref_1, ref_1)
    f_2 = forms(ops_2, final_2 - ref_2, ref_2)
    out = {}
    for key, name in (("l2", "rel_l2"), ("h1", "rel_h1"), ("h1_semi", "rel_h1_semi")):
        num = f_1[key][0] + f_2[key][0]
        den = f_1[key][1] + f_2[key][1]
        if den <= 0.0:
            raise ValueError("reference field has zero norm")
        out[name] = math.sqrt(num / den)
    return out


@dataclass(frozen=True)
class BenchmarkSpec:
    """Scenario parameters shared by every run of one experiment."""

    level: int = 32
    nu: float = 1e-5
    dt: float | None = None
    T: float = 2.0 * math.pi
    delta: float = 1e-16
    tol: float = 1e-14
    alpha0: float = 2.0
    max_iters: int = 10000
    supg_on: bool = True
    warm_start: bool = True
    gdra_delta: float = 1e-14   # descent-recorded collection runs its own
    gdra_tol: float = 1e-12     # regularization and tolerance
    mgd_workers: int = 1

    def problem(self) -> ProblemSpec:
        return solid_body_rotation_problem(self.level, nu=self.nu, dt=self.dt,
                                           T=self.T)

    def config(self) -> coupling.CouplingConfig:
        return coupling.CouplingConfig(
            delta=self.delta, tol=self.tol, alpha0=self.alpha0,
            max_iters=self.max_iters, warm_start=self.warm_start,
            supg_on=self.supg_on)


@dataclass(frozen=True)
class ExperimentEntry:
    """One coupled run: which model solves states, which solves adjoints.

    ``state_modes`` of None runs full-order states; otherwise that many POD
    modes of the state snapshots. ``adjoint_modes`` of None runs full-order
    adjoints; otherwise that many modes of the ``adjoint_source`` collection
    ("gdra", or "mgd<m>" such as "mgd1", or "state" to reuse the state basis).
    """

    label: str
    state_modes: int | None = None
    adjoint_modes: int | None = None
    adjoint_source: str = "mgd1"


@dataclass
class ReportRow:
    label: str
    state_modes: int
    adjoint_source: str
    adjoint_modes: int
    rel_l2: float
    rel_h1: float
    rel_h1_semi: float
    avg_iterations: float
    total_iterations: int
    all_converged: bool
    wall_seconds: float


_REPORT_COLUMNS = ["label", "state_modes", "adjoint_source", "adjoint_modes",
                   "rel_l2", "rel_h1", "rel_h1_semi", "avg_iterations",
                   "total_iterations", "all_converged"]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_report_csv(rows: list[ReportRow], path):
    """Deterministic result table; wall times intentionally omitted."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_REPORT_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, col)) for col in _REPORT_COLUMNS])


def write_timings_csv(entries: list[tuple[str, float]], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "wall_seconds"])
        for label, wall in entries:
            writer.writerow([label, f"{wall:.6f}"])


def write_singular_values_csv(spectra: dict[tuple[str, int], np.ndarray], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "subdomain", "index", "sigma"])
        for (source, side), sigma in sorted(spectra.items()):
            for idx, val in enumerate(sigma):
                writer.writerow([source, side, idx, _fmt(float(val))])


class ExperimentContext:
    """Shared heavyweight artifacts of one experiment.

    Builds the monolithic reference, the state snapshot split, and any
    requested basis lazily, caching each so repeated entries reuse them.
    """

    def __init__(self, spec: BenchmarkSpec):
        self.spec = spec
        self.problem = spec.problem()
        self.config = spec.config()
        self._mono = None
        self._mono_wall = None
        self._states = None
        self._metric_ops = None
        self._bases: dict[tuple[str, int], rom.ReducedBasis] = {}
        self._adjoint_stores: dict[str, snapshots.SnapshotStore] = {}

    @property
    def mono_wall(self) -> float:
        self.monolithic()
        return self._mono_wall

    def monolithic(self):
        if self._mono is None:
            t0 = time.perf_counter()
            self._mono = monolithic_solve(self.problem, supg_on=self.spec.supg_on)
            self._mono_wall = time.perf_counter() - t0
        return self._mono

    def state_store(self) -> snapshots.SnapshotStore:
        if self._states is None:
            self._states = snapshots.split_monolithic_snapshots(
                self.monolithic(), self.problem.decomposition)
        return self._states

    def reference_finals(self) -> tuple[np.ndarray, np.ndarray]:
        store = self.state_store()
        return store["state_1"].data[:, -1], store["state_2"].data[:, -1]

    def metric_ops(self):
        if self._metric_ops is None:
            dec = self.problem.decomposition
            self._metric_ops = tuple(
                assembly.subdomain_operators(dec, side, nu=self.problem.nu,
                                             dt=self.problem.dt)
                for side in (1, 2))
        return self._metric_ops

    def adjoint_store(self, source: str) -> snapshots.SnapshotStore:
        if source not in self._adjoint_stores:
            if source == "gdra":
                cfg = replace(self.config, delta=self.spec.gdra_delta,
                              tol=self.spec.gdra_tol)
                store = snapshots.collect_gdra(self.problem, cfg)
            elif source.startswith("mgd"):
                m = int(source[3:])
                store = snapshots.collect_mgd(self.problem, self.state_store(),
                                              m, self.config,
                                              workers=self.spec.mgd_workers)
            else:
                raise ValueError(f"unknown adjoint source {source!r}")
            self._adjoint_stores[source] = store
        return self._adjoint_stores[source]

    def basis(self, source: str, side: int) -> rom.ReducedBasis:
        key = (source, side)
        if key not in self._bases:
            if source == "state":
                sm = self.state_store()[f"state_{side}"]
            else:
                sm = self.adjoint_store(source)[f"adjoint_{side}"]
            self._bases[key] = rom.full_pod(sm)
        return self._bases[key]

    def spectra(self) -> dict[tuple[str, int], np.ndarray]:
        return {key: basis.sigma for key, basis in self._bases.items()}

    def build_backends(self, entry: ExperimentEntry):
        """Reduced operator sets per side for one entry (None = full order)."""
        state_rops = [None, None]
        adjoint_rops = [None, None]
        if entry.state_modes is None and entry.adjoint_modes is None:
            return tuple(state_rops), tuple(adjoint_rops)

        dec = self.problem.decomposition
        for side in (1, 2):
            psi_u = psi_mu = None
            if entry.state_modes is not None:
                psi_u = self.basis("state", side).truncate(entry.state_modes).Psi
            if entry.adjoint_modes is not None:
                source = entry.adjoint_source
                psi_mu = self.basis(source, side).truncate(entry.adjoint_modes).Psi
            if psi_u is None and psi_mu is None:
                continue
            ops = assembly.subdomain_operators(
                dec, side, nu=self.problem.nu, dt=self.problem.dt,
                advection=self.problem.a, supg_on=self.spec.supg_on)
            rops = rom.reduce_operators(ops, psi_u if psi_u is not None else psi_mu,
                                        psi_mu, trace_free=dec.trace_free(side))
            if psi_u is not None:
                state_rops[side - 1] = rops
            if psi_mu is not None:
                adjoint_rops[side - 1] = rops
        return tuple(state_rops), tuple(adjoint_rops)

    def run_entry(self, entry: ExperimentEntry) -> tuple[ReportRow, coupling.CoupledRunResult]:
        state_rops, adjoint_rops = self.build_backends(entry)
        result = coupling.run_transient(self.problem, self.config,
                                        state_rops=state_rops,
                                        adjoint_rops=adjoint_rops,
                                        keep_trajectories=False)
        ref_1, ref_2 = self.reference_finals()
        ops_1, ops_2 = self.metric_ops()
        errs = relative_errors(ops_1, ops_2, result.final_1, result.final_2,
                               ref_1, ref_2)
        row = ReportRow(
            label=entry.label,
            state_modes=entry.state_modes or 0,
            adjoint_source=("full" if entry.adjoint_modes is None
                            else entry.adjoint_source),
            adjoint_modes=entry.adjoint_modes or 0,
            rel_l2=errs["rel_l2"], rel_h1=errs["rel_h1"],
            rel_h1_semi=errs["rel_h1_semi"],
            avg_iterations=result.avg_iterations,
            total_iterations=result.total_iterations,
            all_converged=result.all_converged,
            wall_seconds=result.wall_time)
        return row, result


def standard_entries() -> list[ExperimentEntry]:
    """The canonical comparison set: full coupling, reduced states with full
    adjoints, and fully reduced runs with per-timestep adjoint bases."""
    return [
        ExperimentEntry("fom-fom"),
        ExperimentEntry("rs-fa-100", state_modes=100),
        ExperimentEntry("rs-fa-50", state_modes=50),
        ExperimentEntry("rom-rom-100-50", state_modes=100, adjoint_modes=50,
                        adjoint_source="mgd1"),
    ]


def run_experiment(spec: BenchmarkSpec, entries: list[ExperimentEntry],
                   outdir=None) -> list[ReportRow]:
    """Run the comparison set and optionally write the report files."""
    ctx = ExperimentContext(spec)
    rows = []
    timings = [("monolithic", ctx.mono_wall)]
    for entry in entries:
        row, _ = ctx.run_entry(entry)
        rows.append(row)
        timings.append((entry.label, row.wall_seconds))

    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_report_csv(rows, outdir / "report.csv")
        write_timings_csv(timings, outdir / "timings.csv")
        spectra = ctx.spectra()
        if spectra:
            write_singular_values_csv(spectra, outdir / "singular_values.csv")
    return rows
