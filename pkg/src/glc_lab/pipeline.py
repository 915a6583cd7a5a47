"""Subcommand runners: each one computes, writes its tables and records checks and experiments."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, replace
import itertools
import logging
import math
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from glc_lab.carleman import SweepCell, conjugation_report, evaluate_carleman, sweep_carleman
from glc_lab.config import DEFAULT_WORKERS, ExperimentConfig
from glc_lab.control import (
    energy_check,
    epsilon_ladder,
    gramian_apply,
    hum_solve,
    obs_trend,
    observability_quotient,
    omega_energy,
    refinement_table,
)
from glc_lab.dynamics import (
    ControlField,
    adjoint_solve,
    forward_solve,
    manufactured_convergence,
    residual,
    scheme_for,
    weighted_inner,
)
from glc_lab.grid import SpaceMesh, SpaceSet, TimeSet, build_meshes, check_identities, random_field
from glc_lab.reports import RunReport, clear_failed, mark_failed, write_report, write_table
from glc_lab.samples import (
    CARLEMAN_FAMILY,
    OBSERVABILITY_FAMILY,
    PRESET_LABELS,
    Stream,
    complex_gaussian,
    initial_data,
    rng_for,
    sample_family,
)
from glc_lab.weights import (
    audit_weight_lemmas,
    build_psi,
    build_weights,
    regime_time_steps,
    require_regime,
    validate_regime,
    window_diagnostics,
)


logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-13
CONJUGATION_TOL = 1e-11
SOLVER_TOL = 1e-12
RECURRENCE_TOL = 1e-13
DUALITY_TOL = 1e-12
ORACLE_TOL = 1e-14
ENERGY_TOL = 1e-12
GRAMIAN_TOL = 1e-12
CG_ORACLE_TOL = 1e-10
CERTIFICATE_TOL = 1e-10
HOMOGENEITY_TOL = 1e-12
ORDER_FLOOR = 0.8

CONJUGATION_MESHES = ((5, 4), (31, 32))
CONJUGATION_TAUS = (1.0, 5.0)
CONJUGATION_LAMBDAS = (1.0, 2.0)
CONJUGATION_SAMPLES = 50
DUALITY_MESHES = ((5, 4), (31, 32), (63, 64))
DUALITY_SAMPLES = 50
ENERGY_CASES = ((0.0, 1.0), (0.5, -2.0), (-0.5, 3.0))
ORACLE_MESH = (5, 4)
ORACLE_EPSILON = 1e-2
ORACLE_CG_TOL = 1e-13
HOMOGENEITY_FACTOR = complex(2.0, -3.0)

Runner = Callable[[ExperimentConfig, RunReport, str, int], None]


def _initial(config: ExperimentConfig, mesh: SpaceMesh, cell: int = 0) -> np.ndarray:
    return initial_data(PRESET_LABELS[config.initial_preset], mesh, rng_for(config.seed, Stream.CONTROL, cell, 0))


def _spread(values: Sequence[float]) -> float:
    finite = [v for v in values if math.isfinite(v) and v > 0]
    if len(finite) < 2:
        return math.nan
    return max(finite) / min(finite)


def run_identities(config: ExperimentConfig, report: RunReport, out_dir: str, workers: int) -> None:
    cells = list(itertools.product(config.identity_space_sizes, config.identity_time_steps))
    results: Dict[int, list] = {}
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        future_map = {
            executor.submit(
                check_identities, M, N, config.T, [config.seed, int(Stream.IDENTITIES), i], config.identity_samples
            ): i
            for i, (M, N) in enumerate(cells)
        }
        for future in as_completed(future_map):
            results[future_map[future]] = future.result()
    rows = []
    for i, (M, N) in enumerate(cells):
        for record in results[i]:
            rows.append({"M": M, "N": N, "identity": record.identity, "residual": record.residual,
                         "scale": record.scale, "relative": record.relative})
    report.tables["identities"] = write_table(out_dir, "identities", rows)
    worst = max(rows, key=lambda r: r["relative"])
    report.check("identities_relative_residual", worst["relative"], IDENTITY_TOL,
                 f"worst {worst['identity']} at M={worst['M']} N={worst['N']}")


def run_weights_audit(config: ExperimentConfig, report: RunReport, out_dir: str, workers: int) -> None:
    params = config.weight_params()
    N = regime_time_steps(params, config.T)
    family = [(M, N) for M in config.carleman_space_sizes]
    rows = [asdict(row) for row in audit_weight_lemmas(params, config.omega0, config.T, family)]
    report.tables["weight_audit"] = write_table(out_dir, "weight_audit", rows)
    ratios = [r["ratio"] for r in rows]
    report.check("weight_audit_finite", float(sum(not math.isfinite(v) for v in ratios)), 0.0, f"{len(rows)} rows")

    coarse_dx, fine_dx = max(r["dx"] for r in rows), min(r["dx"] for r in rows)
    for lemma in sorted({r["lemma"] for r in rows}):
        coarse = max(abs(r["ratio"]) for r in rows if r["lemma"] == lemma and r["dx"] == coarse_dx)
        fine = max(abs(r["ratio"]) for r in rows if r["lemma"] == lemma and r["dx"] == fine_dx)
        if coarse > 0:
            report.experiment(f"weight_audit_{lemma}_growth", fine / coarse, 2.0, f"dx {coarse_dx:.4g} -> {fine_dx:.4g}")

    windows = []
    for M, N in family:
        meshes = build_meshes(M, N, config.T)
        psi = build_psi(config.omega0, params.c0, params.k_margin, meshes[0])
        diag = window_diagnostics(build_weights(params, psi, meshes))
        windows.append({"M": M, "N": N, "K0": diag.K0, "k0": diag.k0, "floor": diag.floor,
                        "min_window_r2": diag.min_window_r2, "holds": diag.holds, "c0_admissible": psi.c0_admissible})
        report.check("window_floor", diag.floor - diag.min_window_r2, 0.0, f"M={M} N={N}")
    report.tables["weight_window"] = write_table(out_dir, "weight_window", windows)


def run_solve(config: ExperimentConfig, report: RunReport, out_dir: str, workers: int) -> None:
    sys = config.system()
    meshes = config.meshes()
    space, tmesh = meshes
    scale_factor = 1.0 / tmesh.dt + 4.0 * abs(complex(sys.alpha, sys.beta)) / space.dx**2

    g = initial_data(PRESET_LABELS[config.initial_preset], space, rng_for(config.seed, Stream.SOLVE, 0, 0))
    y = forward_solve(sys, meshes, g)
    report.check("forward_residual", residual(y, sys, meshes), SOLVER_TOL * np.max(np.abs(y.values)) * scale_factor,
                 f"M={space.M} N={tmesh.N}")
    q_T = complex_gaussian(rng_for(config.seed, Stream.SOLVE, 0, 1), space.M + 2)
    q = adjoint_solve(sys, meshes, q_T)
    report.check("adjoint_residual", residual(q, sys, meshes), SOLVER_TOL * np.max(np.abs(q.values)) * scale_factor,
                 f"M={space.M} N={tmesh.N}")
    report.tables["solve_state"] = write_table(
        out_dir,
        "solve_state",
        [{"t": t, "x": x, "y": value} for t, row in zip(tmesh.primal_times, y.values) for x, value in zip(space.primal_nodes, row)],
    )

    constant = forward_solve(sys, meshes, np.ones(space.M + 2, dtype=np.complex128))
    factor = 1.0 + tmesh.dt * complex(sys.c, sys.gamma)
    exact = factor ** (-np.arange(tmesh.N + 1, dtype=float))
    recurrence = float(np.max(np.abs(constant.values - exact[:, None]) / np.abs(exact[:, None])))
    report.check("constant_recurrence", recurrence, RECURRENCE_TOL)

    rows = []
    for cell, (M, N) in enumerate(DUALITY_MESHES):
        dmeshes = build_meshes(M, N, config.T)
        scheme = scheme_for(sys, *dmeshes)
        for sample in range(DUALITY_SAMPLES):
            rng = rng_for(config.seed, Stream.SOLVE, cell + 1, sample)
            g_s = complex_gaussian(rng, M + 2)
            v = ControlField.zeros(sys, *dmeshes)
            v = ControlField(v.indices, complex_gaussian(rng, v.values.size).reshape(v.values.shape), *dmeshes)
            q_s = complex_gaussian(rng, M + 2)
            terms = scheme.duality_terms(g_s, v, q_s)
            rows.append({"M": M, "N": N, "sample_id": sample, "terminal": terms.terminal, "initial": terms.initial,
                         "control": terms.control, "scale": terms.scale, "defect": terms.defect, "relative": terms.relative})
    report.tables["duality"] = write_table(out_dir, "duality", rows)
    report.check("duality_defect", max(r["relative"] for r in rows), DUALITY_TOL, f"{len(rows)} triples")

    oracle = scheme_for(sys, *build_meshes(*ORACLE_MESH, config.T))
    A = oracle.forward_matrix.to_dense()
    W = np.diag(oracle.weights)
    expected = np.linalg.solve(W, A.conj().T @ W)
    mismatch = float(np.max(np.abs(oracle.adjoint_matrix.to_dense() - expected))) / float(np.max(np.abs(A)))
    report.check("adjoint_dense_oracle", mismatch, ORACLE_TOL, f"M={ORACLE_MESH[0]}")

    conv = manufactured_convergence(sys)
    conv_rows = [{"axis": "t", "level": n, "increment": inc, "order": order}
                 for n, inc, order in zip(conv.time_steps[1:], conv.time_increments, [math.nan] + conv.time_orders)]
    conv_rows += [{"axis": "x", "level": m, "increment": inc, "order": order}
                  for m, inc, order in zip(conv.space_sizes[1:], conv.space_increments, [math.nan] + conv.space_orders)]
    report.tables["convergence"] = write_table(out_dir, "convergence", conv_rows)
    report.check("time_order", -conv.min_time_order, -ORDER_FLOOR)
    report.check("space_order", -conv.min_space_order, -ORDER_FLOOR)


def _conjugation_rows(config: ExperimentConfig, report: RunReport) -> List[Dict[str, object]]:
    sys = config.system()
    rows = []
    for cell, ((M, N), tau, lam) in enumerate(itertools.product(CONJUGATION_MESHES, CONJUGATION_TAUS, CONJUGATION_LAMBDAS)):
        meshes = build_meshes(M, N, config.T)
        params = replace(config.weight_params(tau), lam=lam)
        weights = build_weights(params, build_psi(config.omega0, params.c0, params.k_margin, meshes[0]), meshes)
        worst: Dict[str, float] = {}
        for sample in range(CONJUGATION_SAMPLES):
            rng = rng_for(config.seed, Stream.CARLEMAN, 1000 + cell, sample)
            q = random_field(rng, meshes[0], SpaceSet.CLOSURE, meshes[1], TimeSet.DUAL_CLOSURE)
            for record in conjugation_report(q, weights, sys, meshes):
                worst[record.identity] = max(worst.get(record.identity, 0.0), record.relative)
        for name, value in sorted(worst.items()):
            rows.append({"M": M, "N": N, "tau": tau, "lambda": lam, "identity": name, "relative": value})
    report.check("conjugation_residual", max(r["relative"] for r in rows), CONJUGATION_TOL, f"{len(rows)} rows")
    return rows


def run_carleman_audit(config: ExperimentConfig, report: RunReport, out_dir: str, workers: int) -> None:
    sys = config.system()
    params = config.weight_params()
    taus = [config.tau_value] + list(config.tau_ladder)
    first = build_meshes(config.carleman_space_sizes[0], regime_time_steps(params, config.T), config.T)
    require_regime(validate_regime(params, first), ("tau_lower",), "carleman-audit")

    report.tables["conjugation"] = write_table(out_dir, "conjugation", _conjugation_rows(config, report))

    betas: List[Optional[float]] = [None] + list(config.carleman_betas)
    cells = [
        SweepCell(tau=tau, lam=config.lam, M=M, N=regime_time_steps(params.with_tau(tau), config.T), beta=beta)
        for tau in taus
        for beta in betas
        for M in config.carleman_space_sizes
    ]
    results = sweep_carleman(cells, sys, params, config.samples, config.seed, workers, CARLEMAN_FAMILY, config.C_lambda_local)
    rows = [row for result in results for row in result.rows]
    report.tables["carleman"] = write_table(out_dir, "carleman", rows)
    summary = []
    for result in results:
        entry = {"cell_id": result.cell_id, "tau": result.cell.tau, "lambda": result.cell.lam,
                 "beta": sys.beta if result.cell.beta is None else result.cell.beta, "M": result.cell.M,
                 "N": result.cell.N, "dx": result.dx, "dt": result.dt, "max_ratio": result.max_ratio,
                 "skipped": result.skipped or ""}
        entry.update({f"margin_{k}": v for k, v in result.margins.items()})
        summary.append(entry)
        report.timings[f"carleman_cell_{result.cell_id}"] = result.wall_time
    report.tables["carleman_cells"] = write_table(out_dir, "carleman_cells", summary)
    if not rows:
        report.check("carleman_cells_in_regime", 0.0, 1.0, "every cell was skipped", passed=False)
        return

    terms = [float(v) for row in rows for k, v in row.items() if k.startswith(("lhs_", "rhs_"))]
    report.check("carleman_terms_nonnegative", -min(terms), 0.0)

    for (tau, beta), group in itertools.groupby(summary, key=lambda s: (s["tau"], s["beta"])):
        ratios = [s["max_ratio"] for s in group if not s["skipped"]]
        report.experiment("carleman_ratio_spread", _spread(ratios), 2.0, f"tau={tau:.4g} beta={beta:.4g}")

    cell = next(r.cell for r in results if not r.skipped)
    meshes = build_meshes(cell.M, cell.N, config.T)
    cell_params = params.with_tau(cell.tau)
    weights = build_weights(cell_params, build_psi(config.omega0, cell_params.c0, cell_params.k_margin, meshes[0]), meshes)
    q_T = sample_family(CARLEMAN_FAMILY, 1, meshes[0], config.seed, Stream.CARLEMAN, 0)[0][2]
    q = adjoint_solve(sys, meshes, q_T)
    base = evaluate_carleman(q, weights, sys, meshes, config.C_lambda_local).ratio
    scaled = evaluate_carleman(q.as_grid() * HOMOGENEITY_FACTOR, weights, sys, meshes, config.C_lambda_local).ratio
    report.check("carleman_homogeneity", abs(scaled - base) / abs(base), HOMOGENEITY_TOL, f"M={cell.M} N={cell.N}")


def run_energy(config: ExperimentConfig, report: RunReport, out_dir: str, workers: int) -> None:
    meshes = config.meshes()
    rows = []
    for case, (c, gamma) in enumerate(ENERGY_CASES):
        sys = replace(config.system(), c=c, gamma=gamma)
        for sample in range(config.energy_samples):
            q_T = complex_gaussian(rng_for(config.seed, Stream.ENERGY, case, sample), meshes[0].M + 2)
            result = energy_check(sys, meshes, q_T)
            rows.append({"c": c, "gamma": gamma, "sample_id": sample, "step_bound": result.step_bound,
                         "max_step_ratio": float(np.max(result.step_ratios)), "worst_step_margin": result.worst_step_margin,
                         "worst_aggregate_margin": result.worst_aggregate_margin,
                         "balance_relative": result.balance_residual / result.balance_scale})
    report.tables["energy"] = write_table(out_dir, "energy", rows)
    report.check("energy_margin", -min(min(r["worst_step_margin"], r["worst_aggregate_margin"]) for r in rows), ENERGY_TOL)
    report.check("energy_balance", max(r["balance_relative"] for r in rows), ENERGY_TOL)


def run_observability(config: ExperimentConfig, report: RunReport, out_dir: str, workers: int) -> None:
    sys = config.system()
    rows, summary = [], []
    for cell, (M, N) in enumerate(config.family()):
        meshes = build_meshes(M, N, config.T)
        reports = []
        for sample_id, kind, q_T in sample_family(OBSERVABILITY_FAMILY, config.samples, meshes[0], config.seed, Stream.OBSERVABILITY, cell):
            obs = observability_quotient(sys, meshes, q_T, config.vartheta, config.C_pen, config.dx_hat, config.dx_tilde_const)
            reports.append(obs)
            rows.append({"M": M, "N": N, "sample_id": sample_id, "sample_kind": kind.value, "quotient": obs.quotient,
                         "initial_energy": obs.initial_energy, "omega_energy": obs.omega_energy,
                         "terminal_energy": obs.terminal_energy, "penalty_phi": obs.penalty_phi})
        c_obs = max(r.quotient for r in reports)
        first = reports[0]
        summary.append({"M": M, "N": N, "dx": first.dx, "dt": first.dt, "c_obs": c_obs, "trend": obs_trend(sys, c_obs),
                        "penalty_phi": first.penalty_phi, "dx_tilde": first.dx_tilde, "dt_bound": first.dt_bound,
                        "dx_ok": first.dx_ok, "dt_ok": first.dt_ok})
        report.check("observability_finite", 0.0, 0.0, f"M={M} N={N} c_obs={c_obs:.4g}", passed=math.isfinite(c_obs))

        _, _, q_T = sample_family(OBSERVABILITY_FAMILY, 1, meshes[0], config.seed, Stream.OBSERVABILITY, cell)[0]
        base = observability_quotient(sys, meshes, q_T, config.vartheta, config.C_pen).quotient
        scaled = observability_quotient(sys, meshes, HOMOGENEITY_FACTOR * q_T, config.vartheta, config.C_pen).quotient
        report.check("observability_homogeneity", abs(scaled - base) / base, HOMOGENEITY_TOL, f"M={M} N={N}")
    report.tables["observability"] = write_table(out_dir, "observability", rows)
    report.tables["observability_summary"] = write_table(out_dir, "observability_summary", summary)
    report.experiment("observability_constant_spread", _spread([s["c_obs"] for s in summary]), 2.0,
                      "in_regime=" + ",".join(str(s["dx_ok"] and s["dt_ok"]) for s in summary))


def _gramian_checks(config: ExperimentConfig, report: RunReport) -> None:
    sys = config.system()
    meshes = config.meshes()
    space = meshes[0]
    rng = rng_for(config.seed, Stream.CONTROL, 0, 1)
    a, b = complex_gaussian(rng, space.M + 2), complex_gaussian(rng, space.M + 2)
    La, Lb = gramian_apply(sys, meshes, a).values, gramian_apply(sys, meshes, b).values
    energy = omega_energy(sys, adjoint_solve(sys, meshes, a))
    report.check("gramian_energy", abs(weighted_inner(space, La, a).real - energy) / energy, GRAMIAN_TOL)
    left, right = weighted_inner(space, La, b), weighted_inner(space, a, Lb)
    report.check("gramian_symmetry", abs(left - right) / max(abs(left), 1e-300), GRAMIAN_TOL)

    omeshes = build_meshes(*ORACLE_MESH, config.T)
    g = _initial(config, omeshes[0])
    size = omeshes[0].M + 2
    dense = np.column_stack([gramian_apply(sys, omeshes, np.eye(size)[k]).values for k in range(size)])
    free = forward_solve(sys, omeshes, g).terminal
    expected = np.linalg.solve(ORACLE_EPSILON * np.eye(size) + dense, -free)
    hum = hum_solve(sys, omeshes, g, ORACLE_EPSILON, ORACLE_CG_TOL, config.cg_maxiter)
    report.check("cg_dense_oracle", float(np.max(np.abs(hum.q_hat - expected)) / np.max(np.abs(expected))), CG_ORACLE_TOL,
                 f"M={ORACLE_MESH[0]} N={ORACLE_MESH[1]} eps={ORACLE_EPSILON}")


def run_control(config: ExperimentConfig, report: RunReport, out_dir: str, workers: int) -> None:
    sys = config.system()
    meshes = config.meshes()
    _gramian_checks(config, report)

    g = _initial(config, meshes[0])
    ladder = epsilon_ladder(sys, meshes, g, config.epsilons, config.cg_tol, config.cg_maxiter)
    report.tables["control_ladder"] = write_table(out_dir, "control_ladder", ladder)
    growth = max((b["terminal_norm"] - a["terminal_norm"]) / a["terminal_norm"] for a, b in zip(ladder, ladder[1:])) if len(ladder) > 1 else 0.0
    report.check("terminal_norm_monotone", growth, 1e-8)
    shrink = max((a["control_norm"] - b["control_norm"]) / max(b["control_norm"], 1e-300) for a, b in zip(ladder, ladder[1:])) if len(ladder) > 1 else 0.0
    report.check("control_norm_monotone", shrink, 1e-8)
    worst = min(row["certificate_margin"] / max(row["certificate_rhs"], row["certificate_lhs"], 1e-300) for row in ladder)
    report.check("hum_certificate", -worst, CERTIFICATE_TOL)

    smallest = hum_solve(sys, meshes, g, min(config.epsilons), config.cg_tol, config.cg_maxiter)
    field = smallest.control.to_grid()
    space, tmesh = meshes
    report.tables["control_field"] = write_table(
        out_dir,
        "control_field",
        [{"t": t, "x": space.primal_nodes[j], "v": row[j]} for t, row in zip(tmesh.dual_times[:-1], field.values) for j in smallest.control.indices],
    )
    report.tables["control_state"] = write_table(
        out_dir,
        "control_state",
        [{"x": x, "free": f, "controlled": y} for x, f, y in zip(space.primal_nodes, smallest.free_terminal, smallest.trajectory.terminal)],
    )

    refinement = refinement_table(sys, config.family(), lambda mesh: _initial(config, mesh), config.vartheta, config.C_pen,
                                  config.cg_tol, config.cg_maxiter, config.dx_hat, config.dx_tilde_const)
    report.tables["control_refinement"] = write_table(out_dir, "control_refinement", refinement)
    regime = "in_regime=" + ",".join(str(bool(r["dx_ok"] and r["dt_ok"])) for r in refinement)
    report.experiment("terminal_constant_spread", _spread([r["terminal_constant"] for r in refinement]), 4.0, regime)
    report.experiment("control_constant_spread", _spread([r["control_constant"] for r in refinement]), 2.0, regime)


RUNNERS: Dict[str, Runner] = {
    "identities": run_identities,
    "weights-audit": run_weights_audit,
    "solve": run_solve,
    "carleman-audit": run_carleman_audit,
    "energy": run_energy,
    "observability": run_observability,
    "control": run_control,
}
SUBCOMMANDS: Tuple[str, ...] = tuple(RUNNERS) + ("full-suite",)


def run(subcommand: str, config: ExperimentConfig, out_dir: Optional[str] = None, workers: Optional[int] = None) -> RunReport:
    """Execute one subcommand (or all of them) and write report.json next to the tables."""
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}; expected one of {', '.join(SUBCOMMANDS)}")
    out_dir = out_dir or config.out_dir
    workers = workers or DEFAULT_WORKERS
    report = RunReport(
        subcommand=subcommand,
        seed=config.seed,
        config=config.model_dump(mode="json"),
        regime=config.regime().as_records(),
    )
    names = list(RUNNERS) if subcommand == "full-suite" else [subcommand]
    for name in names:
        started = time.perf_counter()
        logger.info("running %s out_dir=%s workers=%d", name, out_dir, workers)
        try:
            RUNNERS[name](config, report, out_dir, workers)
        except (ValueError, RuntimeError) as exc:
            logger.error("%s failed: %s", name, exc)
            report.errors.append(f"{name}: {type(exc).__name__}: {exc}")
        report.timings[name] = time.perf_counter() - started
    write_report(out_dir, report)
    if report.passed:
        clear_failed(out_dir)
    else:
        failed = [f"check {c.name}: value={c.value:.4e} bound={c.bound:.4e} {c.detail}" for c in report.checks if not c.passed]
        mark_failed(out_dir, report.errors + failed)
    logger.info("%s finished passed=%s checks=%d experiments=%d", subcommand, report.passed, len(report.checks), len(report.experiments))
    if report.unmet_experiments:
        logger.warning("experiments outside target: %s", "; ".join(report.unmet_experiments))
    return report
