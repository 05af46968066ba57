"""Task execution: every experiment reads one config, writes CSV artifacts,
an optional SVG chart, and a flat key=value summary into its output directory.

Exit-status contract (mapped by the CLI): 0 success, 2 config violation,
3 numerical failure (the summary of a failed run is not written)."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import config as cfgmod
from . import coupling, deviations, rates, reports, variance
from .blocks import BlockScheme, block_index
from .coeffs import estimate_delta, fit_decay, fit_tail
from .errors import InsufficientSignalError, LabError
from .models import (
    MatrixModel,
    lyapunov_estimate,
    observable_samples,
    simulate_trajectory,
    wedge_drift_estimate,
)
from .streams import InnovationStream


@dataclass
class RunResult:
    status: int
    out_dir: str
    summary: dict


def run(cfg: cfgmod.ExperimentConfig) -> RunResult:
    """Execute the configured task and write its artifacts."""
    model = cfg.model()
    stream = InnovationStream(cfg.seed, (cfg.task,))
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    reports.echo_config(out, cfg.raw_text)
    # thread count is deliberately not echoed: outputs must be byte-identical
    # no matter how the work was partitioned
    summary = {
        "task": cfg.task,
        "seed": cfg.seed,
        "burnInNote": "stationary starts approximated by burn-in; bias controlled "
                      "by model contraction",
    }
    task_fn = {
        "simulate": _task_simulate,
        "delta": _task_delta,
        "tail": _task_tail,
        "lyapunov": _task_lyapunov,
        "variance": _task_variance,
        "asip": _task_asip,
        "deviations": _task_deviations,
        "report": _task_report,
    }[cfg.task]
    summary.update(task_fn(cfg, model, stream, out))
    reports.write_summary(os.path.join(out, "summary.txt"), summary)
    return RunResult(status=0, out_dir=out, summary=summary)


def _burn_in(cfg, model):
    return cfg.burn_in if cfg.burn_in is not None else model.suggested_burn_in()


# ---------------------------------------------------------------------------
# simulate


def _task_simulate(cfg, model, stream, out):
    sec = cfg.section("simulate")
    n = cfgmod.get(sec, "n", int, 200, "simulate")
    replicates = cfgmod.get(sec, "replicates", int, 4, "simulate")
    aux = tuple(sec.get("aux") or ())
    coeff_pair = sec.get("coeffPair")
    if coeff_pair is not None:
        coeff_pair = (np.asarray(coeff_pair[0], float), np.asarray(coeff_pair[1], float))
    checkpoints = sec.get("checkpoints")
    traj = simulate_trajectory(
        model, "stationary", n, stream, replicates=replicates, aux=aux,
        checkpoints=checkpoints, coeff_pair=coeff_pair,
    )
    header = ["replicate", "k", "X", "S"] + list(aux)
    rows = []
    checks = traj.checkpoints
    for r in range(replicates):
        for ci, k in enumerate(checks):
            row = [r, int(k), traj.x[r, k - 1], traj.s[r, k - 1]]
            row.extend(traj.aux[name][r, ci] for name in aux)
            rows.append(row)
    reports.write_csv(os.path.join(out, "trajectory.csv"), header, rows)
    if cfg.plots:
        reports.svg_line_chart(
            os.path.join(out, "trajectory.svg"), checks,
            {f"path {r}": traj.s[r, checks - 1] for r in range(min(replicates, 6))},
            "partial sums", "n", "S_n",
        )
    return {"n": n, "replicates": replicates, "burnIn": _burn_in(cfg, model)}


# ---------------------------------------------------------------------------
# delta


def _task_delta(cfg, model, stream, out):
    sec = cfg.section("delta")
    n_grid = cfgmod.int_list(sec, "nGrid", range(0, 17), "delta")
    replicates = cfgmod.get(sec, "replicates", int, 4000, "delta")
    sensitivity = cfgmod.get(sec, "sensitivity", bool, True, "delta")
    burn = _burn_in(cfg, model)
    est = estimate_delta(
        model, n_grid, replicates, stream.split("estimate"), burn_in=burn,
        threads=cfg.threads, sensitivity=sensitivity,
        block_size=cfgmod.get(sec, "blockSize", int, 256, "delta"),
    )
    reports.write_csv(os.path.join(out, "delta.csv"),
                      ["n", "deltaHat", "stderr", "replicates"], est.rows())
    if est.delta_hat_2x is not None:
        reports.write_csv(
            os.path.join(out, "delta_sensitivity.csv"), ["n", "deltaHat2x"],
            list(zip(est.n_grid.tolist(), est.delta_hat_2x)),
        )
    summary = {"burnIn": burn, "replicates": replicates}
    fit_lags = sec.get("fitLags")
    try:
        fit = fit_decay(est, fit_lags=fit_lags)
        reports.write_csv(os.path.join(out, "decay_fit.csv"),
                          ["c", "gamma1", "r2"],
                          [(fit.c, fit.gamma1, fit.r_squared)])
        summary.update(cHat=fit.c, gamma1Hat=fit.gamma1, decayR2=fit.r_squared)
    except InsufficientSignalError as exc:
        summary["decayFitSkipped"] = str(exc)
    if cfg.plots:
        pos = est.delta_hat > 0
        if pos.any():
            reports.svg_line_chart(
                os.path.join(out, "delta.svg"), est.n_grid[pos],
                {"deltaHat": est.delta_hat[pos]}, "coupling coefficients", "n",
                "delta", log_y=True,
            )
    return summary


# ---------------------------------------------------------------------------
# tail


def _task_tail(cfg, model, stream, out):
    sec = cfg.section("tail")
    count = cfgmod.get(sec, "samples", int, 200_000, "tail")
    xs = observable_samples(model, count, stream.split("samples"),
                            burn_in=_burn_in(cfg, model))
    if not model.observable_symmetric:
        xs = xs - xs.mean()  # tail profiles concern the centered observable
    fit = fit_tail(np.abs(xs))
    reports.write_csv(os.path.join(out, "tail_fit.csv"), ["b", "gamma2"],
                      [(fit.b, fit.gamma2)])
    reports.write_csv(
        os.path.join(out, "tail_grid.csv"), ["threshold", "level"],
        list(zip(fit.thresholds.tolist(), fit.levels.tolist()[: fit.thresholds.size])),
    )
    return {"bHat": fit.b, "gamma2Hat": fit.gamma2, "samples": count,
            "gridViolations": fit.grid_violations}


# ---------------------------------------------------------------------------
# lyapunov


def _task_lyapunov(cfg, model, stream, out):
    sec = cfg.section("lyapunov")
    length = cfgmod.get(sec, "length", int, 100_000, "lyapunov")
    replicates = cfgmod.get(sec, "replicates", int, 8, "lyapunov")
    lam, err = lyapunov_estimate(model, length, stream.split("norm"),
                                 replicates=replicates)
    rows = [("log_norm", lam, err, length, replicates)]
    summary = {"lambdaHat": lam, "lambdaStderr": err, "length": length}
    if cfgmod.get(sec, "wedge", bool, True, "lyapunov"):
        drift, derr = wedge_drift_estimate(model, length, stream.split("wedge"),
                                           replicates=replicates)
        rows.append(("log_wedge", drift, derr, length, replicates))
        summary.update(wedgeDriftHat=drift, wedgeDriftStderr=derr)
    reports.write_csv(os.path.join(out, "lyapunov.csv"),
                      ["observable", "estimate", "stderr", "n", "replicates"], rows)
    return summary


# ---------------------------------------------------------------------------
# variance


def _task_variance(cfg, model, stream, out):
    sec = cfg.section("variance")
    n_grid = cfgmod.int_list(sec, "nGrid", [16, 32, 64, 128], "variance")
    lag_grid = cfgmod.int_list(sec, "lagGrid", range(0, 33), "variance")
    k_grid = cfgmod.int_list(sec, "kGrid", [], "variance")
    replicates = cfgmod.get(sec, "replicates", int, 4000, "variance")
    rinner = cfgmod.get(sec, "rinner", int, 8, "variance")
    burn = _burn_in(cfg, model)
    est = variance.long_run_variance(
        model, n_grid, replicates, stream.split("sigma2"), burn_in=burn,
        threads=cfg.threads,
        cross_check_lags=cfgmod.int_list(sec, "crossCheckLags", range(0, 21), "variance"),
    )
    reports.write_csv(os.path.join(out, "var_sn.csv"), ["n", "varSn_over_n"],
                      list(zip(est.n_grid.tolist(), est.var_over_n)))
    summary = {
        "sigma2Hat": est.sigma2,
        "sigma2CrossCheck": est.cross_check,
        "sigma2Method": est.method,
        "burnIn": burn,
        "noiseDominated": est.noise_dominated,
    }
    if k_grid:
        scheme_sec = sec.get("scheme")
        scheme, fits_summary = _resolve_scheme(cfg, model, stream, scheme_sec)
        summary.update(fits_summary)
        summary.update(_scheme_summary(scheme))
        max_m = max(scheme.lag(k) for k in k_grid)
        horizon = max(max(lag_grid), max_m + 4)
        lags = sorted(set(range(0, horizon + 1)))
        cov_est = variance.CovarianceEstimator(
            model, max_m + horizon + 1, replicates, stream.split("cov"), burn_in=burn
        )
        cov = cov_est.covariance_set(lags, scheme, ks=k_grid, rinner=rinner)
        bound = _tail_bound_for(scheme)
        nu_rows = []
        for k in k_grid:
            nu = variance.block_variance(
                k, est.sigma2, cov, scheme, tail_bound=bound,
                tail_fraction=float(cfg.tolerances.get("tailCertFraction", 1e-3)),
            )
            est.nu_k[k] = nu
            nu_rows.append((k, nu))
            reports.write_csv(
                os.path.join(out, f"autocov_k{k}.csv"),
                ["lag", "gamma", "gammaTrunc_k", "gammaTilde_k", "stderr"],
                list(zip(cov.lags.tolist(), cov.gamma, cov.gamma_trunc[k],
                         cov.gamma_tilde[k], cov.stderr)),
            )
        reports.write_csv(os.path.join(out, "nu_k.csv"), ["k", "nu_k"], nu_rows)
        summary.update({f"nuK_{k}": est.nu_k[k] for k in k_grid})
    if cfg.plots:
        reports.svg_line_chart(
            os.path.join(out, "var_sn.svg"), est.n_grid,
            {"Var(S_n)/n": est.var_over_n}, "scaled partial-sum variance", "n",
            "Var/n",
        )
    return summary


def _tail_bound_for(scheme):
    """Certified per-lag covariance bound implied by the scheme's own tail and
    decay profiles."""
    from .coeffs import DecayFit, TailFit

    tail = TailFit(b=scheme.b, gamma2=scheme.gamma2, grid_violations=0,
                   thresholds=np.array([scheme.b]), levels=np.array([0.5]))
    decay = DecayFit(c=scheme.c, gamma1=scheme.gamma1, r_squared=1.0,
                     used_lags=np.arange(1, 2))
    return variance.covariance_tail_bounds(tail, decay)


# ---------------------------------------------------------------------------
# asip


def _scheme_summary(scheme: BlockScheme) -> dict:
    return {
        "scheme.gamma1": scheme.gamma1,
        "scheme.gamma2": scheme.gamma2,
        "scheme.c": scheme.c,
        "scheme.b": scheme.b,
        "scheme.c1": scheme.c1,
        "scheme.c2": scheme.c2,
        "scheme.alpha": scheme.alpha,
        "scheme.k0": scheme.k0(),
    }


def _resolve_scheme(cfg, model, stream, scheme_sec):
    """Use the configured scheme, or derive one from fitted decay and tail
    profiles of this model."""
    if scheme_sec:
        return cfgmod.build_scheme(scheme_sec), {"schemeSource": "config"}
    summary = {"schemeSource": "fitted"}
    burn = _burn_in(cfg, model)
    est = estimate_delta(model, range(0, 17), 4000, stream.split("schemedelta"),
                         burn_in=burn, threads=cfg.threads)
    try:
        decay = fit_decay(est, fit_lags=range(4, 17))
        c, g1 = decay.c, decay.gamma1
    except InsufficientSignalError:
        # couplings vanish below the noise floor: any fast-decay profile is
        # admissible, pick the one that makes m_k minimal
        c, g1 = 2.0 * math.log(3.0), 1.0
        summary["decayFitSkipped"] = "coupling deltas below noise floor"
    xs = observable_samples(model, 200_000, stream.split("schemetail"), burn_in=burn)
    if not model.observable_symmetric:
        xs = xs - xs.mean()
    tail = fit_tail(np.abs(xs))
    summary.update(cHat=c, gamma1Hat=g1, bHat=tail.b, gamma2Hat=tail.gamma2)
    return BlockScheme(gamma1=g1, gamma2=tail.gamma2, c=c, b=tail.b), summary


def _task_asip(cfg, model, stream, out):
    sec = cfg.section("asip")
    n = cfgmod.get(sec, "n", int, 3**8, "asip")
    replicates = cfgmod.get(sec, "replicates", int, 64, "asip")
    scheme, summary = _resolve_scheme(cfg, model, stream.split("scheme"),
                                      sec.get("scheme"))
    summary.update(_scheme_summary(scheme))
    burn = _burn_in(cfg, model)
    result = coupling.run_pipeline(
        model, scheme, n, replicates, stream.split("pipeline"),
        rinner=cfgmod.get(sec, "rinner", int, 8, "asip"),
        calib_size=cfgmod.get(sec, "calibration", int, 512, "asip"),
        couple_gaps=cfgmod.get(sec, "coupleGaps", bool, True, "asip"),
        rule=cfgmod.get(sec, "subblockRule", str, "sqrt-over-k", "asip"),
        burn_in=burn, grid=sec.get("grid"),
    )
    grid = result.n_grid
    reports.write_csv(
        os.path.join(out, "paths.csv"),
        ["n", "S_n", "Sdag_n", "Stilde_n", "G_n", "D_n", "truncErr_n", "mdepErr_n"],
        [
            (int(g), result.s[0, g - 1], result.sdag[0, g - 1],
             result.stilde[0, g - 1], result.g[0, g - 1], result.d[0, i],
             result.trunc_err[0, i], result.mdep_err[0, i])
            for i, g in enumerate(grid)
        ],
    )
    reports.write_csv(
        os.path.join(out, "aggregate.csv"),
        ["n", "meanD", "meanTruncErr", "meanMdepErr", "meanResid", "meanDIndependent"],
        [
            (int(g), result.d[:, i].mean(), result.trunc_err[:, i].mean(),
             result.mdep_err[:, i].mean(), result.resid[:, i].mean(),
             result.d_independent[:, i].mean())
            for i, g in enumerate(grid)
        ],
    )
    reports.write_csv(
        os.path.join(out, "scheme.csv"),
        ["k", "M_k", "m_k", "blockStart", "blockEnd"],
        scheme.table(block_index(n)),
    )
    reports.write_csv(
        os.path.join(out, "block_errors.csv"), ["k", "meanMaxGap", "stderr"],
        list(zip(result.block_errors.k.tolist(), result.block_errors.mean_max_gap,
                 result.block_errors.stderr)),
    )
    fit_grid = grid[grid >= 9]
    cols = np.isin(grid, fit_grid)
    fit = rates.fit_rate_envelope(fit_grid, result.d[:, cols], bootstrap=200,
                                  stream=stream.split("bootstrap"))
    summary.update(
        pHat=fit.exponent, pCiLow=fit.ci_low, pCiHigh=fit.ci_high,
        envelopeScale=fit.scale, n=n, replicates=replicates, burnIn=burn,
        observableCenter=result.center,
        meanDFinal=float(result.d[:, -1].mean()),
        meanDIndependentFinal=float(result.d_independent[:, -1].mean()),
    )
    summary.update({f"nuK_{k}": v for k, v in sorted(result.nu_hat.items())})
    drift_rows, drift_stat, drift_env = coupling.variance_drift_check(
        result.nu_hat, result.nu_hat[max(result.nu_hat)], scheme, n
    )
    reports.write_csv(os.path.join(out, "variance_drift.csv"),
                      ["k", "nu_k", "absGapToSigma2"], drift_rows)
    summary.update(lagVarianceStat=drift_stat, lagVarianceEnvelope=drift_env)
    if cfgmod.get(sec, "control", bool, False, "asip"):
        summary["controlCoupledBelowIndependent"] = bool(
            result.d[:, -1].mean() < result.d_independent[:, -1].mean()
        )
    if cfg.plots:
        reports.svg_line_chart(
            os.path.join(out, "discrepancy.svg"), grid,
            {"mean D": result.d.mean(axis=0),
             "independent": result.d_independent.mean(axis=0)},
            "coupling discrepancy", "n", "D", log_y=True,
        )
    return summary


# ---------------------------------------------------------------------------
# deviations


def _task_deviations(cfg, model, stream, out):
    if not isinstance(model, MatrixModel):
        raise LabError("deviations task needs a matrix model")
    sec = cfg.section("deviations")
    n_grid = cfgmod.int_list(sec, "nGrid", [50, 100, 200, 400], "deviations")
    epsilon = cfgmod.get(sec, "epsilon", float, 0.2, "deviations")
    replicates = cfgmod.get(sec, "replicates", int, 5000, "deviations")
    gamma = cfgmod.get(sec, "gamma", float,
                       min(getattr(model.law, "gamma", 1.0), 1.0), "deviations")
    probes = deviations.default_probe_starts(
        model, stream.split("probes"),
        random_batch=cfgmod.get(sec, "probeBatch", int, 16, "deviations"),
    )
    rep_c = deviations.cocycle_deviation(model, probes, n_grid, epsilon, replicates,
                                         stream.split("cocycle"), gamma=gamma)
    rep_n = deviations.norm_deviation(model, n_grid, epsilon, replicates,
                                      stream.split("norm"), gamma=gamma,
                                      lambda_hat=rep_c.lambda_hat)
    rep_w = deviations.wedge_deviation(model, n_grid, epsilon, replicates,
                                       stream.split("wedge"), gamma=gamma)
    for rep, name in ((rep_c, "cocycle"), (rep_n, "norm"), (rep_w, "wedge")):
        reports.write_csv(
            os.path.join(out, f"deviation_{name}.csv"),
            ["n", "epsilon", "probe", "exceedProb", "ciLow", "ciHigh"],
            rep.rows(),
        )
    eta_grid = cfgmod.float_list(sec, "etaGrid", [0.05, 0.1, 0.2], "deviations")
    n_pair = cfgmod.int_list(sec, "nPair", [1000, 10000], "deviations")
    reg = deviations.regularity_check(model, probes, eta_grid, gamma, n_pair,
                                      min(replicates, 3000), stream.split("reg"))
    reports.write_csv(os.path.join(out, "regularity.csv"),
                      ["eta", "gamma", "probe", "statistic", "n"], reg.rows())
    coeff_pair = sec.get("coeffPair")
    if coeff_pair is None:
        x = np.eye(model.dim)[0]
        y = np.eye(model.dim)[-1]
    else:
        x, y = np.asarray(coeff_pair[0], float), np.asarray(coeff_pair[1], float)
    align = deviations.coefficient_alignment(model, x, y, n_grid,
                                             min(replicates, 3000),
                                             stream.split("align"), gamma=gamma)
    reports.write_csv(
        os.path.join(out, "alignment.csv"), ["n", "q95LogAlign", "envelope"],
        list(zip(align.n_grid.tolist(), align.q95_log_align, align.envelope)),
    )
    l_grid = cfgmod.int_list(sec, "lGrid", [1, 4, 16, min(64, max(n_grid))],
                             "deviations")
    gap = deviations.spectral_radius_gap(model, n_grid, l_grid, epsilon,
                                         min(replicates, 3000),
                                         stream.split("gap"))
    reports.write_csv(
        os.path.join(out, "spectral_gap.csv"),
        ["n", "l", "prob", "ciLow", "ciHigh"],
        [
            (int(n), int(l), gap.prob[i, j], gap.ci_low[i, j], gap.ci_high[i, j])
            for i, n in enumerate(gap.n_grid)
            for j, l in enumerate(gap.l_grid)
        ],
    )
    if cfg.plots:
        reports.svg_line_chart(
            os.path.join(out, "deviation.svg"), n_grid,
            {"cocycle": rep_c.exceed_prob, "norm": rep_n.exceed_prob,
             "wedge": rep_w.exceed_prob},
            "running-max exceedance probabilities", "n", "P", log_y=False,
        )
    return {
        "lambdaHat": rep_c.lambda_hat,
        "wedgeDriftHat": rep_w.lambda_hat,
        "cocycleTau": rep_c.kendall_tau,
        "normTau": rep_n.kendall_tau,
        "wedgeTau": rep_w.kendall_tau,
        "regularityStabilityRatio": float(reg.stability_ratio[0]),
        "alignmentIdentityMaxError": align.identity_max_error,
        "alignmentCensored": align.censored,
        "spectralGapFailureTau": gap.failure_trend_tau,
        "epsilon": epsilon,
        "replicates": replicates,
    }


# ---------------------------------------------------------------------------
# report (full battery)


def _task_report(cfg, model, stream, out):
    sec = cfg.section("report")
    summary = {}
    summary.update(_task_delta(cfg, model, stream.split("delta"), out))
    summary.update(_task_tail(cfg, model, stream.split("tail"), out))
    summary.update(_task_variance(cfg, model, stream.split("variance"), out))
    if isinstance(model, MatrixModel):
        lyap = _task_lyapunov(cfg, model, stream.split("lyapunov"), out)
        summary.update(lyap)
        gamma = getattr(model.law, "gamma", None)
        if gamma is not None and gamma > 0:
            summary["matrixRatePower"] = rates.matrix_rate_power(gamma)
    else:
        spec = model.spec
        if spec.innovation.eta <= 1 and (spec.tau + spec.observable.zeta) > 0:
            idx = rates.ar_indices(spec.innovation.eta, spec.tau, spec.observable.zeta)
            summary.update(arGamma1=idx.gamma1, arGamma2=idx.gamma2,
                           arRatePower=idx.rate_power)
    asip_cfg = dict(cfg.sections.get("asip") or {})
    asip_cfg.setdefault("n", cfgmod.get(sec, "asipN", int, 3**7, "report"))
    asip_cfg.setdefault("replicates", cfgmod.get(sec, "asipReplicates", int, 32, "report"))
    cfg.sections["asip"] = asip_cfg
    summary.update(_task_asip(cfg, model, stream.split("asip"), out))
    return summary
