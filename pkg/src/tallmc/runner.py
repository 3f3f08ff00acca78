"""From resolved run specs to executed chains and their artifacts.

The runner builds the model and its variate machinery, executes the chain,
and writes the trace CSV, the manifest JSON (spec echo, seed, timings,
adaptation summary, content hashes), the efficiency report, and the report
figures.  All file writes are atomic (write-temp-then-rename).
"""

from __future__ import annotations

import json
import os
import time

import numpy as np

from . import plots
from .config import dataset_fingerprint
from .diagnostics import (
    compare_posteriors,
    density_table,
    efficiency_report,
    error_scaling_study,
)
from .engine import EngineConfig, find_mode_and_curvature, run_chain
from .errors import InvalidConfigError, TallMCError, UnsupportedOperationError
from .estimator import CheapVariates
from .models import build_model, file_sha256, generate_dataset, load_dataset
from .sampling import CorrelationParams
from .surface import SurfaceVariates, fit_surface
from .variates import Standardizer, TaylorVariates, pps_weights

__all__ = ["execute_generate", "execute_run", "execute_compare",
           "execute_scaling_study", "PACKAGE_VERSION"]

PACKAGE_VERSION = "0.1.0"


# --------------------------------------------------------------------------
# small file helpers


def _atomic_write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, payload):
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    f = float(v)
    if np.isnan(f):
        return "nan"
    if f.is_integer() and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def write_rows_csv(path, header, rows):
    lines = [",".join(header)]
    lines.extend(",".join(str(c) if isinstance(c, str) else _fmt(c) for c in row)
                 for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def write_trace_csv(trace, path):
    header = (["iteration", "phase"] + list(trace.param_names)
              + ["accepted", "m", "sigma2", "sigma2_first", "cost_cum",
                 "adapt_rounds", "adapt_limit", "refreshed"])
    rows = []
    for t in range(trace.completed):
        phase = "burnin" if t < trace.burnin else "sample"
        rows.append([t, phase] + [trace.theta[t, j] for j in range(trace.theta.shape[1])]
                    + [trace.accepted[t], trace.m[t], trace.sigma2[t],
                       trace.sigma2_first[t], trace.cost[t],
                       trace.adapt_rounds[t], trace.adapt_limit[t],
                       trace.refreshed[t]])
    write_rows_csv(path, header, rows)


# --------------------------------------------------------------------------
# model and machinery assembly


def build_data(model_block, rng=None):
    """Load the dataset file, or generate it from the spec block."""
    if model_block["dataset"] is not None:
        return load_dataset(model_block["kind"], model_block["dataset"])
    params = dict(model_block["generator"])
    seed = params.pop("seed")
    return generate_dataset(model_block["kind"], params,
                            np.random.default_rng(np.random.SeedSequence(seed)))


def _setup_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(97,)))


def build_machinery(model, spec, mode_info):
    """Variates, sampling pool and weight function implied by the spec."""
    est = spec["estimator"]
    kind = est["kind"]
    pool = np.setdiff1d(np.arange(model.n), model.always_evaluate)
    variates = None
    weight_fn = None
    weight_cost = 0.0
    setup_rng = _setup_rng(spec["engine"]["seed"])

    method = est["variates"]
    if method == "taylor":
        cached = None
        cache_path = est["cluster_cache"]
        if cache_path is not None and os.path.exists(cache_path):
            from .variates import load_cluster_cache

            cached = load_cluster_cache(cache_path,
                                        model.proxy_points()[pool],
                                        est["epsilon"])
        variates = TaylorVariates(
            model, est["epsilon"], subset=pool,
            hessian_mode=est["hessian_mode"],
            theta_ref=mode_info[0] if est["hessian_mode"] == "fixed" else None,
            clusters=cached,
        )
        if cache_path is not None and cached is None:
            from .variates import save_cluster_cache

            save_cluster_cache(cache_path, variates.clusters, variates.points)
    elif method in ("surface-tps", "surface-gp"):
        surf = est["surface"]
        points = model.proxy_points()[pool]
        std = Standardizer.fit(points)
        z = std.transform(points)
        n_train = max(2, int(round(surf["train_fraction"] * pool.size)))
        train_positions = np.sort(setup_rng.choice(pool.size, n_train, replace=False))
        reference = model.contributions(mode_info[0], pool)
        fit = fit_surface(
            z, train_positions, reference,
            method="thin-plate" if method == "surface-tps" else "gaussian-process",
            hyperparam_grid=(surf["ridge_grid"] if method == "surface-tps"
                             else surf["lengthscale_grid"]),
            n_knots=surf["n_knots"], rng=setup_rng,
            residual_adjust=surf["residual_adjust"])
        variates = SurfaceVariates(model, fit, observation_ids=pool)
        pool = variates.predict_ids
    elif method == "coarse":
        variates = CheapVariates(model, subset=pool)
    elif method != "none":
        raise InvalidConfigError(f"unknown variates method {method!r}")

    if kind == "hh-pps":
        source = est["weights"]
        try:
            _, shift = model.sign_split(mode_info[0], np.array([0]))
        except (UnsupportedOperationError, AttributeError):
            shift = 0.0
        if source == "coarse":
            pool_ids = pool

            def weight_fn(theta, _ids=pool_ids, _shift=shift):
                return pps_weights(model.cheap_contributions(theta, _ids) - _shift)

            weight_cost = pool.size * (model.cheap_eval_cost or model.eval_cost)
        elif source == "surface":
            if not isinstance(variates, SurfaceVariates):
                raise InvalidConfigError("surface weights need surface variates")
            fitted = variates

            def weight_fn(theta, _shift=shift):
                values = fitted.evaluate(theta)
                return pps_weights(values.values - _shift)

            weight_cost = fitted.train_ids.size * model.eval_cost
            variates = None  # HH has no control-variate total
        else:
            raise InvalidConfigError(f"unknown weight source {source!r}")

    return variates, pool, weight_fn, weight_cost


def build_engine_config(spec, n_pool, n_full):
    est = spec["estimator"]
    eng = spec["engine"]
    correlation = None
    if est["kappa"] is not None or est["phi"] is not None:
        if est["m"] is not None:
            expected_m = int(est["m"])
        elif est["fraction"] is not None:
            expected_m = max(2, int(round(est["fraction"] * n_full)))
        else:
            raise InvalidConfigError("correlated proposals need fraction or m")
        fraction = min(expected_m, n_pool - 1) / n_pool
        if est["kappa"] is not None:
            correlation = CorrelationParams(kappa=est["kappa"], fraction=fraction)
        else:
            correlation = CorrelationParams.from_phi(est["phi"], fraction)
    return EngineConfig(
        iterations=int(eng["iterations"]),
        burnin_fraction=float(eng["burnin"]),
        proposal=eng["proposal"],
        estimator=est["kind"],
        m=est["m"],
        fraction=est["fraction"],
        omega=float(est["omega"]),
        correlation=correlation,
        v_max=est["v_max"],
        target_sigma2=float(est["target_sigma2"]),
        target_acceptance=eng["target_acceptance"],
        seed=int(eng["seed"]),
        initial_scale=eng["initial_scale"],
        imh_dof=float(eng["imh_dof"]),
        max_adapt_rounds=int(eng["max_adapt_rounds"]),
        m_floor=est["m_floor"],
        adapt_batch=int(eng["adapt_batch"]),
    ).validate()


def run_from_spec(spec, mode_info=None):
    """Build everything a resolved spec describes and run the chain."""
    data = build_data(spec["model"])
    model = build_model(spec["model"]["kind"], data, spec["model"]["options"])
    if mode_info is None:
        mode_info = find_mode_and_curvature(model)
    variates, pool, weight_fn, weight_cost = build_machinery(model, spec, mode_info)
    config = build_engine_config(spec, pool.size, model.n)
    trace = run_chain(model, config, variates=variates, weight_fn=weight_fn,
                      weight_cost=weight_cost, pool=pool, mode_info=mode_info)
    return model, trace


# --------------------------------------------------------------------------
# subcommand executors


def execute_generate(spec):
    """Write a synthetic dataset plus its provenance record."""
    out_dir = spec["output"]["directory"]
    os.makedirs(out_dir, exist_ok=True)
    data = build_data(spec["model"])
    path = os.path.join(out_dir, f"{spec['model']['kind']}_data.csv")
    data.save(path)
    provenance = {
        "spec": spec,
        "package_version": PACKAGE_VERSION,
        "rows": int(np.asarray(data.y).size),
        "outputs": {os.path.basename(path): file_sha256(path)},
    }
    prov_path = os.path.join(out_dir, "provenance.json")
    write_json(prov_path, provenance)
    return {"dataset": path, "provenance": prov_path}


def _report_payload(trace, model, baseline_report=None):
    draws = trace.draws()
    report = efficiency_report(
        draws, trace.sampling_cost() or 1.0, param_names=trace.param_names,
        baseline=baseline_report,
        mean_sampling_fraction=trace.mean_sampling_fraction(),
        acceptance_rate=trace.acceptance_rate())
    return report


def execute_run(spec, out_dir=None, mode_info=None):
    """Run one chain and write trace, manifest, report and figures."""
    out_dir = out_dir or spec["output"]["directory"]
    if out_dir is None:
        raise InvalidConfigError("output.directory is required")
    os.makedirs(out_dir, exist_ok=True)
    started = time.time()
    model, trace = run_from_spec(spec, mode_info=mode_info)
    elapsed = time.time() - started

    trace_path = os.path.join(out_dir, "trace.csv")
    write_trace_csv(trace, trace_path)

    outputs = {"trace.csv": file_sha256(trace_path)}
    report_path = os.path.join(out_dir, "report.json")
    report = None
    if trace.error is None:
        report = _report_payload(trace, model)
        write_json(report_path, report.to_dict())
        outputs["report.json"] = file_sha256(report_path)

    if spec["output"]["plots"] and trace.completed:
        fig_path = os.path.join(out_dir, "trace.png")
        plots.save_trace_figure(trace, fig_path)
        outputs["trace.png"] = file_sha256(fig_path)
        frac_path = os.path.join(out_dir, "sampling_fraction.png")
        plots.save_sampling_fraction_figure(trace, frac_path)
        outputs["sampling_fraction.png"] = file_sha256(frac_path)

    manifest = {
        "spec": spec,
        "package_version": PACKAGE_VERSION,
        "seed": spec["engine"]["seed"],
        "mode": None if trace.mode is None else [float(v) for v in trace.mode],
        "adaptation": {
            "final_scale": trace.final_scale,
            "acceptance_rate": trace.acceptance_rate(),
        },
        "setup_cost": trace.setup_cost,
        "total_cost": trace.total_cost,
        "timings": {"wall_seconds": elapsed},
        "outputs": outputs,
        "error": trace.error,
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_json(manifest_path, manifest)
    if trace.error is not None:
        error_path = os.path.join(out_dir, "error.json")
        write_json(error_path, {"error": trace.error})
        raise TallMCError(
            f"run aborted at iteration {trace.error['iteration']}: "
            f"{trace.error['message']} (partial trace in {trace_path})")
    return {"trace": trace_path, "manifest": manifest_path,
            "report": report_path, "trace_obj": trace, "report_obj": report}


def execute_compare(spec):
    """Run all member specs against a shared dataset and compare them."""
    out_dir = spec["output"]["directory"]
    os.makedirs(out_dir, exist_ok=True)
    fingerprints = {dataset_fingerprint(r["model"]) for r in spec["runs"]}
    if len(fingerprints) != 1:
        raise InvalidConfigError("compare members must share one dataset")

    results = []
    mode_cache = {}
    for run in spec["runs"]:
        run_dir = os.path.join(out_dir, "runs", run["label"])
        key = (run["model"]["kind"], json.dumps(run["model"]["options"], sort_keys=True))
        result = execute_run(run, out_dir=run_dir, mode_info=mode_cache.get(key))
        trace = result["trace_obj"]
        mode_cache.setdefault(key, (trace.mode, trace.sigma_star))
        results.append((run, result))

    baseline_idx = spec["baseline_index"]
    base_trace = results[baseline_idx][1]["trace_obj"]
    base_report = results[baseline_idx][1]["report_obj"]

    rel_rows = []
    frac_rows = []
    samples = {}
    posterior = {}
    for i, (run, result) in enumerate(results):
        trace = result["trace_obj"]
        report = _report_payload(trace, None,
                                 baseline_report=None if i == baseline_idx else base_report)
        label = run["label"]
        samples[label] = trace.draws()
        for j, name in enumerate(trace.param_names):
            rel_rows.append({
                "label": label, "param": name,
                "inefficiency": float(report.inefficiency[j]),
                "ess": float(report.effective_sample_size[j]),
                "ed": float(report.effective_draws[j]),
                "red": (float(report.relative_effective_draws[j])
                        if report.relative_effective_draws is not None else
                        (1.0 if i == baseline_idx else float("nan"))),
                "rif": (float(report.relative_inefficiency[j])
                        if report.relative_inefficiency is not None else
                        (1.0 if i == baseline_idx else float("nan"))),
            })
        frac_rows.append({
            "label": label,
            "mean_sampling_fraction": trace.mean_sampling_fraction(),
            "acceptance_rate": trace.acceptance_rate(),
            "sampling_cost": trace.sampling_cost(),
        })
        if i != baseline_idx:
            cmp = compare_posteriors(trace.draws(), base_trace.draws(),
                                     param_names=trace.param_names)
            posterior[label] = {
                "mean_diff_sd": [float(v) for v in cmp["mean_diff_sd"]],
                "sd_ratio": [float(v) for v in cmp["sd_ratio"]],
                "ks": [float(v) for v in cmp["ks"]],
            }

    cmp_dir = os.path.join(out_dir, "comparison")
    os.makedirs(cmp_dir, exist_ok=True)
    outputs = {}

    red_path = os.path.join(cmp_dir, "red_rif.csv")
    write_rows_csv(red_path,
                   ["label", "param", "inefficiency", "ess", "ed", "red", "rif"],
                   [[r["label"], r["param"], r["inefficiency"], r["ess"],
                     r["ed"], r["red"], r["rif"]] for r in rel_rows])
    outputs["red_rif.csv"] = file_sha256(red_path)

    frac_path = os.path.join(cmp_dir, "sampling_fractions.csv")
    write_rows_csv(frac_path,
                   ["label", "mean_sampling_fraction", "acceptance_rate",
                    "sampling_cost"],
                   [[r["label"], r["mean_sampling_fraction"],
                     r["acceptance_rate"], r["sampling_cost"]] for r in frac_rows])
    outputs["sampling_fractions.csv"] = file_sha256(frac_path)

    names = results[0][1]["trace_obj"].param_names
    dens_rows = density_table(samples)
    kde_path = os.path.join(cmp_dir, "kde_bins.csv")
    write_rows_csv(kde_path, ["param_index", "label", "grid", "density"],
                   [[str(j), label, g, d] for j, label, g, d in dens_rows])
    outputs["kde_bins.csv"] = file_sha256(kde_path)

    posterior_path = os.path.join(cmp_dir, "posterior_comparison.json")
    write_json(posterior_path, {"baseline": spec["runs"][baseline_idx]["label"],
                                "comparisons": posterior})
    outputs["posterior_comparison.json"] = file_sha256(posterior_path)

    if spec["output"]["plots"]:
        kde_fig = os.path.join(cmp_dir, "kde_overlays.png")
        plots.save_kde_overlays(dens_rows, names, kde_fig)
        outputs["kde_overlays.png"] = file_sha256(kde_fig)
        red_fig = os.path.join(cmp_dir, "red_bars.png")
        plots.save_relative_bars(rel_rows, "red", red_fig, "relative effective draws")
        outputs["red_bars.png"] = file_sha256(red_fig)
        rif_fig = os.path.join(cmp_dir, "rif_bars.png")
        plots.save_relative_bars(rel_rows, "rif", rif_fig, "relative inefficiency")
        outputs["rif_bars.png"] = file_sha256(rif_fig)

    manifest = {
        "spec": spec,
        "package_version": PACKAGE_VERSION,
        "outputs": outputs,
        "members": {run["label"]: result["manifest"] for run, result in results},
    }
    manifest_path = os.path.join(cmp_dir, "manifest.json")
    write_json(manifest_path, manifest)
    return {"comparison_dir": cmp_dir, "manifest": manifest_path,
            "rel_rows": rel_rows, "frac_rows": frac_rows, "posterior": posterior}


def execute_scaling_study(spec):
    """Empirical error-scaling table from a resolved scaling spec."""
    out_dir = spec["output"]["directory"]
    os.makedirs(out_dir, exist_ok=True)
    data = build_data(spec["model"])
    model = build_model(spec["model"]["kind"], data, spec["model"]["options"])
    mode_info = find_mode_and_curvature(model)
    run_like = {"model": spec["model"],
                "estimator": spec["estimator"],
                "engine": {"seed": spec["seed"]}}
    variates, pool, _, _ = build_machinery(model, run_like, mode_info)

    thetas_spec = spec["thetas"]
    if isinstance(thetas_spec, list):
        thetas = [np.asarray(t, dtype=float) for t in thetas_spec]
    else:
        rng = np.random.default_rng(np.random.SeedSequence(spec["seed"],
                                                           spawn_key=(7,)))
        count = int(thetas_spec.get("count", 1))
        sd = float(thetas_spec.get("perturb_sd", 0.0))
        scales = np.sqrt(np.diag(mode_info[1]))
        thetas = [mode_info[0] + sd * scales * rng.standard_normal(model.dim)
                  for _ in range(count)]

    study_rng = np.random.default_rng(np.random.SeedSequence(spec["seed"],
                                                             spawn_key=(11,)))
    study = error_scaling_study(model, thetas, spec["m_grid"],
                                spec["replications"], study_rng,
                                variates=variates, pool=pool)
    outputs = {}
    table_path = os.path.join(out_dir, "scaling.csv")
    write_rows_csv(table_path, ["theta_index", "m", "error", "median_error"],
                   [[r["theta_index"], r["m"], r["error"], r["median_error"]]
                    for r in study["rows"]])
    outputs["scaling.csv"] = file_sha256(table_path)
    slopes_path = os.path.join(out_dir, "slopes.json")
    write_json(slopes_path, {"slopes": study["slopes"],
                             "median_slopes": study["median_slopes"],
                             "m_grid": study["m_grid"],
                             "thetas": [[float(v) for v in t] for t in thetas]})
    outputs["slopes.json"] = file_sha256(slopes_path)
    if spec["output"]["plots"]:
        fig_path = os.path.join(out_dir, "scaling.png")
        plots.save_scaling_figure(study["rows"], fig_path)
        outputs["scaling.png"] = file_sha256(fig_path)
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_json(manifest_path, {"spec": spec, "package_version": PACKAGE_VERSION,
                               "outputs": outputs})
    return {"table": table_path, "slopes": study["slopes"],
            "manifest": manifest_path, "rows": study["rows"]}
