"""Declarative run configuration.

A run spec is a nested key-value document (YAML or JSON; a previously
emitted manifest also works since its ``spec`` block is itself a valid
config).  Resolution makes every default explicit, so the manifest echo is
complete and re-running it reproduces the trace byte for byte.  Overrides
are dotted paths, e.g. ``--set engine.seed=7``.
"""

from __future__ import annotations

import copy
import json

import yaml

from .errors import InvalidConfigError

__all__ = ["load_config", "apply_overrides", "resolve_run_spec",
           "resolve_generate_spec", "resolve_compare_spec",
           "resolve_scaling_spec", "dataset_fingerprint"]


_MODEL_DEFAULTS = {
    "kind": None,
    "dataset": None,
    "generator": None,
}

_SURFACE_DEFAULTS = {
    "train_fraction": 0.05,
    "n_knots": None,
    "ridge_grid": None,
    "lengthscale_grid": None,
    "residual_adjust": False,
}

_ESTIMATOR_DEFAULTS = {
    "kind": "exact",            # exact | de-srs | hh-pps
    "variates": "none",         # none | taylor | surface-tps | surface-gp | coarse
    "weights": "auto",          # hh-pps weight source: auto | coarse | surface
    "epsilon": None,
    "hessian_mode": "recompute",
    "m": None,
    "fraction": None,
    "omega": 1.0,
    "kappa": None,
    "phi": None,
    "v_max": None,
    "m_floor": None,
    "target_sigma2": 1.0,
    "surface": _SURFACE_DEFAULTS,
    "cluster_cache": None,
}

_ENGINE_DEFAULTS = {
    "iterations": None,
    "burnin": 0.1,
    "proposal": "rwm",
    "target_acceptance": None,
    "seed": 0,
    "initial_scale": None,
    "imh_dof": 10,
    "adapt_batch": 50,
    "max_adapt_rounds": 10,
}

_OUTPUT_DEFAULTS = {
    "directory": None,
    "plots": True,
}


def load_config(path):
    """Parse a YAML/JSON config file; unwrap a manifest's spec block."""
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise InvalidConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise InvalidConfigError(f"{path}: top level must be a mapping")
    if "spec" in doc and isinstance(doc["spec"], dict):
        return doc["spec"]
    return doc


def apply_overrides(cfg, overrides):
    """Apply dotted-path key=value overrides; values parse as YAML scalars."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise InvalidConfigError(f"override {item!r} is not of the form path=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = cfg
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise InvalidConfigError(f"override path {path!r} crosses a scalar")
        node[keys[-1]] = yaml.safe_load(raw)
    return cfg


def _merge(defaults, given, where):
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise InvalidConfigError(f"{where}: expected a mapping")
    unknown = set(given) - set(defaults)
    if unknown:
        raise InvalidConfigError(f"{where}: unknown keys {sorted(unknown)}")
    out = {}
    for key, default in defaults.items():
        value = given.get(key, copy.deepcopy(default))
        if isinstance(default, dict) and key in given:
            value = _merge(default, given[key], f"{where}.{key}")
        out[key] = value
    return out


def _require(value, where):
    if value is None:
        raise InvalidConfigError(f"{where} is required")
    return value


def _resolve_model(block):
    block = dict(block or {})
    options = block.pop("options", {})
    if not isinstance(options, dict):
        raise InvalidConfigError("model.options: expected a mapping")
    model = _merge(_MODEL_DEFAULTS, block, "model")
    model["options"] = options
    kind = _require(model["kind"], "model.kind")
    if kind not in ("logistic", "ar1", "weibull", "normal"):
        raise InvalidConfigError(f"model.kind: unknown kind {kind!r}")
    if model["dataset"] is None and model["generator"] is None:
        raise InvalidConfigError("model needs a dataset path or generator block")
    if model["generator"] is not None and not isinstance(model["generator"], dict):
        raise InvalidConfigError("model.generator must be a mapping")
    return model


def resolve_run_spec(cfg, seed_default=None):
    """Canonical run spec with every default made explicit."""
    allowed = {"model", "estimator", "engine", "output", "label"}
    unknown = set(cfg) - allowed
    if unknown:
        raise InvalidConfigError(f"unknown top-level keys {sorted(unknown)}")
    model = _resolve_model(cfg.get("model"))
    estimator = _merge(_ESTIMATOR_DEFAULTS, cfg.get("estimator"), "estimator")
    engine = _merge(_ENGINE_DEFAULTS, cfg.get("engine"), "engine")
    output = _merge(_OUTPUT_DEFAULTS, cfg.get("output"), "output")

    _require(engine["iterations"], "engine.iterations")
    if seed_default is not None and "seed" not in (cfg.get("engine") or {}):
        engine["seed"] = seed_default

    kind = estimator["kind"]
    if kind not in ("exact", "de-srs", "hh-pps"):
        raise InvalidConfigError(f"estimator.kind: unknown kind {kind!r}")
    variates = estimator["variates"]
    if variates not in ("none", "taylor", "surface-tps", "surface-gp", "coarse"):
        raise InvalidConfigError(f"estimator.variates: unknown method {variates!r}")
    if variates == "taylor" and estimator["epsilon"] is None:
        raise InvalidConfigError(
            "estimator.epsilon is required for taylor variates (no default: "
            "tune it against the reported cluster fraction)")
    if kind != "exact" and estimator["m"] is None and estimator["fraction"] is None:
        raise InvalidConfigError("estimator needs m or fraction for subsampling")
    if kind == "hh-pps" and estimator["weights"] == "auto":
        estimator["weights"] = "surface" if variates.startswith("surface") else "coarse"
    if kind == "hh-pps" and estimator["weights"] == "taylor":
        raise InvalidConfigError(
            "cluster Taylor proxies are not usable as sampling weights; a "
            "single proxy costs as much as the contribution itself")
    if estimator["kappa"] is not None and estimator["phi"] is not None:
        raise InvalidConfigError("give kappa or phi, not both")

    if model["generator"] is not None:
        model["generator"].setdefault("seed", engine["seed"])

    resolved = {"model": model, "estimator": estimator, "engine": engine,
                "output": output}
    if "label" in cfg:
        resolved["label"] = cfg["label"]
    return resolved


def resolve_generate_spec(cfg):
    allowed = {"model", "output"}
    unknown = set(cfg) - allowed
    if unknown:
        raise InvalidConfigError(f"unknown top-level keys {sorted(unknown)}")
    model = _resolve_model(cfg.get("model"))
    if model["generator"] is None:
        raise InvalidConfigError("generate needs a model.generator block")
    model["generator"].setdefault("seed", 0)
    output = _merge(_OUTPUT_DEFAULTS, cfg.get("output"), "output")
    _require(output["directory"], "output.directory")
    return {"model": model, "output": output}


def resolve_compare_spec(cfg):
    allowed = {"runs", "baseline_index", "output"}
    unknown = set(cfg) - allowed
    if unknown:
        raise InvalidConfigError(f"unknown top-level keys {sorted(unknown)}")
    runs = cfg.get("runs")
    if not isinstance(runs, list) or len(runs) < 2:
        raise InvalidConfigError("compare needs a runs list with at least two entries")
    baseline = cfg.get("baseline_index", 0)
    if not isinstance(baseline, int) or not 0 <= baseline < len(runs):
        raise InvalidConfigError(f"baseline_index {baseline} out of range")
    output = _merge(_OUTPUT_DEFAULTS, cfg.get("output"), "output")
    _require(output["directory"], "output.directory")
    resolved_runs = []
    for i, run in enumerate(runs):
        spec = resolve_run_spec(run)
        spec.setdefault("label", f"run_{i}")
        spec["output"]["directory"] = None  # members live under the bundle dir
        resolved_runs.append(spec)
    fingerprints = {dataset_fingerprint(r["model"]) for r in resolved_runs}
    if len(fingerprints) != 1:
        raise InvalidConfigError("compare members must share one dataset")
    labels = [r["label"] for r in resolved_runs]
    if len(set(labels)) != len(labels):
        raise InvalidConfigError("compare member labels must be unique")
    return {"runs": resolved_runs, "baseline_index": baseline, "output": output}


def resolve_scaling_spec(cfg):
    allowed = {"model", "estimator", "thetas", "m_grid", "replications",
               "seed", "output"}
    unknown = set(cfg) - allowed
    if unknown:
        raise InvalidConfigError(f"unknown top-level keys {sorted(unknown)}")
    model = _resolve_model(cfg.get("model"))
    estimator = _merge(_ESTIMATOR_DEFAULTS, cfg.get("estimator"), "estimator")
    m_grid = cfg.get("m_grid")
    if not isinstance(m_grid, list) or not m_grid:
        raise InvalidConfigError("m_grid must be a nonempty list")
    replications = cfg.get("replications", 1000)
    thetas = cfg.get("thetas", {"source": "mode", "count": 1, "perturb_sd": 0.0})
    seed = cfg.get("seed", 0)
    output = _merge(_OUTPUT_DEFAULTS, cfg.get("output"), "output")
    _require(output["directory"], "output.directory")
    if model["generator"] is not None:
        model["generator"].setdefault("seed", seed)
    return {"model": model, "estimator": estimator, "thetas": thetas,
            "m_grid": [int(m) for m in m_grid], "replications": int(replications),
            "seed": int(seed), "output": output}


def dataset_fingerprint(model_block):
    """Identity of the data a run sees: path, or canonical generator params."""
    if model_block["dataset"] is not None:
        return f"path:{model_block['dataset']}"
    return "generator:" + json.dumps(
        {"kind": model_block["kind"], **model_block["generator"]}, sort_keys=True)
