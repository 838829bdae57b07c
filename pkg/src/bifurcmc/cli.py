"""Command-line front end: kernel specs, experiment orchestration, output files.

Subcommands
-----------
``simulate``        per-replica functional values (CSV)
``variance``        asymptotic variance of the configured functional (JSON)
``rate``            empirical vs exact tail-rate curve (CSV + JSON metadata)
``verify-moments``  Monte Carlo against the exact moment oracles (CSV)
``decompose``       martingale decomposition diagnostics per replica (CSV)
``spectral``        stationary measure and spectral summary (JSON)

A config file is a flat JSON object whose keys mirror the long flags
(dashes become underscores); explicit flags override file values.  Every
run emits its resolved config, and feeding that file back reproduces the
outputs byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import expr
from .kernels import (
    CRITICAL_STAY_PROBABILITY,
    KernelConfigError,
    beta_mixture_kernel,
    function_from_callable,
    function_from_values,
    grid_kernel_from_density,
    two_state_kernel,
)
from .mdp import (
    DecompositionConfig,
    DecompositionEvaluator,
    RateCurve,
    SpeedSequence,
    TreeDecomposer,
    default_cut,
    default_delta_grid,
    empirical_rate_curve,
    wrong_speed_probe,
)
from .model import KernelModel
from .moments import generation_mean, generation_second_moment
from .simulate import (
    BetaInit,
    EnsembleConfig,
    FunctionSeq,
    FunctionalEvaluator,
    GenerationSumEvaluator,
    PointMass,
    StationaryInit,
    default_workers,
    sample_ensemble,
)
from .spectral import ConvergenceError, SpectralError
from .variance import (
    RateFunction,
    Regime,
    SeriesError,
    UnsupportedRegimeError,
    asymptotic_variance,
    classify_regime,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

_NUMERICAL_ERRORS = (
    ConvergenceError,
    SpectralError,
    SeriesError,
    UnsupportedRegimeError,
    FloatingPointError,
)
_CONFIG_ERRORS = (
    KernelConfigError,
    expr.ExprSyntaxError,
    ValueError,
    KeyError,
    FileNotFoundError,
)


def fmt17(x: float) -> str:
    """17-significant-digit rendering so doubles round-trip exactly."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "kernel": "beta_mixture",
    "stay_prob": CRITICAL_STAY_PROBABILITY,
    "density": None,
    "grid_size": 512,
    "f": "x",
    "seq": "single",
    "init": None,
    "n": 12,
    "replicas": 50_000,
    "seed": 20240,
    "speed_family": "subcritical",
    "beta": 0.4,
    "delta_max": None,
    "delta_points": 40,
    "x": 0.3,
    "m": None,
    "cut": None,
    "tol": 1e-10,
    "threads": None,
    "out": "out",
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--kernel", choices=["beta_mixture", "two_state", "grid_custom"])
    p.add_argument("--p", "--stay-prob", dest="stay_prob", type=float,
                   help="two_state stay probability")
    p.add_argument("--density", help="grid_custom transition density in x and y")
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--f", help="observable expression in x, or a state-index "
                                "expression for finite kernels")
    p.add_argument("--seq", choices=["single", "all"],
                   help="functional mode: top generation only, or every generation")
    p.add_argument("--init", help="initial law: stationary | point:X | beta:A:B")
    p.add_argument("--n", type=int, help="tree depth")
    p.add_argument("--B", dest="replicas", type=int, help="replica count")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float, help="series truncation tolerance")
    p.add_argument("--threads", type=int, help="worker processes "
                   "(default: BIFURCMC_WORKERS or the CPU count)")
    p.add_argument("--out", help="output path prefix")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bifurcmc")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="per-replica functional values")
    _add_common(p)

    p = sub.add_parser("variance", help="asymptotic variance of the functional")
    _add_common(p)

    p = sub.add_parser("rate", help="empirical vs exact tail-rate curve")
    _add_common(p)
    p.add_argument("--speed-family", dest="speed_family",
                   choices=["subcritical", "critical"])
    p.add_argument("--beta", type=float, help="speed exponent in (0,1)")
    p.add_argument("--delta-max", dest="delta_max", type=float)
    p.add_argument("--delta-points", dest="delta_points", type=int)
    p.add_argument("--wrong-speed", action="store_true",
                   help="also emit the critical-scaling probe curve")

    p = sub.add_parser("verify-moments", help="Monte Carlo vs exact moment oracles")
    _add_common(p)
    p.add_argument("--x", type=float, help="starting state (value or index)")

    p = sub.add_parser("decompose", help="martingale decomposition diagnostics")
    _add_common(p)
    p.add_argument("--cut", type=int, help="cut generation (default: regime rule)")

    p = sub.add_parser("spectral", help="stationary measure and spectral summary")
    _add_common(p)
    return ap


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then config-file values, then explicit flags."""
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text())
        if isinstance(raw, dict) and "config" in raw and isinstance(raw["config"], dict):
            raw = raw["config"]
        unknown = set(raw) - set(cfg) - {"command", "wrong_speed"}
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(raw)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "wrong_speed", False):
        cfg["wrong_speed"] = True
    cfg["command"] = args.command
    return cfg


# ---------------------------------------------------------------------------
# experiment assembly
# ---------------------------------------------------------------------------


def build_model(cfg: dict) -> KernelModel:
    kind = cfg["kernel"]
    if kind == "beta_mixture":
        return KernelModel(beta_mixture_kernel(int(cfg["grid_size"])))
    if kind == "two_state":
        return KernelModel(two_state_kernel(float(cfg["stay_prob"])))
    if kind == "grid_custom":
        if not cfg.get("density"):
            raise KernelConfigError("grid_custom needs --density")
        density = expr.ExpressionDensity(cfg["density"])
        return KernelModel(
            grid_kernel_from_density(density, int(cfg["grid_size"]), name="grid_custom")
        )
    raise KernelConfigError(f"unknown kernel {kind!r}")


def build_observable(cfg: dict, model: KernelModel):
    text = cfg["f"]
    fn = expr.ExpressionFunction(text)
    if model.space.is_grid:
        return function_from_callable(model.space, fn)
    # finite spaces: the expression is evaluated at the state indices
    return function_from_values(model.space, fn(np.arange(model.space.size, dtype=float)))


def build_fseq(cfg: dict, model: KernelModel) -> FunctionSeq:
    f = build_observable(cfg, model)
    if cfg["seq"] == "single":
        return FunctionSeq.single(f, model)
    return FunctionSeq.all_generations(f, model)


def build_initial(cfg: dict, model: KernelModel):
    spec = cfg.get("init")
    if spec is None:
        spec = "beta:2:2" if cfg["kernel"] == "beta_mixture" else "stationary"
    if spec == "stationary":
        return StationaryInit()
    if spec.startswith("point:"):
        return PointMass(float(spec.split(":", 1)[1]))
    if spec.startswith("beta:"):
        _, a, b = spec.split(":")
        return BetaInit(int(a), int(b))
    raise KernelConfigError(f"unknown initial law {spec!r}")


def _workers(cfg: dict) -> int:
    if cfg.get("threads"):
        return max(1, int(cfg["threads"]))
    return default_workers()


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                ["" if isinstance(v, float) and math.isnan(v) else
                 fmt17(v) if isinstance(v, float) else v
                 for v in row]
            )


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _public_config(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in ("command",)}


def rate_curve_rows(curve: RateCurve) -> list[list]:
    rows = []
    for d, c, e, x in zip(curve.delta, curve.counts, curve.empirical, curve.exact):
        rows.append([float(d), int(c), float(e), float(x)])
    return rows


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: dict) -> int:
    model = build_model(cfg)
    fseq = build_fseq(cfg, model)
    econf = EnsembleConfig(int(cfg["replicas"]), int(cfg["n"]),
                           int(cfg["seed"]), _workers(cfg))
    values = sample_ensemble(
        model.branching, build_initial(cfg, model), econf,
        FunctionalEvaluator(fseq, int(cfg["n"])), model=model,
    )
    out = Path(cfg["out"])
    write_csv(out.with_suffix(".csv"), ["replica", "value"],
              [[r, float(v)] for r, v in enumerate(values)])
    write_json(out.with_suffix(".json"), {"config": _public_config(cfg)})
    return EXIT_OK


def cmd_variance(cfg: dict) -> int:
    model = build_model(cfg)
    fseq = build_fseq(cfg, model)
    result = asymptotic_variance(fseq, model, float(cfg["tol"]))
    out = Path(cfg["out"])
    write_json(
        out.with_suffix(".json"),
        {
            "config": _public_config(cfg),
            "sigma": result.sigma,
            "sigma1": result.sigma1,
            "sigma2": result.sigma2,
            "regime": result.regime.value,
            "terms_used": result.terms_used,
            "truncation_bound": result.truncation_bound,
        },
    )
    return EXIT_OK


def cmd_rate(cfg: dict) -> int:
    model = build_model(cfg)
    fseq = build_fseq(cfg, model)
    n = int(cfg["n"])
    regime = classify_regime(model.alpha)
    result = asymptotic_variance(fseq, model, float(cfg["tol"]))
    rate_fn = RateFunction(result.sigma)
    speed = SpeedSequence(cfg["speed_family"], float(cfg["beta"]))
    b_n = speed.value(n)

    scale = 1.0 / math.sqrt(n) if regime is Regime.CRITICAL else 1.0
    econf = EnsembleConfig(int(cfg["replicas"]), n, int(cfg["seed"]), _workers(cfg))
    samples = sample_ensemble(
        model.branching, build_initial(cfg, model), econf,
        FunctionalEvaluator(fseq, n, scale=scale), model=model,
    )

    if cfg.get("delta_max"):
        grid = np.linspace(float(cfg["delta_max"]) / int(cfg["delta_points"]),
                           float(cfg["delta_max"]), int(cfg["delta_points"]))
    else:
        grid = default_delta_grid(result.sigma, b_n, econf.replicas,
                                  int(cfg["delta_points"]))
    curve = empirical_rate_curve(samples, speed, n, grid, rate_fn)

    out = Path(cfg["out"])
    write_csv(out.with_suffix(".csv"),
              ["delta", "count", "empirical_rate", "exact_rate"],
              rate_curve_rows(curve))
    meta = {
        "config": _public_config(cfg),
        "sigma": result.sigma,
        "b_n": b_n,
        "sample_variance": float(np.var(samples)),
        "regime": regime.value,
    }
    if cfg.get("wrong_speed"):
        probe = wrong_speed_probe(samples, n, grid, rate_fn)
        write_csv(out.parent / (out.stem + ".wrong_speed.csv"),
                  ["delta", "count", "empirical_rate", "exact_rate"],
                  rate_curve_rows(probe))
        meta["wrong_speed_b_n"] = probe.meta["b_n"]
    write_json(out.with_suffix(".json"), meta)
    return EXIT_OK


def cmd_verify_moments(cfg: dict) -> int:
    model = build_model(cfg)
    f = build_observable(cfg, model)
    g = model.centered(f)
    n = int(cfg["n"])
    x = float(cfg["x"]) if model.space.is_grid else int(cfg["x"])
    econf = EnsembleConfig(int(cfg["replicas"]), n, int(cfg["seed"]), _workers(cfg))
    sums = sample_ensemble(
        model.branching, PointMass(x), econf,
        GenerationSumEvaluator(g, n), model=model,
    )
    b = sums.size
    rows = []
    mc_mean = float(np.mean(sums))
    se_mean = float(np.std(sums, ddof=1) / math.sqrt(b))
    oracle_mean = generation_mean(model.operator, g, n, x)
    rows.append(["mean", n, float(x), oracle_mean, mc_mean, se_mean,
                 (mc_mean - oracle_mean) / se_mean])
    sq = sums * sums
    mc_second = float(np.mean(sq))
    se_second = float(np.std(sq, ddof=1) / math.sqrt(b))
    oracle_second = generation_second_moment(model.branching, model.operator, g, n, x)
    rows.append(["second", n, float(x), oracle_second, mc_second, se_second,
                 (mc_second - oracle_second) / se_second])
    out = Path(cfg["out"])
    write_csv(out.with_suffix(".csv"),
              ["quantity", "n", "x", "oracle", "mc_estimate", "mc_se", "z_score"],
              rows)
    write_json(out.with_suffix(".json"), {"config": _public_config(cfg)})
    return EXIT_OK


def cmd_decompose(cfg: dict) -> int:
    model = build_model(cfg)
    fseq = build_fseq(cfg, model)
    n = int(cfg["n"])
    regime = classify_regime(model.alpha)
    cut = int(cfg["cut"]) if cfg.get("cut") else default_cut(n, regime)
    dconf = DecompositionConfig(n, cut, regime)
    econf = EnsembleConfig(int(cfg["replicas"]), n, int(cfg["seed"]), _workers(cfg))
    rows_arr = sample_ensemble(
        model.branching, build_initial(cfg, model), econf,
        DecompositionEvaluator(TreeDecomposer(fseq, dconf, model)), model=model,
    )
    out = Path(cfg["out"])
    write_csv(out.with_suffix(".csv"),
              ["replica", "N", "delta", "r0", "r1", "r2", "bracket", "residual"],
              [[r] + [float(v) for v in row] for r, row in enumerate(rows_arr)])
    write_json(out.with_suffix(".json"), {"config": _public_config(cfg), "cut": cut})
    return EXIT_OK


def cmd_spectral(cfg: dict) -> int:
    model = build_model(cfg)
    spec = model.spectral
    out = Path(cfg["out"])
    write_json(
        out.with_suffix(".json"),
        {
            "config": _public_config(cfg),
            "alpha": spec.alpha,
            "m_estimate": None if math.isinf(spec.ergodicity_constant)
            else spec.ergodicity_constant,
            "degenerate": spec.degenerate,
            "mu": [float(v) for v in spec.mu],
            "eigenvalues": [[float(ev.real), float(ev.imag)]
                            for ev in spec.eigenvalues[: min(16, spec.eigenvalues.size)]],
            "second_modulus_eigenvalues": [
                [float(p.eigenvalue.real), float(p.eigenvalue.imag)]
                for p in spec.projectors
            ],
        },
    )
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "variance": cmd_variance,
    "rate": cmd_rate,
    "verify-moments": cmd_verify_moments,
    "decompose": cmd_decompose,
    "spectral": cmd_spectral,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return _COMMANDS[args.command](cfg)
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
