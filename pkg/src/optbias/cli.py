"""Command-line front end: verification suites, tables, advice, and experiments."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import advisor, coefficients, memoryless, permstats, sweep, verify
from .coefficients import BetaPair
from .configio import ConfigError, get_float_list, get_int_list, load_config
from .optimizers import Algo, HyperParams, run_epoch
from .problems import PartitionSpec, problem_from_config, scale_noise
from .verify import expectation_fixture

EXPECT_SCHEMA = "optbias.expect.v1"
NOISE_SCALE_SCHEMA = "optbias.noise-scale.v1"


def _parse_grid(raw: str) -> list[float]:
    """Comma list '0.9,0.99' or range 'start:stop:step' (stop inclusive-ish)."""
    if ":" in raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range spec needs start:stop:step, got {raw!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ConfigError("range step must be positive")
        return [float(v) for v in np.arange(start, stop + step / 2, step)]
    return [float(tok) for tok in raw.split(",") if tok.strip()]


def _load_cfg(path: str | None) -> dict[str, str]:
    return load_config(path) if path else {}


def _write_text(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _write_json(path: str | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    _write_text(path, text)


def _cmd_verify(args) -> int:
    cfg = _load_cfg(args.config)
    corrupt = cfg.get("corrupt_constant") or None
    only = args.only.split(",") if args.only else None
    report = verify.run_verify(only=only, seed=args.seed, corrupt_constant=corrupt)
    for suite_result in report.suites:
        status = "PASS" if suite_result.passed else "FAIL"
        print(f"[{status}] {suite_result.name} ({suite_result.elapsed_s:.1f}s)")
        if not suite_result.passed:
            failure = suite_result.first_failure
            print(f"       first failing check: {failure.name}")
            print("       counterexample: " + json.dumps(verify._jsonable(failure.detail), sort_keys=True))
    if args.out:
        _write_json(args.out, report.to_json_dict())
    print("verify: " + ("all suites passed" if report.passed else "FAILURES detected"))
    return 0 if report.passed else 1


def _cmd_coeffs(args) -> int:
    beta1s = _parse_grid(args.beta1)
    beta2s = _parse_grid(args.beta2)
    _write_text(args.out, coefficients.render_coeffs_csv(beta1s, beta2s))
    if args.lemmas_out:
        coefficients.lemma_report_json(args.lemmas_out)
    return 0


def _theta_for_problem(problem, seed: int):
    rng = np.random.default_rng(seed)
    return rng.normal(size=problem.dim)


def _cmd_regime(args) -> int:
    if args.estimate_from:
        cfg = load_config(args.estimate_from)
        problem = problem_from_config(cfg)
        theta = _theta_for_problem(problem, int(cfg.get("theta_seed", cfg["seed"])))
        estimate = advisor.b_simple(problem, theta)
        noise_scale = estimate.b_simple
        n = problem.n_samples
    else:
        if args.b_simple is None or args.n is None:
            raise ConfigError("regime needs either --estimate-from or both --n and --b-simple")
        noise_scale = args.b_simple
        n = args.n
    advice = advisor.recommend(n, args.b, noise_scale)
    _write_json(args.out, advice.to_json_dict())
    return 0


def _closeness_problem(cfg: dict):
    if cfg:
        problem = problem_from_config(cfg)
        rng = np.random.default_rng(int(cfg["seed"]) + 1)
        theta0 = 3.0 * np.sign(rng.normal(size=problem.dim))
        b = int(cfg.get("batch_size", 2))
        partition = PartitionSpec.random(
            problem.n_samples // b, b, np.random.default_rng(int(cfg["seed"]) + 2)
        )
        return problem, partition, theta0
    return verify.closeness_fixture()


def _cmd_closeness(args) -> int:
    cfg = _load_cfg(args.config)
    problem, partition, theta0 = _closeness_problem(cfg)
    algo = Algo(args.algo)
    if algo is Algo.ADAM:
        hp = HyperParams(eta=0.0, beta1=args.beta1, beta2=args.beta2, eps=args.eps)
    else:
        hp = HyperParams(eta=0.0, beta=args.beta)
    report = memoryless.closeness_scaling(
        problem, partition, hp, theta0, algo, _parse_grid(args.etas), horizon=args.horizon
    )
    if args.format == "json":
        _write_json(args.out, report.to_json_dict())
    else:
        if not args.out:
            raise ConfigError("csv output needs --out")
        report.to_csv(args.out)
    print(f"closeness[{algo.value}]: fitted exponent {report.fitted_exponent:.3f}")
    return 0


def _cmd_expect(args) -> int:
    cfg = _load_cfg(args.config)
    if cfg:
        problem = problem_from_config(cfg)
        theta = _theta_for_problem(problem, int(cfg.get("theta_seed", cfg["seed"])))
        betas = BetaPair(float(cfg.get("beta1", 0.45)), float(cfg.get("beta2", 0.55)))
        hp = HyperParams(eta=0.0, beta1=betas.beta1, beta2=betas.beta2, eps=1e-12)
    else:
        problem, theta, betas, hp = expectation_fixture()
    m, b = args.m, args.b
    if m * b != problem.n_samples:
        raise ConfigError(f"m*b = {m * b} must cover the {problem.n_samples} samples")
    scaled = scale_noise(problem, args.delta)

    brute = permstats.bruteforce_expected_correction(scaled, m, b, theta, hp)
    breakdown = coefficients.assemble_expected_correction(scaled, theta, betas, m, b)
    moments = []
    dim = problem.dim
    for i in range(dim):
        for j in range(dim):
            for spec in (
                permstats.MomentSpec.same_batch_grad_grad(i, j),
                permstats.MomentSpec.same_batch_hess_grad(i, j),
                *(
                    [permstats.MomentSpec.cross_batch_grad_grad(i, j)]
                    if m > 1
                    else []
                ),
            ):
                exact = permstats.exact_moment(scaled, theta, m, b, spec)
                closed = permstats.closed_form_moment(scaled, theta, m, b, spec)
                moments.append(
                    {
                        "spec": spec.to_json_dict(),
                        "exact": exact.value,
                        "closed_form": closed.value,
                    }
                )
    payload = {
        "schema": EXPECT_SCHEMA,
        "m": m,
        "b": b,
        "delta": args.delta,
        "beta1": betas.beta1,
        "beta2": betas.beta2,
        "correction": {
            "bruteforce": [float(v) for v in brute],
            "assembled": breakdown.to_json_dict(),
        },
        "moments": moments,
    }
    _write_json(args.out, payload)
    return 0


def _sweep_config(cfg: dict, seed: int | None) -> sweep.SweepConfig:
    kwargs = {}
    if "task" in cfg:
        kwargs["task"] = cfg["task"]
    for key in ("n_train", "n_val", "in_dim", "hidden", "n_epochs", "n_seeds"):
        if key in cfg:
            kwargs[key] = int(cfg[key])
    for key in ("label_noise", "flip_prob", "beta1", "eta", "eps"):
        if key in cfg:
            kwargs[key] = float(cfg[key])
    if "beta2_grid" in cfg:
        kwargs["beta2_grid"] = tuple(get_float_list(cfg, "beta2_grid"))
    if "batch_sizes" in cfg:
        kwargs["batch_sizes"] = tuple(get_int_list(cfg, "batch_sizes"))
    if seed is not None:
        kwargs["seed"] = seed
    elif "seed" in cfg:
        kwargs["seed"] = int(cfg["seed"])
    else:
        raise ConfigError("sweep needs a seed (config key 'seed' or --seed)")
    return sweep.SweepConfig(**kwargs)


def _cmd_sweep(args) -> int:
    cfg = _load_cfg(args.config)
    sweep_cfg = _sweep_config(cfg, args.seed)
    records = sweep.run_sweep(sweep_cfg, workers=args.workers)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sweep.write_records_csv(records, out_dir / "sweep_records.csv")
    report = sweep.slope_report(sweep_cfg, records)
    sweep.write_report_json(report, out_dir / "sweep_report.json")
    print(
        "sweep: slope(best val loss vs beta2) smallest batch "
        f"{report['slope_smallest_batch']:.4g}, largest batch {report['slope_largest_batch']:.4g}"
        f" (sign reversed: {report['slope_sign_reversed']})"
    )
    return 0


def _cmd_noise_scale(args) -> int:
    cfg = load_config(args.config)
    problem = problem_from_config(cfg)
    rng = np.random.default_rng(args.seed)
    theta0 = rng.normal(size=problem.dim)
    b = int(cfg.get("batch_size", max(1, problem.n_samples // 8)))
    m = problem.n_samples // b
    partition = PartitionSpec.random(m, b, rng)
    hp = HyperParams(eta=args.eta)
    traj = run_epoch(
        problem,
        partition,
        hp,
        theta0,
        Algo(args.algo),
        n_epochs=max(1, args.steps // m),
        rng=rng,
    )
    trace = advisor.b_simple_trace(problem, traj, every=args.every)
    rows = [
        {
            "t": point.t,
            "b_simple": None if point.estimate is None else point.estimate.b_simple,
            "flagged": point.flagged,
        }
        for point in trace
    ]
    if args.format == "json":
        _write_json(args.out, {"schema": NOISE_SCALE_SCHEMA, "trace": rows})
    else:
        lines = [f"# schema: {NOISE_SCALE_SCHEMA}", "t,b_simple,flagged"]
        for row in rows:
            bs = "" if row["b_simple"] is None else repr(row["b_simple"])
            lines.append(f"{row['t']},{bs},{int(row['flagged'])}")
        _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optbias",
        description="mini-batch optimizer implicit-bias laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the invariant suites")
    p.add_argument("--only", help="comma-separated suite names")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--config", help="key-value config (test hooks)")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("coeffs", help="emit the constant table as CSV")
    p.add_argument("--beta1", default="0.9,0.99")
    p.add_argument("--beta2", default="0.9:0.999:0.0033")
    p.add_argument("--out")
    p.add_argument("--lemmas-out", help="also write the lemma report JSON here")
    p.set_defaults(func=_cmd_coeffs)

    p = sub.add_parser("regime", help="batch-size regime advice")
    p.add_argument("--n", type=int)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--b-simple", type=float, dest="b_simple")
    p.add_argument("--estimate-from", help="problem config to estimate the noise scale from")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_regime)

    p = sub.add_parser("closeness", help="trajectory-gap scaling study")
    p.add_argument("--algo", choices=[a.value for a in Algo], default="sgdm")
    p.add_argument("--etas", default="1e-2,5e-3,2.5e-3")
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.6)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.9)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--config", help="problem config; defaults to the built-in fixture")
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv", "json"], default="json")
    p.set_defaults(func=_cmd_closeness)

    p = sub.add_parser("expect", help="brute-force vs closed-form expectations")
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--b", type=int, default=1)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--config", help="problem config; defaults to the built-in fixture")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_expect)

    p = sub.add_parser("sweep", help="multi-epoch beta2/batch-size sweep")
    p.add_argument("--config", help="sweep config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("noise-scale", help="noise-scale trace along a training run")
    p.add_argument("--config", required=True)
    p.add_argument("--algo", choices=[a.value for a in Algo], default="adam")
    p.add_argument("--eta", type=float, default=0.01)
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--every", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(func=_cmd_noise_scale)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
