"""Batch command-line entry point.

Subcommands: train, finetune, scan, predict, fss, and oracle {ed, ff,
measure}.  Every run is reproducible: identical flags and seed produce
byte-identical CSVs and checkpoints.  Exit codes: 0 success, 2 usage or
configuration error, 3 numeric failure, 4 analysis failure.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import canonical_json, load_checkpoint
from .config import parse_run_config
from .estimator import predict, read_measurements, write_measurements
from .exceptions import (
    BatchRejectedError,
    ConfigError,
    MeasurementFormatError,
    NoCrossingError,
    NumericFailureError,
    TqsError,
    UndefinedCumulantError,
)
from .hamiltonian import build_tfi, build_xyz
from .model import TransformerWaveFunction
from .observables import binder_cumulant, find_crossing, fss_fit, repeat_estimates
from .oracle import ed_ground_state, ff_tfi_energy, generate_measurements
from .sampler import SamplerConfig
from .symmetry import wrap_model
from .trainer import TrainState, fine_tune, pretrain, restore_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ANALYSIS = 4


def _hash_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _hash_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _provenance(config_hash: str, seed: int) -> str:
    return f"# config-hash={config_hash}, code-version={__version__}, seed={seed}"


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_csv(path, columns, rows, config_hash: str, seed: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [_provenance(config_hash, seed), ",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_value(row.get(c)) for c in columns))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_grid(spec: str) -> list[float]:
    """lo:hi:step inclusive of hi up to float tolerance."""
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ConfigError(f"bad grid spec {spec!r}; expected lo:hi:step") from None
    if step <= 0 or hi < lo:
        raise ConfigError(f"bad grid spec {spec!r}")
    count = int(round((hi - lo) / step)) + 1
    values = [lo + k * step for k in range(count)]
    return [v for v in values if v <= hi + 1e-9]


def _parse_sizes(spec: str) -> list[int]:
    try:
        return [int(x) for x in spec.split(",") if x]
    except ValueError:
        raise ConfigError(f"bad sizes spec {spec!r}; expected comma-separated integers") from None


def _parse_assignments(items) -> dict[str, float]:
    out: dict[str, float] = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"bad assignment {item!r}; expected name=value")
        name, value = item.split("=", 1)
        try:
            out[name] = float(value)
        except ValueError:
            raise ConfigError(f"bad value in {item!r}") from None
    return out


def _parse_box(items) -> dict[str, tuple[float, float]]:
    out: dict[str, tuple[float, float]] = {}
    for item in items or []:
        if "=" not in item or ":" not in item:
            raise ConfigError(f"bad box spec {item!r}; expected name=lo:hi")
        name, rng = item.split("=", 1)
        lo, hi = rng.split(":", 1)
        try:
            out[name] = (float(lo), float(hi))
        except ValueError:
            raise ConfigError(f"bad bounds in {item!r}") from None
    return out


def _point_seed(seed: int, *indices: int) -> int:
    return int(np.random.SeedSequence((seed, *indices)).generate_state(1, np.uint64)[0])


# --------------------------------------------------------------- subcommands


def cmd_train(args) -> int:
    cfg = parse_run_config(args.config, seed_override=args.seed, out_override=args.out)
    if cfg.output_dir is None:
        raise ConfigError("no output directory: set output_dir in the config or pass --out")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(cfg.raw_text, encoding="utf-8")
    config_hash = _hash_text(cfg.raw_text)

    base = TransformerWaveFunction(cfg.model, seed=cfg.seed)
    model = wrap_model(base, cfg.symmetries)
    columns = ["step", "n", *cfg.family.param_names, "energy", "scale", "lr", "seconds"]
    rows: list[dict] = []

    def log(row: dict):
        if not args.timings:
            row = dict(row, seconds=None)
        rows.append(row)

    pretrain(
        model,
        cfg.family,
        cfg.trainer,
        symmetries=cfg.symmetries,
        state=TrainState.fresh(model),
        out_path=out_dir / "checkpoint.ckpt",
        log=log,
        seeds={"global": cfg.seed, "model_init": cfg.seed},
    )
    write_csv(out_dir / "train_log.csv", columns, rows, config_hash, cfg.seed)
    return EXIT_OK


def cmd_finetune(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    model, family, _ = restore_model(ck)
    values = _parse_assignments(args.set)
    missing = [p for p in family.param_names if p not in values]
    if missing:
        raise ConfigError(f"finetune point is missing parameter(s) {missing}; pass --set name=value")
    J_star = family.coupling(args.n, **values)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = canonical_json(
        {
            "cmd": "finetune",
            "checkpoint": _hash_file(args.checkpoint),
            "n": args.n,
            "set": values,
            "iters": args.iters,
            "n_batch": args.n_batch,
            "n_unique": args.n_unique,
        }
    )
    config_hash = _hash_text(resolved)
    columns = ["step", "n", *family.param_names, "energy", "scale", "lr", "seconds"]
    rows: list[dict] = []

    def log(row: dict):
        if not args.timings:
            row = dict(row, seconds=None)
        rows.append(row)

    fine_tune(
        ck,
        J_star,
        args.iters,
        seed=args.seed,
        sampler=SamplerConfig(n_batch=args.n_batch, n_unique=args.n_unique, seed=args.seed),
        out_path=out_dir / "checkpoint.ckpt",
        log=log,
    )
    write_csv(out_dir / "train_log.csv", columns, rows, config_hash, args.seed)
    return EXIT_OK


def _reference_energy(family, J) -> float | None:
    if family.name == "tfi":
        h = J.as_dict().get("h", family.fixed.get("h"))
        coupling = J.as_dict().get("J", family.fixed.get("J", 1.0))
        return ff_tfi_energy(J.n, coupling, h)
    if J.n <= 16:
        return ed_ground_state(family.build(J)).energy
    return None


def cmd_scan(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    model, family, base = restore_model(ck)
    grid = _parse_grid(args.h_grid)
    sizes = _parse_sizes(args.sizes)
    pinned = _parse_assignments(args.set)
    other = [p for p in family.param_names if p != "h"]
    missing = [p for p in other if p not in pinned]
    if missing:
        raise ConfigError(f"scan needs --set name=value for parameter(s) {missing}")
    resolved = canonical_json(
        {
            "cmd": "scan",
            "h_grid": args.h_grid,
            "sizes": sizes,
            "set": pinned,
            "n_batch": args.n_batch,
            "n_unique": args.n_unique,
            "repeats": args.repeats,
        }
    )
    config_hash = _hash_text(resolved)
    h_lo, h_hi = family.prior.get("h", (None, None))
    rows = []
    for i_n, n in enumerate(sizes):
        for i_h, h in enumerate(grid):
            J = family.coupling(n, h=h, **pinned)
            H = family.build(J)
            seed = _point_seed(args.seed, i_n, i_h)
            cfg = SamplerConfig(n_batch=args.n_batch, n_unique=args.n_unique, seed=seed)
            est = repeat_estimates(model, J, H, cfg, n_repeats=args.repeats)
            binder = np.array([binder_cumulant(a, b) for a, b in zip(est["m2"], est["m4"])])
            reference = _reference_energy(family, J)
            e_median = float(np.median(est["energy"]))
            delta_e = None if reference is None else abs((e_median - reference) / reference)
            extrapolated = bool(J.outside_prior(family)) or n not in family.sizes
            per_obs = {
                "energy": est["energy"],
                "abs_mz": est["abs_mz"],
                "m2": est["m2"],
                "m4": est["m4"],
                "binder": binder,
            }
            for name, samples in per_obs.items():
                rows.append(
                    {
                        "n": n,
                        "h": h,
                        "observable": name,
                        "value": float(np.median(samples)),
                        "p10": float(np.percentile(samples, 10)),
                        "p90": float(np.percentile(samples, 90)),
                        "n_batch": args.n_batch,
                        "n_unique": args.n_unique,
                        "seed": seed,
                        "reference": reference if name == "energy" else None,
                        "delta_e": delta_e if name == "energy" else None,
                        "extrapolated": extrapolated,
                    }
                )
    columns = [
        "n",
        "h",
        "observable",
        "value",
        "p10",
        "p90",
        "n_batch",
        "n_unique",
        "seed",
        "reference",
        "delta_e",
        "extrapolated",
    ]
    out_dir = Path(args.out)
    write_csv(out_dir / "observables.csv", columns, rows, config_hash, args.seed)
    return EXIT_OK


def cmd_predict(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    model, family, _ = restore_model(ck)
    meas, _meta = read_measurements(args.measurements)
    box = _parse_box(args.box)
    if not box:
        raise ConfigError("predict needs at least one --box name=lo:hi")
    resolved = canonical_json(
        {"cmd": "predict", "box": {k: list(v) for k, v in box.items()}, "sweep": args.sweep, "repeats": args.repeats}
    )
    config_hash = _hash_text(resolved)
    hat_cols = [f"{name}_hat" for name in box]
    rows = []
    if args.sweep:
        sweep = [int(x) for x in args.sweep.split(",") if x]
        for n_meas in sweep:
            for r in range(args.repeats):
                seed = _point_seed(args.seed, n_meas, r)
                subset = meas.subset(n_meas, seed)
                result = predict(model, subset, box, prior=family.prior)
                row = {"n_measure": n_meas, "loglik": result.log_likelihood,
                       "converged": result.converged, "seed": seed}
                for name in box:
                    row[f"{name}_hat"] = result.J_hat.get(name)
                rows.append(row)
    else:
        result = predict(model, meas, box, prior=family.prior)
        row = {"n_measure": len(meas), "loglik": result.log_likelihood,
               "converged": result.converged, "seed": args.seed}
        for name in box:
            row[f"{name}_hat"] = result.J_hat.get(name)
        rows.append(row)
    columns = ["n_measure", *hat_cols, "loglik", "converged", "seed"]
    out_dir = Path(args.out)
    write_csv(out_dir / "predictions.csv", columns, rows, config_hash, args.seed)
    return EXIT_OK


def _read_injected_curves(path) -> dict[int, np.ndarray]:
    curves: dict[int, list[tuple[float, float]]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if parts[0] == "n":
            continue
        if len(parts) < 3:
            raise ConfigError(f"{path}:{lineno}: expected n,h,U rows")
        n, h, u = int(parts[0]), float(parts[1]), float(parts[2])
        curves.setdefault(n, []).append((h, u))
    return {n: np.array(pts) for n, pts in curves.items()}


def cmd_fss(args) -> int:
    resolved = canonical_json(
        {
            "cmd": "fss",
            "sizes": args.sizes,
            "h_grid": args.h_grid,
            "curves_csv": bool(args.curves_csv),
            "n_batch": args.n_batch,
            "n_unique": args.n_unique,
            "repeats": args.repeats,
        }
    )
    config_hash = _hash_text(resolved)
    out_dir = Path(args.out)

    if args.curves_csv:
        curves = _read_injected_curves(args.curves_csv)
        if len(curves) < 2:
            raise ConfigError("need curves for at least two sizes")
        crossing = find_crossing(curves)
        m2_at_hc: dict[int, float] = {}
    else:
        ck = load_checkpoint(args.checkpoint)
        model, family, _ = restore_model(ck)
        sizes = _parse_sizes(args.sizes)
        if len(sizes) < 2:
            raise ConfigError(f"finite-size scaling needs at least 2 sizes, got {sizes}")
        grid = _parse_grid(args.h_grid)
        pinned = _parse_assignments(args.set)
        curve_rows = []
        curves = {}
        m2_curves = {}
        for i_n, n in enumerate(sizes):
            u_points = []
            m2_points = []
            for i_h, h in enumerate(grid):
                J = family.coupling(n, h=h, **pinned)
                seed = _point_seed(args.seed, i_n, i_h)
                cfg = SamplerConfig(n_batch=args.n_batch, n_unique=args.n_unique, seed=seed)
                est = repeat_estimates(model, J, None, cfg, n_repeats=args.repeats)
                # the cumulant is formed from moments pooled over the repeated
                # batches; the per-batch cumulants only feed the error band
                # (the ratio is too nonlinear to average directly)
                per_batch = np.array([binder_cumulant(a, b) for a, b in zip(est["m2"], est["m4"])])
                u_pooled = binder_cumulant(float(est["m2"].mean()), float(est["m4"].mean()))
                m2_pooled = float(est["m2"].mean())
                u_points.append((h, u_pooled))
                m2_points.append(m2_pooled)
                curve_rows.append(
                    {
                        "n": n,
                        "h": h,
                        "binder": u_pooled,
                        "binder_p10": float(np.percentile(per_batch, 10)),
                        "binder_p90": float(np.percentile(per_batch, 90)),
                        "m2": m2_pooled,
                        "n_batch": args.n_batch,
                        "n_unique": args.n_unique,
                        "seed": seed,
                    }
                )
            curves[n] = np.array(u_points)
            m2_curves[n] = np.array(m2_points)
        write_csv(
            out_dir / "fss_curves.csv",
            ["n", "h", "binder", "binder_p10", "binder_p90", "m2", "n_batch", "n_unique", "seed"],
            curve_rows,
            config_hash,
            args.seed,
        )
        crossing = find_crossing(curves)
        m2_at_hc = {
            n: float(np.interp(crossing.h_c, [h for h, _ in curves[n]], m2_curves[n]))
            for n in sizes
        }

    fit = None
    if len(m2_at_hc) >= 3:
        fit_sizes = sorted(m2_at_hc)
        fit = fss_fit(fit_sizes, [np.sqrt(m2_at_hc[n]) for n in fit_sizes])
    summary = {
        "h_c": crossing.h_c,
        "spread": crossing.spread,
        "n_pairs": len(crossing.pair_crossings),
        "n_excluded_pairs": len(crossing.excluded_pairs),
        "beta_over_nu": None if fit is None else -fit.slope,
        "slope": None if fit is None else fit.slope,
        "slope_std_error": None if fit is None else fit.slope_std_error,
    }
    write_csv(out_dir / "fss_summary.csv", list(summary), [summary], config_hash, args.seed)
    return EXIT_OK


def _oracle_hamiltonian(args):
    if args.model == "tfi":
        return build_tfi(args.n, args.j, args.h)
    if args.model == "xyz":
        return build_xyz(args.n, args.j, args.gamma, args.delta, args.h)
    raise ConfigError(f"unknown model {args.model!r}")


def cmd_oracle(args) -> int:
    if args.oracle_cmd == "ed":
        state = ed_ground_state(_oracle_hamiltonian(args))
        row = {"model": args.model, "n": args.n, "j": args.j, "h": args.h}
        if args.model == "xyz":
            row.update({"gamma": args.gamma, "delta": args.delta})
        row["energy"] = state.energy
        config_hash = _hash_text(canonical_json({k: v for k, v in row.items() if k != "energy"}))
        if args.out:
            write_csv(Path(args.out), list(row), [row], config_hash, 0)
        print(repr(state.energy))
        return EXIT_OK
    if args.oracle_cmd == "ff":
        energy = ff_tfi_energy(args.n, args.j, args.h)
        row = {"model": "tfi", "n": args.n, "j": args.j, "h": args.h, "energy": energy}
        config_hash = _hash_text(canonical_json({k: v for k, v in row.items() if k != "energy"}))
        if args.out:
            write_csv(Path(args.out), list(row), [row], config_hash, 0)
        print(repr(energy))
        return EXIT_OK
    if args.oracle_cmd == "measure":
        state = ed_ground_state(_oracle_hamiltonian(args))
        meas = generate_measurements(state, args.count, args.seed)
        params = "h" if args.model == "tfi" else "gamma,delta,h"
        write_measurements(Path(args.measurements_out), meas, model=args.model, params=params)
        return EXIT_OK
    raise ConfigError(f"unknown oracle subcommand {args.oracle_cmd!r}")


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tqs", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_train = sub.add_parser("train", help="pretrain on a Hamiltonian family")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--timings", action="store_true", help="record wall time per step (breaks byte-reproducibility)")
    p_train.set_defaults(func=cmd_train)

    p_ft = sub.add_parser("finetune", help="continue training at one (n, J)")
    p_ft.add_argument("--checkpoint", required=True)
    p_ft.add_argument("--n", type=int, required=True)
    p_ft.add_argument("--set", action="append", metavar="NAME=VALUE")
    p_ft.add_argument("--iters", type=int, default=2000)
    p_ft.add_argument("--out", required=True)
    p_ft.add_argument("--seed", type=int, default=0)
    p_ft.add_argument("--n-batch", type=int, default=10**6)
    p_ft.add_argument("--n-unique", type=int, default=100)
    p_ft.add_argument("--timings", action="store_true")
    p_ft.set_defaults(func=cmd_finetune)

    p_scan = sub.add_parser("scan", help="energy and magnetization over an (n, h) grid")
    p_scan.add_argument("--checkpoint", required=True)
    p_scan.add_argument("--h-grid", required=True, metavar="LO:HI:STEP")
    p_scan.add_argument("--sizes", required=True, metavar="N1,N2,...")
    p_scan.add_argument("--set", action="append", metavar="NAME=VALUE")
    p_scan.add_argument("--out", required=True)
    p_scan.add_argument("--seed", type=int, default=0)
    p_scan.add_argument("--n-batch", type=int, default=10**6)
    p_scan.add_argument("--n-unique", type=int, default=1000)
    p_scan.add_argument("--repeats", type=int, default=10)
    p_scan.set_defaults(func=cmd_scan)

    p_pred = sub.add_parser("predict", help="maximum-likelihood coupling prediction")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--measurements", required=True)
    p_pred.add_argument("--box", action="append", metavar="NAME=LO:HI")
    p_pred.add_argument("--sweep", default=None, metavar="N1,N2,...")
    p_pred.add_argument("--repeats", type=int, default=10)
    p_pred.add_argument("--out", required=True)
    p_pred.add_argument("--seed", type=int, default=0)
    p_pred.set_defaults(func=cmd_predict)

    p_fss = sub.add_parser("fss", help="Binder crossings and the critical exponent fit")
    p_fss.add_argument("--checkpoint", default=None)
    p_fss.add_argument("--sizes", default="", metavar="N1,N2,...")
    p_fss.add_argument("--h-grid", default=None, metavar="LO:HI:STEP")
    p_fss.add_argument("--set", action="append", metavar="NAME=VALUE")
    p_fss.add_argument("--curves-csv", default=None, help="use injected n,h,U curves instead of sampling")
    p_fss.add_argument("--out", required=True)
    p_fss.add_argument("--seed", type=int, default=0)
    p_fss.add_argument("--n-batch", type=int, default=10**6)
    p_fss.add_argument("--n-unique", type=int, default=1000)
    p_fss.add_argument("--repeats", type=int, default=10)
    p_fss.set_defaults(func=cmd_fss)

    p_or = sub.add_parser("oracle", help="exact references and synthetic measurements")
    or_sub = p_or.add_subparsers(dest="oracle_cmd", required=True)
    for name in ("ed", "ff", "measure"):
        p = or_sub.add_parser(name)
        p.add_argument("--model", default="tfi", choices=("tfi", "xyz"))
        p.add_argument("--n", type=int, required=True)
        p.add_argument("--j", type=float, default=1.0)
        p.add_argument("--h", type=float, default=1.0)
        p.add_argument("--gamma", type=float, default=0.2)
        p.add_argument("--delta", type=float, default=0.5)
        if name == "measure":
            p.add_argument("--count", type=int, required=True)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--out", dest="measurements_out", required=True)
        else:
            p.add_argument("--out", default=None)
        p.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, MeasurementFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailureError, BatchRejectedError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NoCrossingError, UndefinedCumulantError) as exc:
        print(f"analysis failure: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except TqsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
