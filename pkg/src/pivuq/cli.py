"""Command-line front door.

Subcommands: generate | estimate | uq | train-unn | evaluate | report.
Exit codes: 0 success, 1 validation error, 2 runtime error. Errors print a
single machine-parsable line `error:<category>: <message>` on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import configfile, harness, metrics, unn
from .errors import (
    ConfigError,
    DegenerateInputError,
    DimensionError,
    FileFormatError,
    ParameterError,
    PivUqError,
)
from .flowdata import read_flo, read_image_pair, read_unc, write_flo, write_pgm, write_unc
from .pivcc import EstimatorConfig, estimate
from .synthgen import (
    AnalyticFlow,
    DegradationSpec,
    SceneSpec,
    degrade_pair,
    generate_pair,
)
from .uqensemble import DEFAULT_MM_CONFIGS, mm_estimate, mt_estimate


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # do not exit(2); route to the common handler
        raise _UsageError(message)


def _flow_from_args(args) -> AnalyticFlow:
    return AnalyticFlow(
        kind=args.flow,
        u0=args.u0,
        v0=args.v0,
        omega=args.omega,
        rate=args.rate,
        circulation=args.circulation,
        core_radius=args.core_radius,
        center=(args.center_x, args.center_y),
        max_displacement=args.max_displacement,
    )


def _estimator_from_args(args) -> EstimatorConfig:
    if args.config:
        return configfile.estimator_config_from_kv(configfile.load_kv(args.config))
    return EstimatorConfig(
        window_size=args.window_size,
        overlap=args.overlap,
        peak_fit=args.peak_fit,
        correlation=args.correlation,
    )


def _add_estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window-size", type=int, default=32)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--peak-fit", choices=("gaussian3", "parabolic3"), default="gaussian3")
    p.add_argument("--correlation", choices=("direct", "fft"), default="fft")
    p.add_argument("--config", help="flat key=value estimator config file")


def _cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = SceneSpec(
        width=args.width,
        height=args.height,
        particle_density=args.density,
        particle_diameter=args.diameter,
        peak_intensity=args.peak,
        seed=args.seed,
    )
    flow = _flow_from_args(args)
    pair, gt = generate_pair(scene, flow)
    if args.noise_var > 0 or args.blur_sigma > 0:
        pair = degrade_pair(
            pair,
            DegradationSpec(
                noise_var=args.noise_var, blur_sigma=args.blur_sigma, noise_seed=args.noise_seed
            ),
        )
    write_pgm(pair.frame_a, out / "frame_a.pgm")
    write_pgm(pair.frame_b, out / "frame_b.pgm")
    write_flo(gt, out / "gt.flo")
    configfile.dump_kv(configfile.scene_spec_to_kv(scene), out / "scene.cfg")
    configfile.dump_kv(configfile.analytic_flow_to_kv(flow), out / "flow.cfg")
    print(f"wrote frame_a.pgm, frame_b.pgm, gt.flo under {out}")
    return 0


def _cmd_estimate(args) -> int:
    pair = read_image_pair(args.frame_a, args.frame_b)
    flow = estimate(pair, _estimator_from_args(args))
    write_flo(flow, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_uq(args) -> int:
    pair = read_image_pair(args.frame_a, args.frame_b)
    cfg = _estimator_from_args(args)
    if args.method == "mm":
        result = mm_estimate(pair, DEFAULT_MM_CONFIGS)
        flow, unc = result.mean_flow, result.uncertainty
    elif args.method == "mt":
        angles = tuple(int(a) for a in args.angles.split(","))
        result = mt_estimate(pair, cfg, angles)
        flow, unc = result.mean_flow, result.uncertainty
    else:
        if not args.model:
            raise _UsageError("--model is required with --method unn")
        model = unn.load_model(args.model)
        flow = estimate(pair, cfg)
        unc = unn.forward(model, pair, flow)
    write_flo(flow, args.out_flow)
    write_unc(unc, args.out_unc)
    print(f"wrote {args.out_flow} and {args.out_unc}")
    return 0


def _cmd_train_unn(args) -> int:
    from .harness import default_scene_set

    flows = tuple(args.flows.split(","))
    scenes = [
        sf
        for sf in default_scene_set(n_scenes=4 * args.scenes, seed=args.seed, size=args.size)
        if sf[1].kind in flows
    ][: args.scenes]
    if len(scenes) < 1:
        raise ParameterError(f"no training scenes for flow kinds {flows}")
    cfg = EstimatorConfig()
    dataset = []
    for scene, flow in scenes:
        pair, gt = generate_pair(scene, flow)
        dataset.append((pair, estimate(pair, cfg), gt))
    train_cfg = unn.TrainConfig(
        learning_rate=args.lr,
        steps=args.steps,
        batch=args.batch,
        seed=args.seed,
        crop_size=args.crop,
    )
    model, history = unn.train(dataset, train_cfg)
    unn.save_model(model, args.out)
    if args.history:
        with open(args.history, "w", encoding="utf-8") as fh:
            json.dump(history, fh)
            fh.write("\n")
    final = history[-1] if history else float("nan")
    print(f"wrote {args.out} (final loss {final:.4f} after {len(history)} steps)")
    return 0


def _cmd_evaluate(args) -> int:
    pred = read_flo(args.pred)
    gt = read_flo(args.gt)
    unc = read_unc(args.unc)
    report, curve = metrics.evaluate_fields(pred, gt, unc, args.k, args.fractions)
    text = metrics.report_to_json(report, args.out)
    if args.curve_csv:
        metrics.curve_to_csv(curve, args.curve_csv)
    if args.svg:
        metrics.curve_to_svg(curve, args.svg)
    print(text)
    return 0


def _cmd_report(args) -> int:
    # precedence: explicit flag > config file > default
    config = configfile.load_kv(args.config) if args.config else {}

    def setting(flag_value, key, default, cast=str):
        if flag_value is not None:
            return flag_value
        if key in config:
            try:
                return cast(config[key])
            except ValueError:
                raise ConfigError(f"key {key!r}: cannot parse {config[key]!r}") from None
        return default

    methods = tuple(setting(args.methods, "methods", "mm,mt").split(","))
    noise_raw = setting(args.noise_vars, "noise_vars", "0,5,10")
    blur_raw = setting(args.blur_sigmas, "blur_sigmas", "0,2.5,5")
    noise_vars = tuple(float(v) for v in noise_raw.split(",")) if noise_raw else ()
    blur_sigmas = tuple(float(v) for v in blur_raw.split(",")) if blur_raw else ()
    seed = setting(args.seed, "seed", 0, int)
    spec = harness.ExperimentSpec(
        scenes=harness.default_scene_set(
            n_scenes=setting(args.scenes, "scenes", 10, int),
            seed=seed,
            size=setting(args.size, "size", 128, int),
        ),
        out_dir=Path(args.out),
        methods=methods,
        noise_vars=noise_vars,
        blur_sigmas=blur_sigmas,
        seed=seed,
        noise_floor=setting(args.noise_floor, "noise_floor", 0.25, float),
        unn_model_path=setting(args.unn_model, "unn_model", None),
    )
    record = harness.run_matrix(spec)
    failures = [c for c in record.cells if c.error is not None]
    print(
        f"completed {len(record.cells) - len(failures)}/{len(record.cells)} cells "
        f"in {record.total_seconds:.1f} s; reports under {Path(args.out) / 'reports'}"
    )
    for cell in failures:
        print(f"  failed {cell.scene_id}/{cell.method}/{cell.axis}{cell.level:g}: {cell.error}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pivuq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[], help="render a synthetic pair + ground truth")
    p.add_argument("--flow", choices=("uniform", "solid_rotation", "shear", "lamb_oseen"), required=True)
    p.add_argument("--u0", type=float, default=0.0)
    p.add_argument("--v0", type=float, default=0.0)
    p.add_argument("--omega", type=float, default=0.0)
    p.add_argument("--rate", type=float, default=0.0)
    p.add_argument("--circulation", type=float, default=0.0)
    p.add_argument("--core-radius", type=float, default=4.0)
    p.add_argument("--center-x", type=float, default=0.0)
    p.add_argument("--center-y", type=float, default=0.0)
    p.add_argument("--max-displacement", type=float, default=10.0)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--density", type=float, default=0.03)
    p.add_argument("--diameter", type=float, default=2.5)
    p.add_argument("--peak", type=float, default=220.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-var", type=float, default=0.0)
    p.add_argument("--blur-sigma", type=float, default=0.0)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("estimate", help="cross-correlation flow estimation")
    p.add_argument("--frame-a", required=True)
    p.add_argument("--frame-b", required=True)
    _add_estimator_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("uq", help="flow + uncertainty with mm, mt, or unn")
    p.add_argument("--frame-a", required=True)
    p.add_argument("--frame-b", required=True)
    p.add_argument("--method", choices=("mm", "mt", "unn"), required=True)
    p.add_argument("--angles", default="0,90,180,270", help="mt rotation angles, comma separated")
    p.add_argument("--model", help="trained UNN weights (required for --method unn)")
    _add_estimator_flags(p)
    p.add_argument("--out-flow", required=True)
    p.add_argument("--out-unc", required=True)
    p.set_defaults(func=_cmd_uq)

    p = sub.add_parser("train-unn", help="train the uncertainty network on synthetic scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=8)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--crop", type=int, default=48)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--flows",
        default="uniform,solid_rotation,shear",
        help="training flow kinds (lamb_oseen held out by default)",
    )
    p.add_argument("--history", help="write the loss history as JSON")
    p.set_defaults(func=_cmd_train_unn)

    p = sub.add_parser("evaluate", help="coverage, rank CC and sparsification AUC")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--unc", required=True)
    p.add_argument("--k", type=float, default=2.0)
    p.add_argument("--fractions", type=int, default=50)
    p.add_argument("--out", help="also write the JSON report here")
    p.add_argument("--curve-csv")
    p.add_argument("--svg")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="run the degradation matrix and emit reports")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="flat key=value experiment overrides")
    p.add_argument("--scenes", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--methods")
    p.add_argument("--noise-vars")
    p.add_argument("--blur-sigmas")
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-floor", type=float)
    p.add_argument("--unn-model")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error:usage: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return 1
    except FileFormatError as exc:
        print(f"error:format: {exc}", file=sys.stderr)
        return 1
    except (ParameterError, DimensionError) as exc:
        print(f"error:parameter: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error:input: {exc}", file=sys.stderr)
        return 1
    except DegenerateInputError as exc:
        print(f"error:data: {exc}", file=sys.stderr)
        return 2
    except PivUqError as exc:
        print(f"error:runtime: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
