"""Command line entry point: ``sandpile-lab <subcommand> [flags]``.

Exit codes: 0 success, 1 a verified invariant failed, 2 usage error.
Every JSON report embeds the validated :class:`RunConfig`.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass

import numpy as np

from . import sfield
from .analysis import TestFunction, measured_radius, run_convergence_study
from .exceptions import SandpileError
from .green import GreenProblem, solve_phi_n
from .render import Palette, encode_ppm, parse_crop, render_png, render_rgb
from .stabilizer import STRATEGIES, Strategy, stabilize, stabilize_point_pile
from .suites import dump_counterexamples, run_suites
from .validation import check_dimension, check_positive_int, check_tolerance

SUBCOMMANDS = ("stabilize", "green", "converge", "render", "verify")
DEFAULT_PHI = ("bump:0,0:0.3",)


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    d: int = 2
    n: int | None = None
    schedule: tuple | None = None
    strategy: str = "sweep"
    threads: int = 1
    seed: int = 0
    mem_cap_gb: float = 4.0
    tol: float = 1e-10
    radius: float | None = None
    phi: tuple = ()
    crop: tuple | None = None
    palette: str = "default"
    plane: int = 0
    input: str | None = None
    output: str | None = None
    report: str | None = None
    timing: bool = False

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise UsageError(f"unknown subcommand {self.subcommand!r}")
        try:
            check_dimension(self.d)
            check_tolerance(self.tol)
            check_positive_int(self.threads, "threads")
            if self.n is not None:
                check_positive_int(self.n, "n")
            if self.schedule is not None:
                for n in self.schedule:
                    check_positive_int(n, "schedule entry")
            Strategy.coerce(self.strategy)
            Palette.named(self.palette, self.d)
            for text in self.phi:
                TestFunction.parse(text)
        except (ValueError, TypeError) as exc:
            raise UsageError(str(exc)) from None
        if self.seed < 0:
            raise UsageError("seed must be nonnegative")
        if not self.mem_cap_gb > 0:
            raise UsageError("memory cap must be positive")
        if self.radius is not None and not self.radius > 0:
            raise UsageError("radius must be positive")

    @property
    def mem_cap(self) -> int:
        return int(self.mem_cap_gb * 2**30)

    def strategy_obj(self) -> Strategy:
        return Strategy(self.strategy, workers=self.threads)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("schedule", "phi", "crop"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def _crop(text: str) -> tuple:
    try:
        return parse_crop(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_help()}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--d", type=int, default=2, help="lattice dimension (2 or 3)")
    common.add_argument("--strategy", choices=STRATEGIES, default="sweep")
    common.add_argument("--threads", type=int, default=1, help="workers for the tiled strategy")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--mem-cap-gb", type=float, default=4.0)
    common.add_argument("--tol", type=float, default=1e-10)
    common.add_argument("--out", help="output path")
    common.add_argument("--report", help="write the JSON report here instead of stdout")
    common.add_argument("--timing", action="store_true", help="include wall-clock times (not reproducible)")

    parser = _Parser(prog="sandpile-lab", description="Abelian sandpile experiments.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("stabilize", parents=[common], help="stabilize a point pile or an sfield file")
    p.add_argument("--n", type=int, help="chips at the origin")
    p.add_argument("--in", dest="input", help="sfield chip configuration to stabilize")
    p.add_argument("--odometer-out", help="also write the odometer as sfield")

    p = sub.add_parser("green", parents=[common], help="solve for the lattice fundamental solution")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--radius", type=float, default=1.5, help="outer radius of the solve")

    p = sub.add_parser("converge", parents=[common], help="cross-n convergence diagnostics")
    p.add_argument("--schedule", type=_int_list, default=(1000, 4000, 16000))
    p.add_argument("--phi", action="append", help="test function, e.g. bump:0,0:0.3 (repeatable)")

    p = sub.add_parser("render", parents=[common], help="draw a stable configuration")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--crop", type=_crop, help="x0,y0,x1,y1 inclusive, lattice coordinates")
    p.add_argument("--palette", default="default", choices=("default", "gray"))
    p.add_argument("--plane", type=int, default=0, help="slice index for d=3")

    sub.add_parser("verify", parents=[common], help="run the property suites")
    return parser


def _attach_negative_values(argv) -> list:
    # "--crop -5,-5,5,5" would otherwise read the value as an unknown flag
    out = []
    argv = list(argv)
    i = 0
    while i < len(argv):
        if argv[i] in ("--crop", "--plane") and i + 1 < len(argv) and argv[i + 1][:1] == "-":
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def parse_config(argv) -> tuple[RunConfig, argparse.Namespace]:
    args = build_parser().parse_args(_attach_negative_values(argv))
    phi = tuple(args.phi) if getattr(args, "phi", None) else ()
    if args.subcommand == "converge" and not phi:
        phi = DEFAULT_PHI
    config = RunConfig(
        subcommand=args.subcommand,
        d=args.d,
        n=getattr(args, "n", None),
        schedule=getattr(args, "schedule", None),
        strategy=args.strategy,
        threads=args.threads,
        seed=args.seed,
        mem_cap_gb=args.mem_cap_gb,
        tol=args.tol,
        radius=getattr(args, "radius", None),
        phi=phi,
        crop=getattr(args, "crop", None),
        palette=getattr(args, "palette", "default"),
        plane=getattr(args, "plane", 0),
        input=getattr(args, "input", None),
        output=args.out,
        report=args.report,
        timing=args.timing,
    )
    if config.subcommand == "stabilize" and (config.n is None) == (config.input is None):
        raise UsageError("stabilize needs exactly one of --n or --in")
    if config.subcommand in ("render",) and not config.output:
        raise UsageError("render needs --out")
    return config, args


def _emit(config: RunConfig, payload: dict) -> None:
    text = json.dumps({"config": config.to_dict(), **payload}, indent=2, sort_keys=True) + "\n"
    if config.report:
        with open(config.report, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_stabilize(config: RunConfig, args) -> int:
    if config.input:
        eta = sfield.read(config.input, kind="chips")
        result = stabilize(eta, config.strategy_obj(), mem_cap=config.mem_cap)
        n = eta.total()
    else:
        result = stabilize_point_pile(config.n, config.d, config.strategy_obj(), mem_cap=config.mem_cap)
        n = config.n
    if config.output:
        sfield.write(config.output, result.final)
    if args.odometer_out:
        sfield.write(args.odometer_out, result.odometer)
    _emit(config, {"result": result.summary(n, timing=config.timing)})
    return 0


def cmd_green(config: RunConfig, args) -> int:
    problem = GreenProblem(config.d, config.n, config.radius, config.tol)
    phi, info = solve_phi_n(problem, return_info=True)
    if config.output:
        sfield.write(config.output, phi)
    _emit(config, {"result": {"iterations": info.iterations, "residual": info.residual,
                              "h": phi.h, "k": phi.box.k}})
    return 0


def cmd_converge(config: RunConfig, args) -> int:
    report = run_convergence_study(list(config.schedule), list(config.phi), config.d,
                                   strategy=config.strategy_obj(), tol=config.tol,
                                   config=config.to_dict())
    text = report.to_json() + "\n"
    target = config.output or config.report
    if target:
        with open(target, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_render(config: RunConfig, args) -> int:
    s = sfield.read(config.input, kind="chips")
    if s.d != config.d:
        raise UsageError(f"input has d={s.d} but --d {config.d} was given")
    palette = Palette.named(config.palette, s.d)
    if config.output.endswith(".ppm"):
        data = encode_ppm(render_rgb(s, palette, config.crop, config.plane))
    else:
        data = render_png(s, palette, config.crop, config.plane)
    with open(config.output, "wb") as fh:
        fh.write(data)
    rgb = render_rgb(s, palette, config.crop, config.plane)
    nonwhite = int(np.any(rgb != 255, axis=-1).sum())
    _emit(config, {"result": {"width": rgb.shape[1], "height": rgb.shape[0],
                              "nonwhite_pixels": nonwhite, "occupied_radius": measured_radius(s)}})
    return 0


def cmd_verify(config: RunConfig, args) -> int:
    results = run_suites(config.seed)
    passed = all(r.passed for r in results)
    dumps = [] if passed else dump_counterexamples(results, config.output or "counterexamples")
    _emit(config, {"passed": passed, "suites": [r.to_dict() for r in results], "counterexamples": dumps})
    return 0 if passed else 1


COMMANDS = {
    "stabilize": cmd_stabilize,
    "green": cmd_green,
    "converge": cmd_converge,
    "render": cmd_render,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    try:
        config, args = parse_config(sys.argv[1:] if argv is None else argv)
        return COMMANDS[config.subcommand](config, args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (SandpileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
