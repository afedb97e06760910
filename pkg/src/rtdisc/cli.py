"""Command-line front end: ``rtdisc {solve,sinogram,reconstruct,predict-disc,validate}``.

Exit codes: 0 success, 1 configuration or scene error (including failed
validation checks), 2 solver non-convergence, 3 sinogram data error,
4 reconstruction error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .discontinuity import EPS_PROBE, DELTA_XI, build_split_data, extract_jumps, predict_disc
from .geometry import DomainError, audit_convexity
from .media import BallScene, ConfigurationError, SceneError, load_scene, phase_eval
from .tomography import (
    SINOGRAM_OPTIONS,
    ReconstructionError,
    Sinogram,
    SinogramDataError,
    fbp_reconstruct,
    sinogram_from_jumps,
    slice_reduce,
    xray_forward,
)
from .transport import (
    ConstantBoundary,
    ContractionError,
    ConvergenceError,
    SolverOptions,
    extend_to_outgoing,
    solve,
)

log = logging.getLogger("rtdisc")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_SINOGRAM, EXIT_RECON = 0, 1, 2, 3, 4


def fmt(x: float) -> str:
    return f"{x:.17g}"


@dataclass(frozen=True)
class RunConfig:
    command: str
    scene: Path | None
    out: Path
    nx: int
    ntheta: int
    nphi: int
    ns: int
    np_: int
    ray_step: float
    tol: float
    max_iter: int
    eps: float
    delta_xi: float
    slice_x0: float | None
    filter: str

    def __post_init__(self):
        for name in ("nx", "ntheta", "nphi", "ns", "np_"):
            if getattr(self, name) < 2:
                raise ConfigurationError(f"--{name.rstrip('_').replace('_', '-')} must be >= 2")
        for name in ("ray_step", "tol", "eps", "delta_xi"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigurationError(f"--{name.replace('_', '-')} must be positive, got {v}")
        if self.max_iter < 1:
            raise ConfigurationError("--max-iter must be >= 1")

    def solver_options(self) -> SolverOptions:
        return SolverOptions(self.nx, self.ntheta, self.ray_step, self.tol, self.max_iter)


# Per-command grid defaults: a sinogram runs one solve per line, on a coarse grid.
_DEFAULTS = {
    "sinogram": dict(nx=SINOGRAM_OPTIONS.nx, ntheta=SINOGRAM_OPTIONS.ntheta,
                     ray_step=SINOGRAM_OPTIONS.ray_step, tol=SINOGRAM_OPTIONS.tol),
    "reconstruct": dict(nx=SINOGRAM_OPTIONS.nx, ntheta=SINOGRAM_OPTIONS.ntheta,
                        ray_step=SINOGRAM_OPTIONS.ray_step, tol=SINOGRAM_OPTIONS.tol),
    "validate": dict(nx=48, ntheta=32, ray_step=0.01, tol=1e-8, nphi=16, ns=16, np=32),
}
_GLOBAL = dict(nx=256, ntheta=128, ray_step=2e-3, tol=1e-10, nphi=360, ns=256, np=256)


def build_config(args) -> RunConfig:
    d = {**_GLOBAL, **_DEFAULTS.get(args.command, {})}

    def pick(name):
        v = getattr(args, name)
        return d[name] if v is None else v

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return RunConfig(
        command=args.command,
        scene=Path(args.scene) if args.scene else None,
        out=out,
        nx=pick("nx"),
        ntheta=pick("ntheta"),
        nphi=pick("nphi"),
        ns=pick("ns"),
        np_=pick("np"),
        ray_step=pick("ray_step"),
        tol=pick("tol"),
        max_iter=args.max_iter,
        eps=args.eps_probe,
        delta_xi=args.delta_xi,
        slice_x0=args.slice,
        filter=args.filter,
    )


def bundled_scene(name: str) -> Path:
    return Path(str(resources.files("rtdisc") / "data" / name))


def scene_for(cfg: RunConfig, default: str | None = None):
    path = cfg.scene or (bundled_scene(default) if default else None)
    if path is None:
        raise ConfigurationError("--scene is required")
    scene = load_scene(path)
    if isinstance(scene, BallScene):
        if cfg.slice_x0 is None:
            raise ConfigurationError("3D ball scenes need --slice X0")
        return slice_reduce(scene, cfg.slice_x0)
    if cfg.slice_x0 is not None:
        raise ConfigurationError("--slice applies to 3D ball scenes only")
    return scene


def boundary_for(args, scene):
    if args.boundary == "constant":
        return ConstantBoundary(args.amplitude)
    return build_split_data(scene.domain, tuple(args.split_normal), args.split_offset, args.amplitude)


# -- commands -----------------------------------------------------------------


def cmd_solve(cfg: RunConfig, args) -> int:
    scene = scene_for(cfg)
    boundary = boundary_for(args, scene)
    field = solve(scene, boundary, cfg.solver_options())
    R = scene.domain.radius
    a = 2 * np.pi * np.arange(args.detectors) / args.detectors
    pts = R * np.stack([np.cos(a), np.sin(a)], axis=1)
    trace = extend_to_outgoing(field, pts, pts / R)
    lines = ["index,x,y,xi_x,xi_y,value,ballistic,scattered"]
    for i in range(len(pts)):
        lines.append(",".join([str(i)] + [fmt(v) for v in (
            pts[i, 0], pts[i, 1], trace.dirs[i, 0], trace.dirs[i, 1],
            trace.values[i], trace.ballistic[i], trace.scattered[i])]))
    (cfg.out / "trace.csv").write_text("\n".join(lines) + "\n")
    report = {
        "iterations": field.iterations,
        "contraction_bound": field.m_hat,
        "max_ratio": max(field.ratios, default=0.0),
        "ratios": field.ratios,
        "residual": field.residual(),
        "boundary_sup": field.boundary_sup,
    }
    text = "\n".join(f"{k}: {_fmt_value(v)}" for k, v in report.items())
    (cfg.out / "report.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def _fmt_value(v):
    if isinstance(v, float):
        return fmt(v)
    if isinstance(v, list):
        return "[" + ", ".join(fmt(x) for x in v) + "]"
    return str(v)


def _sinogram(cfg: RunConfig, scene, amplitude: float) -> Sinogram:
    def progress(done, total):
        log.info("sinogram angle %d/%d", done, total)

    return sinogram_from_jumps(
        scene, cfg.nphi, cfg.ns, amplitude, cfg.solver_options(), cfg.eps, cfg.delta_xi,
        progress=progress,
    )


def cmd_sinogram(cfg: RunConfig, args) -> int:
    scene = scene_for(cfg)
    sino = _sinogram(cfg, scene, args.amplitude)
    sino.to_csv(cfg.out / "sinogram.csv")
    print(f"sinogram: {sino.shape[0]} x {sino.shape[1]}, {int(sino.mask.sum())} masked")
    return EXIT_OK


def cmd_reconstruct(cfg: RunConfig, args) -> int:
    if args.sinogram:
        sino = Sinogram.from_csv(args.sinogram)
    else:
        sino = _sinogram(cfg, scene_for(cfg), args.amplitude)
        sino.to_csv(cfg.out / "sinogram.csv")
    img = fbp_reconstruct(sino, cfg.np_, cfg.filter)
    img.to_pgm(cfg.out / "recon.pgm")
    img.to_csv(cfg.out / "recon.csv")
    print(f"reconstruction: {img.n} x {img.n}, max {fmt(float(img.values.max()))}")
    return EXIT_OK


def cmd_predict_disc(cfg: RunConfig, args) -> int:
    scene = scene_for(cfg)
    data = build_split_data(scene.domain, tuple(args.split_normal), args.split_offset, args.amplitude)
    disc = predict_disc(scene, data)
    text = [f"boundary_induced: {len(disc.boundary_induced)} fans"]
    for f in disc.boundary_induced:
        text.append(f"  seed ({fmt(f.point[0])}, {fmt(f.point[1])})")
    if disc.coefficient_induced:
        segs = {id(f.segment) for f in disc.coefficient_induced}
        text.append(f"coefficient_induced: {len(segs)} segments, {len(disc.coefficient_induced)} families")
    else:
        text.append("coefficient_induced: none")
    text.append(f"exceptional_directions: {len(disc.exceptional_directions)}")
    rows = ["family,kind,x0,y0,x1,y1,dir_x,dir_y"]
    for i, f in enumerate(disc.boundary_induced):
        rows.append(f"{i},boundary,{fmt(f.point[0])},{fmt(f.point[1])},,,,")
    for i, f in enumerate(disc.coefficient_induced, start=len(disc.boundary_induced)):
        (x0, y0), (x1, y1) = f.segment.endpoints
        rows.append(",".join([str(i), "coefficient"] + [fmt(v) for v in (x0, y0, x1, y1, *f.direction)]))
    (cfg.out / "disc.csv").write_text("\n".join(rows) + "\n")
    (cfg.out / "disc.txt").write_text("\n".join(text) + "\n")
    print("\n".join(text))
    return EXIT_OK


def cmd_validate(cfg: RunConfig, args) -> int:
    scene = scene_for(cfg, default=None if cfg.scene else "phantom_slice.json")
    checks = run_validation(scene, cfg)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_CONFIG


def run_validation(scene, cfg: RunConfig) -> list[tuple[str, bool, str]]:
    """Quick invariant checks across modules on one scene."""
    from scipy.integrate import quad

    out = []
    total = quad(lambda t: phase_eval(scene.phase, math.cos(t)), -math.pi, math.pi,
                 points=[0.0], epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    out.append(("phase normalisation", abs(total - 1) <= 1e-8, f"|int p - 1| = {abs(total - 1):.3e}"))

    audit = audit_convexity(scene, n_rays=200)
    out.append(("partition audit", True,
                f"{len(audit.flat_segments)} flat segments, max crossings {audit.max_crossings}"))

    R = scene.domain.radius
    data = build_split_data(scene.domain, (0.0, 1.0), 0.0, 1.0)
    opts = cfg.solver_options()
    try:
        field = solve(scene, data, opts)
    except (ConvergenceError, ContractionError) as exc:
        out.append(("contraction", False, str(exc)))
        return out
    worst = max(field.ratios, default=0.0)
    out.append(("contraction", worst <= field.m_hat + opts.slack,
                f"max ratio {worst:.4f}, bound {field.m_hat:.4f}"))
    res = field.residual()
    out.append(("residual", res <= 10 * opts.tol * field.boundary_sup, f"{res:.3e}"))
    out.append(("nonnegativity", bool(np.all(field.values[:, field.operator.interior] >= -1e-12)),
                f"min {field.values[:, field.operator.interior].min():.3e}"))

    g1 = data.gamma[1]
    L = np.linspace(0.2, 1.9, 8) * R
    cos_a = L / (2 * R)
    base = math.atan2(-g1[1], -g1[0])
    ang = base + np.arccos(cos_a)
    xi = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    pts = g1 + L[:, None] * xi
    pts *= R / np.linalg.norm(pts, axis=1, keepdims=True)
    jumps = extract_jumps(field, data, pts, xi, cfg.eps, cfg.delta_xi)
    errs = []
    for j, p, d in zip(jumps, pts, xi):
        phi = math.atan2(-d[0], d[1])
        s = float(p @ np.array([math.cos(phi), math.sin(phi)]))
        ref = math.exp(-xray_forward(scene, phi, s))
        errs.append(abs(j.jump - ref) / ref)
    out.append(("jump identity", max(errs) <= 0.02, f"max relative error {max(errs):.3e}"))

    sym = [abs(xray_forward(scene, p, s) - xray_forward(scene, p + math.pi, -s))
           for p in np.linspace(0, math.pi, 7) for s in np.linspace(-0.9 * R, 0.9 * R, 7)]
    out.append(("x-ray symmetry", max(sym) <= 1e-12, f"max |g(phi,s) - g(phi+pi,-s)| {max(sym):.3e}"))

    rng = np.random.default_rng(0)
    ang = np.pi * np.arange(cfg.nphi) / cfg.nphi
    off = -R + (np.arange(cfg.ns) + 0.5) * 2 * R / cfg.ns
    mk = lambda v: Sinogram(ang, off, v, np.zeros(v.shape, bool), R)
    a, b = rng.random((cfg.nphi, cfg.ns)), rng.random((cfg.nphi, cfg.ns))
    lin = np.abs(fbp_reconstruct(mk(a + b), cfg.np_).values
                 - fbp_reconstruct(mk(a), cfg.np_).values - fbp_reconstruct(mk(b), cfg.np_).values).max()
    out.append(("fbp linearity", lin <= 1e-10, f"{lin:.3e}"))
    return out


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scene", help="scene JSON file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--nx", type=int, help="spatial nodes per axis")
    common.add_argument("--ntheta", type=int, help="number of directions")
    common.add_argument("--nphi", type=int, help="sinogram angles")
    common.add_argument("--ns", type=int, help="sinogram offsets")
    common.add_argument("--np", type=int, help="reconstruction pixels per axis")
    common.add_argument("--ray-step", type=float, help="ray-march step")
    common.add_argument("--tol", type=float, help="Neumann series tolerance")
    common.add_argument("--max-iter", type=int, default=200)
    common.add_argument("--eps-probe", type=float, default=EPS_PROBE, help="jump probe distance")
    common.add_argument("--delta-xi", type=float, default=DELTA_XI, help="exceptional-direction tolerance")
    common.add_argument("--slice", type=float, metavar="X0", help="slice a 3D ball scene at x3 = X0")
    common.add_argument("--filter", choices=("ramlak", "cosine"), default="ramlak")
    common.add_argument("--amplitude", type=float, default=1.0, help="boundary amplitude C")
    common.add_argument("--boundary", choices=("constant", "split"), default="constant")
    common.add_argument("--split-normal", type=float, nargs=2, default=(0.0, 1.0), metavar=("NX", "NY"))
    common.add_argument("--split-offset", type=float, default=0.0)
    common.add_argument("--detectors", type=int, default=64, help="outgoing detectors for solve")
    common.add_argument("--sinogram", help="input sinogram CSV for reconstruct")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rtdisc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "sinogram", "reconstruct", "predict-disc", "validate"):
        sub.add_parser(name, parents=[common])
    return p


_COMMANDS = {
    "solve": cmd_solve,
    "sinogram": cmd_sinogram,
    "reconstruct": cmd_reconstruct,
    "predict-disc": cmd_predict_disc,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        return _COMMANDS[args.command](cfg, args)
    except (SceneError, ConfigurationError, DomainError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, ContractionError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SinogramDataError as exc:
        print(f"sinogram error: {exc}", file=sys.stderr)
        return EXIT_SINOGRAM
    except ReconstructionError as exc:
        print(f"reconstruction error: {exc}", file=sys.stderr)
        return EXIT_RECON


if __name__ == "__main__":
    sys.exit(main())
