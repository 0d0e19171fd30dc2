"""Scenario runner: config parsing, geometry certification, the iteration
cascade with per-record checkpointing, and the diagnostic subcommands.

Exit codes: 0 success, 1 validation-suite failure, 2 config error,
3 geometry certification failure, 4 solver/resonance error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import asymptotics, bie, multiscatter, rays, specfun
from .geometry import (CertificationError, Curve, GeometryError, Scene,
                       certify_conditions, circle_ellipse_scene)

FLOAT_FMT = "%.17g"

RECORD_COLUMNS = ("t", "re_eta", "im_eta", "phi",
                  "re_eta_slow", "im_eta_slow", "region")


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------
# Config parsing (INI sections; unknown keys rejected)
# ----------------------------------------------------------------------

_SCENE_KEYS = {"alpha_degrees", "k", "sequence", "reflections"}
_OBSTACLE_KEYS = {"kind", "center", "radius", "semi_axes", "rotation_degrees",
                  "base_radius", "cos_amplitudes", "sin_amplitudes"}
_DISC_KEYS = {"points_per_wavelength", "min_nodes"}
_OUTPUT_KEYS = {"directory", "format"}
_VALIDATE_KEYS = {"mie_n", "mie_k"}


def _floats(text: str) -> list:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


class RunConfig:
    def __init__(self, path: str):
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        known_sections = {"scene", "discretization", "output", "validate"}
        obstacles = {}
        for section in parser.sections():
            if section.startswith("obstacle."):
                try:
                    idx = int(section.split(".", 1)[1])
                except ValueError as exc:
                    raise ConfigError(f"bad obstacle section [{section}]") from exc
                obstacles[idx] = parser[section]
                bad = set(parser[section]) - _OBSTACLE_KEYS
                if bad:
                    raise ConfigError(f"unknown keys in [{section}]: {sorted(bad)}")
            elif section in known_sections:
                allowed = {"scene": _SCENE_KEYS, "discretization": _DISC_KEYS,
                           "output": _OUTPUT_KEYS, "validate": _VALIDATE_KEYS}[section]
                bad = set(parser[section]) - allowed
                if bad:
                    raise ConfigError(f"unknown keys in [{section}]: {sorted(bad)}")
            else:
                raise ConfigError(f"unknown section [{section}]")
        if "scene" not in parser:
            raise ConfigError("missing [scene] section")
        if not obstacles:
            raise ConfigError("no [obstacle.N] sections")
        if sorted(obstacles) != list(range(len(obstacles))):
            raise ConfigError("obstacle sections must be numbered 0..n-1")

        scene_sec = parser["scene"]
        try:
            self.k = scene_sec.getfloat("k")
            if self.k is None or self.k <= 0:
                raise ConfigError("scene.k must be positive")
            alpha_deg = scene_sec.getfloat("alpha_degrees", 0.0)
            self.alpha = np.array([math.cos(math.radians(alpha_deg)),
                                   math.sin(math.radians(alpha_deg))])
            self.reflections = scene_sec.getint("reflections", 0)
            if self.reflections < 0:
                raise ConfigError("scene.reflections must be >= 0")
            seq_text = scene_sec.get("sequence", "alternate").strip()
        except ValueError as exc:
            raise ConfigError(f"bad [scene] value: {exc}") from exc

        self.curves = []
        for idx in range(len(obstacles)):
            self.curves.append(self._build_curve(obstacles[idx], idx))

        if seq_text == "alternate":
            if len(self.curves) < 2:
                raise ConfigError("'alternate' sequence needs >= 2 obstacles")
            self.sequence = tuple(m % 2 for m in range(self.reflections + 1))
        else:
            try:
                seq = tuple(int(x) for x in seq_text.split(",") if x.strip())
            except ValueError as exc:
                raise ConfigError(f"bad sequence {seq_text!r}") from exc
            if len(seq) < self.reflections + 1:
                raise ConfigError("sequence shorter than reflections + 1")
            self.sequence = seq

        disc = parser["discretization"] if "discretization" in parser else {}
        try:
            self.points_per_wavelength = float(disc.get("points_per_wavelength",
                                                        bie.DEFAULT_PPW))
            self.min_nodes = int(disc.get("min_nodes", 32))
        except ValueError as exc:
            raise ConfigError(f"bad [discretization] value: {exc}") from exc

        out = parser["output"] if "output" in parser else {}
        self.out_dir = out.get("directory", "out")
        self.out_format = out.get("format", "csv")
        if self.out_format not in ("csv", "bin"):
            raise ConfigError("output.format must be csv or bin")

        val = parser["validate"] if "validate" in parser else {}
        try:
            self.validate_mie_n = int(val.get("mie_n", 512))
            self.validate_mie_k = float(val.get("mie_k", 50.0))
        except ValueError as exc:
            raise ConfigError(f"bad [validate] value: {exc}") from exc

    @staticmethod
    def _build_curve(sec, idx: int) -> Curve:
        kind = sec.get("kind", "")
        try:
            center = _floats(sec.get("center", "0, 0"))
            if kind == "circle":
                return Curve.circle(center, float(sec["radius"]))
            if kind == "ellipse":
                semi = _floats(sec["semi_axes"])
                rot = math.radians(float(sec.get("rotation_degrees", "0")))
                return Curve.ellipse(center, semi[0], semi[1], rotation=rot)
            if kind == "trig":
                return Curve.trig_radial(
                    center, float(sec["base_radius"]),
                    cos_amp=_floats(sec.get("cos_amplitudes", "")),
                    sin_amp=_floats(sec.get("sin_amplitudes", "")))
        except (KeyError, ValueError, IndexError, GeometryError) as exc:
            raise ConfigError(f"obstacle {idx}: {exc}") from exc
        raise ConfigError(f"obstacle {idx}: unknown kind {kind!r}")

    def scene(self, k: float | None = None) -> Scene:
        try:
            return Scene(obstacles=tuple(self.curves), alpha=self.alpha,
                         k=k if k is not None else self.k,
                         sequence=self.sequence)
        except GeometryError as exc:
            raise ConfigError(str(exc)) from exc

    def grids(self, scene: Scene) -> dict:
        out = {}
        for idx in set(scene.sequence):
            n = max(self.min_nodes + self.min_nodes % 2,
                    bie.min_nodes(scene.obstacles[idx], scene.k,
                                  self.points_per_wavelength))
            out[idx] = bie.BoundaryGrid.make(scene.obstacles[idx], n)
        return out


# ----------------------------------------------------------------------
# Record files and manifest
# ----------------------------------------------------------------------

def _region_codes(partition) -> np.ndarray:
    return np.asarray(partition.labels, dtype=object)

def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def write_record(record, out_dir: Path, fmt: str) -> Path:
    name = f"record_m{record.m:04d}.{'csv' if fmt == 'csv' else 'npz'}"
    path = out_dir / name
    t = record.eta.grid.params
    eta = record.eta.values
    phi = np.real(record.phi.values)
    slow = record.eta_slow.values
    region = _region_codes(record.partition)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(",".join(RECORD_COLUMNS) + "\n")
            for i in range(len(t)):
                row = (FLOAT_FMT % t[i], FLOAT_FMT % eta[i].real,
                       FLOAT_FMT % eta[i].imag, FLOAT_FMT % phi[i],
                       FLOAT_FMT % slow[i].real, FLOAT_FMT % slow[i].imag,
                       str(region[i]))
                fh.write(",".join(row) + "\n")
    else:
        np.savez_compressed(path, t=t, eta=eta, phi=phi, eta_slow=slow,
                            region=np.asarray(region, dtype=str))
    return path


def read_record_file(path: Path) -> dict:
    if path.suffix == ".npz":
        data = np.load(path, allow_pickle=False)
        return {"t": data["t"], "eta": data["eta"], "phi": data["phi"],
                "eta_slow": data["eta_slow"], "region": data["region"]}
    rows = path.read_text().strip().split("\n")
    header = rows[0].split(",")
    if tuple(header) != RECORD_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {header}")
    body = np.array([row.split(",") for row in rows[1:]], dtype=object)
    num = body[:, :6].astype(float)
    return {"t": num[:, 0], "eta": num[:, 1] + 1j * num[:, 2],
            "phi": num[:, 3], "eta_slow": num[:, 4] + 1j * num[:, 5],
            "region": body[:, 6]}


class Manifest:
    def __init__(self, out_dir: Path, payload: dict):
        self.path = out_dir / "manifest.json"
        self.data = dict(payload)
        self.data.setdefault("files", [])
        self.data.setdefault("timings", {})
        self.data["status"] = "running"

    def add_file(self, path: Path, m: int | None = None,
                 seconds: float | None = None):
        entry = {"name": path.name, "sha256": _sha256(path)}
        if m is not None:
            entry["m"] = m
        self.data["files"] = [f for f in self.data["files"]
                              if f["name"] != path.name] + [entry]
        if seconds is not None and m is not None:
            self.data["timings"][f"m{m:04d}"] = round(seconds, 3)
        self.write()

    def finish(self):
        self.data["status"] = "complete"
        self.write()

    def write(self):
        self.path.write_text(json.dumps(self.data, indent=1, sort_keys=True) + "\n")


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------

def cmd_run(config: RunConfig, out_dir: Path, fmt: str) -> int:
    scene = config.scene()
    cert = certify_conditions(scene)
    if not cert.ok:
        raise CertificationError("; ".join(cert.failures))
    out_dir.mkdir(parents=True, exist_ok=True)
    grids = config.grids(scene)
    manifest = Manifest(out_dir, {
        "k": scene.k,
        "reflections": config.reflections,
        "format": fmt,
        "alpha": list(scene.alpha),
        "sequence": list(scene.sequence[:config.reflections + 1]),
        "grid_nodes": {str(i): g.n for i, g in grids.items()},
        "certificate": {"margin": cert.margin if math.isfinite(cert.margin)
                        else None,
                        "samples": cert.samples_used},
        "obstacles": [c.meta | {"kind": c.kind} for c in scene.obstacles],
    })

    # resume from whatever records already exist and match this run
    start_records = []
    for m in range(config.reflections + 1):
        path = out_dir / f"record_m{m:04d}.{'csv' if fmt == 'csv' else 'npz'}"
        if not path.exists():
            break
        try:
            data = read_record_file(path)
        except ValueError:
            break
        idx = scene.sequence[m]
        grid = grids[idx]
        if len(data["t"]) != grid.n or not np.allclose(data["t"], grid.params):
            break
        eta = bie.DensityField(grid, data["eta"],
                               meta={"content": "total", "k": scene.k,
                                     "iteration": m, "obstacle": idx})
        phi = bie.DensityField(grid, data["phi"],
                               meta={"content": "phase", "k": scene.k})
        slow = bie.DensityField(grid, data["eta_slow"],
                                meta={"content": "envelope", "k": scene.k})
        part = rays.PhasePartition(params=grid.params, labels=data["region"],
                                   roots=(0.0, 0.0))
        start_records.append(multiscatter.IterationRecord(
            m=m, obstacle=idx, eta=eta, phi=phi, eta_slow=slow,
            partition=part, chains=None))
        manifest.add_file(path, m=m)

    clock = {"t": time.monotonic()}

    def progress(m, record):
        now = time.monotonic()
        path = write_record(record, out_dir, fmt)
        manifest.add_file(path, m=m, seconds=now - clock["t"])
        clock["t"] = time.monotonic()

    multiscatter.iterate(scene, config.reflections, grids,
                         start_records=start_records, progress=progress)
    manifest.finish()
    print(f"wrote {config.reflections + 1} records to {out_dir}")
    return 0


def cmd_rays(config: RunConfig, out_dir: Path, m: int, nodes: int) -> int:
    scene = config.scene()
    cert = certify_conditions(scene)
    if not cert.ok:
        raise CertificationError("; ".join(cert.failures))
    out_dir.mkdir(parents=True, exist_ok=True)
    params = np.arange(nodes) * (2.0 * math.pi / nodes)
    path = out_dir / f"rays_m{m:04d}.csv"
    if m == 0:
        partition = rays.classify(scene, 0, params)
        with open(path, "w", newline="") as fh:
            fh.write("t,region,x0_t,phi\n")
            for t, lab in zip(params, partition.labels):
                fh.write(f"{FLOAT_FMT % t},{lab},{FLOAT_FMT % t},"
                         f"{FLOAT_FMT % rays.phase_phi(scene, 0, t)}\n")
    else:
        chains = rays.boundary_rays(scene, m, params)
        partition = rays.classify(scene, m, params, rays=chains)
        cols = ",".join(f"x{j}_t" for j in range(m + 1))
        with open(path, "w", newline="") as fh:
            fh.write(f"t,region,{cols},phi\n")
            for t, lab, chain in zip(params, partition.labels, chains):
                xcols = ",".join(FLOAT_FMT % p for p in chain.params)
                fh.write(f"{FLOAT_FMT % t},{lab},{xcols},"
                         f"{FLOAT_FMT % chain.phase}\n")
    print(f"wrote {path}")
    return 0


def cmd_mie(out_dir: Path, radius: float, k: float, n_theta: int) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    thetas = np.arange(n_theta) * (2.0 * math.pi / n_theta)
    eta = bie.mie_total_field(radius, k, np.array([1.0, 0.0]), thetas)
    path = out_dir / "mie.csv"
    with open(path, "w", newline="") as fh:
        fh.write("theta,re_eta,im_eta\n")
        for t, v in zip(thetas, eta):
            fh.write(f"{FLOAT_FMT % t},{FLOAT_FMT % v.real},{FLOAT_FMT % v.imag}\n")
    print(f"wrote {path}")
    return 0


def cmd_scaling(config: RunConfig, out_dir: Path, m: int, k_list) -> int:
    scene = config.scene(k=k_list[0])
    report = multiscatter.scaling_report(scene, m, k_list,
                                         config.points_per_wavelength)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"scaling_m{m}.json"
    payload = {
        "k_list": report.k_list,
        "illuminated_sup": {str(n): v for n, v in report.illuminated_sup.items()},
        "illuminated_sup_raw": {str(n): v for n, v in report.illuminated_sup_raw.items()},
        "weighted_sup": {str(n): v for n, v in report.weighted_sup.items()},
        "shadow_magnitude": report.shadow_magnitude,
        "ratios": report.ratios,
    }
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    print(f"wrote {path}")
    return 0


def cmd_go(config: RunConfig, out_dir: Path, m: int, k_list, points) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"go_m{m}.csv"
    with open(path, "w", newline="") as fh:
        fh.write("k,x,y,re_amp,im_amp,re_field,im_field,abs_dev\n")
        for k in k_list:
            scene = config.scene(k=k)
            grids = config.grids(scene)
            records = multiscatter.iterate(scene, m, grids)
            rec = records[m]
            for pt in points:
                amp = asymptotics.go_leading_amplitude(scene, m, pt)
                u = bie.eval_dlp(rec.eta, k, [pt])[0]
                u_slow = u * np.exp(-1j * k * rays.reflected_phase(scene, m, pt))
                dev = abs(u_slow - amp.value)
                fh.write(",".join([FLOAT_FMT % k, FLOAT_FMT % pt[0],
                                   FLOAT_FMT % pt[1],
                                   FLOAT_FMT % amp.value.real,
                                   FLOAT_FMT % amp.value.imag,
                                   FLOAT_FMT % u_slow.real,
                                   FLOAT_FMT % u_slow.imag,
                                   FLOAT_FMT % dev]) + "\n")
    print(f"wrote {path}")
    return 0


# ----------------------------------------------------------------------
# Built-in validation suite
# ----------------------------------------------------------------------

def _check(name, measured, threshold, ok):
    return {"check": name, "pass": bool(ok), "measured": measured,
            "threshold": threshold}


def validation_suite(config: RunConfig | None = None) -> list:
    checks = []
    mie_n = config.validate_mie_n if config else 512
    mie_k = config.validate_mie_k if config else 50.0

    circle = Curve.circle((0.0, 0.0), 0.5)
    alpha = np.array([1.0, 0.0])
    grid = bie.BoundaryGrid.make(circle, mie_n)
    try:
        system = bie.assemble(grid, mie_k, points_per_wavelength=2.0)
        eta = bie.solve(system, bie.DensityField(
            grid, 2.0 * bie.incident_trace(grid, alpha, mie_k).values))
        mie = bie.mie_total_field(0.5, mie_k, alpha, grid.params)
        err = float(np.max(np.abs(eta.values - mie)))
        checks.append(_check("mie_match", err, 1e-8, err < 1e-8))
    except (bie.ResolutionError, bie.ResonanceError) as exc:
        checks.append(_check("mie_match", str(exc), 1e-8, False))

    errs = {}
    for n in (64, 128):
        g = bie.BoundaryGrid.make(circle, n)
        s = bie.assemble(g, 50.0, points_per_wavelength=2.0)
        e = bie.solve(s, bie.DensityField(
            g, 2.0 * bie.incident_trace(g, alpha, 50.0).values))
        errs[n] = float(np.max(np.abs(
            e.values - bie.mie_total_field(0.5, 50.0, alpha, g.params))))
    ratio = errs[64] / errs[128]
    checks.append(_check("spectral_convergence_doubling", ratio, 1e3, ratio > 1e3))

    worst = 0.0
    for s1 in range(5):
        for z in (10.0, 50.0, 400.0):
            tt = specfun.hankel_tip(1, s1, z)
            rem = abs(specfun.hankel1_demod(1, z)
                      - specfun.hankel_tip_demod(1, s1, z))
            noise = 4.0 * 2.220446049250313e-16 * abs(specfun.hankel1(1, z))
            worst = max(worst, rem - tt.tail_bound - noise)
    checks.append(_check("hankel_tip_tail", worst, 0.0, worst <= 0.0))

    scene = circle_ellipse_scene(k=100.0, max_reflections=5)
    params = np.arange(256) * (2.0 * math.pi / 256)
    res = 0.0
    prev = None
    for m in range(1, 4):
        chains = rays.boundary_rays(scene, m, params, prev_rays=prev)
        res = max(res, max(c.residual for c in chains))
        prev = chains
    checks.append(_check("ray_reflection_residual", res, 1e-10, res < 1e-10))

    trace = rays.trace_forward(scene, 4.2, 1)
    back = rays.ray_for_target(scene, 1, trace.target_param)
    rt = abs(back.params[0] - 4.2)
    checks.append(_check("ray_round_trip", rt, 1e-10, rt < 1e-10))

    part = rays.classify(scene, 0, params)
    t1, t2 = part.roots
    root_err = max(abs(t1 - math.pi / 2.0), abs(t2 - 3.0 * math.pi / 2.0))
    checks.append(_check("shadow_roots_circle", root_err, 1e-10, root_err < 1e-10))

    def bump(t, w=1.8):
        u = np.atleast_1d(np.asarray(t, dtype=float)) / w
        out = np.zeros_like(u)
        msk = np.abs(u) < 1.0
        out[msk] = np.exp(1.0 - 1.0 / (1.0 - u[msk] ** 2))
        return out if np.ndim(t) else float(out[0])

    prob = asymptotics.StationaryPhaseProblem(
        phase=lambda t: 0.5 * t * t,
        phase_deriv=lambda t, n: [t, 1.0, 0.0, 0.0][n - 1],
        amp=bump, a=-1.8, b=1.8, t0=0.0)
    import scipy.integrate
    k0 = 100.0
    ref = complex(
        scipy.integrate.quad(lambda t: bump(t) * math.cos(k0 * 0.5 * t * t),
                             -1.8, 1.8, limit=5000)[0],
        scipy.integrate.quad(lambda t: bump(t) * math.sin(k0 * 0.5 * t * t),
                             -1.8, 1.8, limit=5000)[0])
    rel = abs(asymptotics.stationary_phase_leading(prob, k0) - ref) / abs(ref)
    checks.append(_check("stationary_phase_leading", rel, 2e-2, rel < 2e-2))
    return checks


def cmd_validate(config: RunConfig | None, out_dir: Path) -> int:
    checks = validation_suite(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "validation.json"
    report_path.write_text(json.dumps(checks, indent=1, sort_keys=True) + "\n")
    all_ok = all(c["pass"] for c in checks)
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['check']}: "
              f"measured={c['measured']} threshold={c['threshold']}")
    print(f"report: {report_path}")
    return 0 if all_ok else 1


# ----------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hardscat",
                                 description="sound-hard multiple scattering engine")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--format", choices=("csv", "bin"), default=None)
        p.add_argument("--threads", type=int, default=None)

    common(sub.add_parser("run", help="run the iteration cascade"))
    p = sub.add_parser("validate", help="run the built-in validation suite")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--threads", type=int, default=None)
    p = sub.add_parser("rays", help="emit broken-ray data")
    common(p)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--nodes", type=int, default=1024)
    p = sub.add_parser("mie", help="circle-series boundary field")
    common(p, needs_config=False)
    p.add_argument("--radius", type=float, default=0.5)
    p.add_argument("--k", type=float, default=50.0)
    p.add_argument("--n-theta", type=int, default=720)
    p = sub.add_parser("scaling", help="wavenumber scaling report")
    common(p)
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--k-list", default="100,200,400")
    p = sub.add_parser("go", help="geometrical-optics cross validation")
    common(p)
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--k-list", default="100,200,400")
    p.add_argument("--points", default="-2.0:0.0")
    return ap


def _set_threads(n: int | None):
    if n is None:
        return
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(n)
    except ImportError:
        print("threadpoolctl unavailable; --threads ignored", file=sys.stderr)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    _set_threads(getattr(args, "threads", None))
    try:
        config = None
        if getattr(args, "config", None):
            config = RunConfig(args.config)
        out_dir = Path(args.out if args.out else
                       (config.out_dir if config else "out"))
        if args.command == "run":
            fmt = args.format or config.out_format
            return cmd_run(config, out_dir, fmt)
        if args.command == "validate":
            return cmd_validate(config, out_dir)
        if args.command == "rays":
            return cmd_rays(config, out_dir, args.m, args.nodes)
        if args.command == "mie":
            return cmd_mie(out_dir, args.radius, args.k, args.n_theta)
        if args.command == "scaling":
            return cmd_scaling(config, out_dir, args.m, _floats(args.k_list))
        if args.command == "go":
            pts = [tuple(float(v) for v in chunk.split(":"))
                   for chunk in args.points.split(",") if chunk.strip()]
            return cmd_go(config, out_dir, args.m, _floats(args.k_list), pts)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config-error: {exc}", file=sys.stderr)
        return 2
    except CertificationError as exc:
        print(f"certification-error: {exc}", file=sys.stderr)
        return 3
    except (bie.ResonanceError, bie.SolverError, bie.ResolutionError) as exc:
        print(f"solver-error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
