"""Command-line entry point: ``channel-lab <subcommand> [options]``.

Parameters come from ``--config FILE`` (a JSON object, unknown keys
rejected) overlaid by explicit flags.  Outputs go to ``OUT/<subcommand>/``
together with ``manifest.json``.  Exit status is 0 on success, 2 on a
configuration error and 3 on a numerical failure; failures print a JSON
error object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .errors import ConfigError, NumericError

MAX_SVG_POINTS = 1_000_000


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(rows, schema) -> str:
    """RFC-4180 CSV with a header; reals printed with 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(schema)
    for row in rows:
        if len(row) != len(schema):
            raise ConfigError(f"row has {len(row)} fields, schema has {len(schema)}")
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, rows, schema) -> None:
    try:
        atomic_write(path, csv_text(rows, schema))
    except OSError as exc:
        raise NumericError(f"could not write {path}: {exc}") from exc


def _nice(v: float) -> str:
    return format(v, ".4g")


def render_svg_scatter(points, axes: dict | None = None) -> str:
    """Minimal standalone SVG scatter plot.

    Parameters
    ----------
    points : sequence of (x, y)
    axes : dict, optional
        ``xmin, xmax, ymin, ymax`` (default: data range), ``width``,
        ``height``, ``margin``, ``xlabel``, ``ylabel``, ``ticks``.
    """
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) > MAX_SVG_POINTS:
        raise ConfigError("too many points for SVG output; use the CSV instead")
    if any(not (math.isfinite(x) and math.isfinite(y)) for x, y in pts):
        raise ConfigError("SVG points must be finite")
    ax = dict(axes or {})
    W = float(ax.get("width", 400))
    H = float(ax.get("height", 300))
    m = float(ax.get("margin", 40))
    xs = [p[0] for p in pts] or [0.0, 1.0]
    ys = [p[1] for p in pts] or [0.0, 1.0]
    xmin, xmax = float(ax.get("xmin", min(xs))), float(ax.get("xmax", max(xs)))
    ymin, ymax = float(ax.get("ymin", min(ys))), float(ax.get("ymax", max(ys)))
    if xmax == xmin:
        xmin, xmax = xmin - 0.5, xmax + 0.5
    if ymax == ymin:
        ymin, ymax = ymin - 0.5, ymax + 0.5
    if not (xmax > xmin and ymax > ymin):
        raise ConfigError("axis ranges must be increasing")
    nt = int(ax.get("ticks", 5))

    def X(x):
        return m + (x - xmin) / (xmax - xmin) * (W - 2 * m)

    def Y(y):
        return H - m - (y - ymin) / (ymax - ymin) * (H - 2 * m)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_nice(W)}" height="{_nice(H)}" '
        f'viewBox="0 0 {_nice(W)} {_nice(H)}">',
        f'<line x1="{_nice(m)}" y1="{_nice(H - m)}" x2="{_nice(W - m)}" y2="{_nice(H - m)}" stroke="black"/>',
        f'<line x1="{_nice(m)}" y1="{_nice(m)}" x2="{_nice(m)}" y2="{_nice(H - m)}" stroke="black"/>',
    ]
    for i in range(nt + 1):
        tx = xmin + (xmax - xmin) * i / nt
        ty = ymin + (ymax - ymin) * i / nt
        out.append(
            f'<text x="{_nice(X(tx))}" y="{_nice(H - m + 14)}" font-size="10" text-anchor="middle">{_nice(tx)}</text>'
        )
        out.append(
            f'<text x="{_nice(m - 4)}" y="{_nice(Y(ty) + 3)}" font-size="10" text-anchor="end">{_nice(ty)}</text>'
        )
    if "xlabel" in ax:
        out.append(f'<text x="{_nice(W / 2)}" y="{_nice(H - 6)}" font-size="11" text-anchor="middle">'
                   f'{escape(str(ax["xlabel"]))}</text>')
    if "ylabel" in ax:
        out.append(f'<text x="12" y="{_nice(H / 2)}" font-size="11" text-anchor="middle" '
                   f'transform="rotate(-90 12 {_nice(H / 2)})">{escape(str(ax["ylabel"]))}</text>')
    for x, y in pts:
        out.append(f'<circle cx="{X(x):.6g}" cy="{Y(y):.6g}" r="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def version_string() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+g{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# ---------------------------------------------------------------------------
# config


@dataclass
class RunConfig:
    subcommand: str
    params: dict
    seed: int = 0
    out: str = "out"
    threads: int | None = None
    outputs: dict = field(default_factory=dict)

    def manifest(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "params": self.params,
            "seed": self.seed,
            "version": version_string(),
            "outputs": sorted(self.outputs),
        }


def _float_list(s):
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    return [float(v) for v in str(s).split(",") if v.strip()]


def _json_block(s):
    """Flag value that is inline JSON or ``@file``/a path to a JSON file."""
    if isinstance(s, (dict, list, int, float)):
        return s
    text = str(s)
    if text.startswith("@") or (not text.lstrip().startswith(("{", "[")) and os.path.exists(text)):
        try:
            text = Path(text.lstrip("@")).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {text}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON block: {exc}") from exc


def _cast(kind, value):
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("1", "true", "yes"):
                return True
            if str(value).lower() in ("0", "false", "no"):
                return False
            raise ValueError(value)
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot interpret {value!r}") from exc


# parameter tables: name -> (caster, default)
_REAL = float
_COMMON_MODEL = {
    "model": (_json_block, None),
    "global": (_json_block, None),
    "coeffs": (_json_block, None),
}

PARAMS = {
    "rsp-equilibria": {"eps_x": (_REAL, 0.0), "eps_y": (_REAL, 0.0)},
    "rsp-simulate": {
        "eps_x": (_REAL, 0.0), "eps_y": (_REAL, 0.0), "start": (_float_list, None),
        "face": (str, None), "energy": (_REAL, None), "t_end": (_REAL, 100.0),
        "rel_tol": (_REAL, 1e-10), "abs_tol": (_REAL, 1e-12),
    },
    "rates": {"eps_x": (_REAL, 0.0), "eps_y": (_REAL, 0.0), "face": (str, "b"), "energy": (_REAL, 0.05)},
    "scatter": {
        "eps_x": (_REAL, 0.5), "eps_y": (_REAL, -0.25), "face": (str, "b"),
        "energies": (_float_list, [0.02, 0.05, 0.1]), "phases": (_float_list, [0.0, 0.25, 0.5, 0.75]),
        "delta": (_REAL, 1e-3), "rho": (_REAL, 0.05), "fiber_phase": (bool, True),
    },
    "shadow": {
        "grid_min": (_REAL, -0.9), "grid_max": (_REAL, 0.9), "grid_step": (_REAL, 0.1),
        "n": (int, 500), "delta": (_REAL, 1e-4), "rho": (_REAL, 0.05), "kmax": (int, 60),
        "max_time": (_REAL, 1e4), "leave": (str, "channel"),
    },
    "return-map": {
        **_COMMON_MODEL, "mode": (str, "truncated"), "start": (_float_list, [-1.0, 0.5, 0.0]),
        "n": (int, 100), "eps": (_float_list, [0.0, 0.0, 0.0]), "shapes": (_json_block, None),
    },
    "attractor": {
        **_COMMON_MODEL, "mode": (str, "truncated"), "start": (_float_list, [0.1, 0.5, 0.2]),
        "n": (int, 10000), "eps": (_float_list, [0.0, 0.0, 0.0]), "shapes": (_json_block, None),
        "lyapunov": (bool, False), "transient": (int, 0), "qr_every": (int, 1),
    },
    "henon-check": {
        "a3": (_REAL, 1.0), "b1": (_REAL, -2.0), "b2": (_REAL, -1.0), "gamma": (int, 5),
        "a4": (_REAL, 0.0), "a5": (_REAL, 0.0), "c3": (_REAL, 0.0), "step": (_REAL, 1e-3),
        "variant": (str, "printed"),
    },
    "cone-check": {"coeffs": (_json_block, None), "samples": (int, 100000), "grid": (int, 200)},
    "foliation": {
        "coeffs": (_json_block, None), "remainders": (_json_block, None), "a1": (_REAL, math.sqrt(0.1)),
        "h": (_REAL, 0.1), "y0": (_REAL, 2.0**-13), "ymin": (_REAL, 1e-12), "grid": (str, "12:9:12"),
        "interp": (str, "multilinear"), "tol": (_REAL, 1e-10), "max_iters": (int, 200),
        "check_correspondence": (bool, False), "n_starts": (int, 100), "n_steps": (int, 30),
    },
}


def resolve_params(sub: str, file_params: dict, flag_params: dict) -> dict:
    table = PARAMS[sub]
    merged = {}
    for src in (file_params, flag_params):
        for k, v in src.items():
            key = k.replace("-", "_")
            if key not in table:
                raise ConfigError(f"unknown key {k!r} for {sub}")
            merged[key] = v
    out = {}
    for k, (caster, default) in table.items():
        v = merged.get(k, default)
        out[k] = None if v is None else (_cast(caster, v) if caster in (int, float, str, bool) else caster(v))
    return out


# ---------------------------------------------------------------------------
# model blocks


def _series2d(obj, what):
    from .scalar_fields import FieldSeries2D

    if obj is None:
        return FieldSeries2D()
    try:
        return FieldSeries2D.from_json(obj)
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"invalid field {what}: {exc}") from exc


def _strict(obj, allowed, what):
    if not isinstance(obj, dict):
        raise ConfigError(f"{what} block must be an object")
    extra = set(obj) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {what}: {sorted(extra)}")


ZCOEFF_KEYS = ("Omega", "Gamma", "b0", "c", "z_mod_one")


def zcoeffs_from_block(block, mode="truncated", eps=(0.0, 0.0, 0.0), shapes=None):
    from .toy_return_map import ZMapCoeffs

    _strict(block, ZCOEFF_KEYS, "coeffs")
    for k in ("Omega", "Gamma", "b0", "c"):
        if k not in block:
            raise ConfigError(f"coeffs block needs {k!r}")
    kw = {}
    if shapes is not None:
        if not (isinstance(shapes, list) and len(shapes) == 3):
            raise ConfigError("shapes must be a list of three fields")
        kw["shapes"] = tuple(_series2d(s, "shape") for s in shapes)
    return ZMapCoeffs(
        _series2d(block["Omega"], "Omega"), _series2d(block["Gamma"], "Gamma"),
        _series2d(block["b0"], "b0"), _series2d(block["c"], "c"),
        mode=mode, z_mod_one=bool(block.get("z_mod_one", False)), eps=tuple(eps), **kw,
    )


def model_from_block(block):
    from .scalar_fields import FieldSeries1D
    from .toy_return_map import ToyModelSpec

    keys = ("p", "sigma", "omega", "p0", "sigma0", "r0", "omega0", "h")
    _strict(block, keys, "model")
    try:
        return ToyModelSpec(
            FieldSeries1D.from_json(block["p"], "p"),
            FieldSeries1D.from_json(block["sigma"], "sigma"),
            FieldSeries1D.from_json(block["omega"], "omega"),
            **{k: _series2d(block.get(k), k) for k in ("p0", "sigma0", "r0", "omega0")},
            h=float(block.get("h", 0.1)),
        )
    except KeyError as exc:
        raise ConfigError(f"model block needs {exc.args[0]!r}") from exc


def global_from_block(block):
    from .toy_return_map import GlobalMapSpec

    _strict(block, ("a1", "b0", "b1", "c0", "c1"), "global")
    if "a1" not in block or "b0" not in block:
        raise ConfigError("global block needs 'a1' and 'b0'")
    return GlobalMapSpec(*(_series2d(block.get(k), k) for k in ("a1", "b0", "b1", "c0", "c1")))


def _zmap_from_params(p):
    from .toy_return_map import coeffs_from_model

    if p["mode"] not in ("truncated", "extended"):
        raise ConfigError("mode must be 'truncated' or 'extended'")
    if p["coeffs"] is not None:
        if p["model"] is not None or p["global"] is not None:
            raise ConfigError("give either coeffs or model+global, not both")
        return zcoeffs_from_block(p["coeffs"], p["mode"], p["eps"], p["shapes"])
    if p["model"] is None or p["global"] is None:
        raise ConfigError("need a coeffs block or both model and global blocks")
    c = coeffs_from_model(model_from_block(p["model"]), global_from_block(p["global"]))
    return c.with_mode(p["mode"], eps=p["eps"],
                       shapes=None if p["shapes"] is None else
                       [_series2d(s, "shape") for s in p["shapes"]])


# ---------------------------------------------------------------------------
# subcommands; each returns {filename: text}


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def cmd_rsp_equilibria(p, cfg):
    from . import rsp_model as rsp

    params = rsp.GameParams(p["eps_x"], p["eps_y"])
    res = []
    for e in rsp.equilibria(params):
        res.append({
            "face": str(e.face),
            "point": [float(v) for v in e.point.as_array()],
            "residual": float(np.max(np.abs(rsp.vector_field(params, e.point.as_array())))),
        })
    return {"equilibria.json": _json_text(res)}


def cmd_rsp_simulate(p, cfg):
    from . import rsp_model as rsp
    from .ode_engine import IntegratorConfig, integrate

    params = rsp.GameParams(p["eps_x"], p["eps_y"])
    if p["start"] is not None:
        if p["face"] is not None or p["energy"] is not None:
            raise ConfigError("give either start or face+energy")
        start = np.array(p["start"], dtype=float)
        if start.shape != (4,):
            raise ConfigError("start must have four components x1,x2,y1,y2")
        rsp.SimplexState(*start).validate()
    else:
        from .channel_experiments import seed_at_energy

        face = rsp.FaceId(p["face"] or "b")
        xf, yf = seed_at_energy(params, face, p["energy"] if p["energy"] is not None else 0.05)
        start = rsp.from_face_coords(face, xf, yf)
    if not p["t_end"] > 0:
        raise ConfigError("t_end must be positive")
    ic = IntegratorConfig(rel_tol=p["rel_tol"], abs_tol=p["abs_tol"], max_time=p["t_end"])
    rec = integrate(lambda t, u: rsp.vector_field(params, u), start, ic, [], t_end=p["t_end"], dense=False)
    rows = [(t, *y) for t, y in zip(rec.t, rec.y)]
    return {"orbit.csv": csv_text(rows, ("t", "x1", "x2", "y1", "y2"))}


def cmd_rates(p, cfg):
    from . import rsp_model as rsp
    from .channel_experiments import seed_at_energy, transverse_rate_integral
    from .ode_engine import periodic_orbit_on_face

    params = rsp.GameParams(p["eps_x"], p["eps_y"])
    face = rsp.FaceId(p["face"])
    seed = seed_at_energy(params, face, p["energy"]) if p["energy"] > 0 else rsp.equilibrium(params, face).center
    orb = periodic_orbit_on_face(params, face, seed)
    r = transverse_rate_integral(params, face, orb)
    return {"rate.json": _json_text({
        "face": r.face, "energy": r.energy, "period": r.period, "rate": r.rate, "degenerate": r.degenerate,
    })}


def cmd_scatter(p, cfg):
    from . import rsp_model as rsp
    from .channel_experiments import scattering_map_estimate

    params = rsp.GameParams(p["eps_x"], p["eps_y"])
    samples = scattering_map_estimate(
        params, p["face"], p["energies"], p["phases"], p["delta"], rho=p["rho"], fiber_phase=p["fiber_phase"]
    )
    rows = [(s.source_energy, s.phase, s.target_energy, s.flight_time, s.failed) for s in samples]
    pts = [(s.source_energy, s.target_energy) for s in samples if not s.failed and math.isfinite(s.target_energy)]
    return {
        "scatter.csv": csv_text(rows, ("energy", "phase", "target_energy", "flight_time", "failed")),
        "scatter.svg": render_svg_scatter(pts, {"xlabel": "source energy", "ylabel": "target energy"}),
    }


def cmd_shadow(p, cfg):
    from .channel_experiments import SweepConfig, grid_values, masks, shadowing_sweep

    sc = SweepConfig(n=p["n"], delta=p["delta"], rho=p["rho"], kmax=p["kmax"], max_time=p["max_time"],
                     leave=p["leave"])
    g = grid_values(p["grid_min"], p["grid_max"], p["grid_step"])
    cells = shadowing_sweep(g, g, sc, seed=cfg.seed, threads=cfg.threads)
    rows = [(c.eps_x, c.eps_y, k, f) for c in cells for k, f in enumerate(c.fractions)]
    mk = masks(cells)
    mjson = {
        f"{th:g}@{k}": [[c.eps_x, c.eps_y] for c, v in zip(cells, arr) if v] for (th, k), arr in mk.items()
    }
    out = {
        "shadow.csv": csv_text(rows, ("eps_x", "eps_y", "k", "fraction")),
        "masks.json": _json_text(mjson),
    }
    for (th, k), arr in mk.items():
        pts = [(c.eps_x, c.eps_y) for c, v in zip(cells, arr) if v]
        out[f"mask_{th:g}_{k}.svg"] = render_svg_scatter(
            pts, {"xmin": p["grid_min"], "xmax": p["grid_max"], "ymin": p["grid_min"], "ymax": p["grid_max"],
                  "xlabel": "eps_x", "ylabel": "eps_y"})
    return out


def _orbit_rows(res, start):
    rows = [(0, *start)]
    rows += [(i + 1, s.z, s.r, s.phi) for i, s in enumerate(res.states)]
    return rows


def cmd_return_map(p, cfg):
    from .toy_return_map import ZMap, ZState, iterate_orbit

    coeffs = _zmap_from_params(p)
    if len(p["start"]) != 3:
        raise ConfigError("start must be z,r,phi")
    start = ZState(*p["start"])
    fmap = ZMap(coeffs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(("n", "z", "r", "phi"))
    w.writerow([_fmt(v) for v in (0, *start.as_tuple())])
    res = iterate_orbit(fmap, start, p["n"], sink=lambda i, s: w.writerow([_fmt(v) for v in (i, *s.as_tuple())]),
                        keep=False)
    summary = {"n_done": res.n_done, "escaped": res.escaped, "clamped": fmap.stats.clamped}
    return {"orbit.csv": buf.getvalue(), "summary.json": _json_text(summary)}


def cmd_attractor(p, cfg):
    from .toy_return_map import ZMap, ZState, iterate_orbit, lyapunov_spectrum

    coeffs = _zmap_from_params(p)
    if len(p["start"]) != 3:
        raise ConfigError("start must be z,r,phi")
    if p["transient"] < 0:
        raise ConfigError("transient must be non-negative")
    fmap = ZMap(coeffs)
    s = ZState(*p["start"])
    for _ in range(p["transient"]):
        s = fmap(s)
    res = iterate_orbit(fmap, s, p["n"])
    rows = [(i + 1, st.z, st.r, st.phi) for i, st in enumerate(res.states)]
    out = {"orbit.csv": csv_text(rows, ("n", "z", "r", "phi"))}
    summary = {"n_done": res.n_done, "escaped": res.escaped, "clamped": fmap.stats.clamped}
    if p["lyapunov"]:
        ly = lyapunov_spectrum(ZMap(coeffs), s, p["n"], qr_every=p["qr_every"])
        summary["lyapunov"] = [v if math.isfinite(v) else str(v) for v in ly.exponents]
        summary["lyapunov_partial"] = ly.partial
    out["summary.json"] = _json_text(summary)
    pts = [(st.phi, st.z) for st in res.states[:MAX_SVG_POINTS]]
    out["attractor.svg"] = render_svg_scatter(pts, {"xlabel": "phi", "ylabel": "z"})
    return out


def cmd_henon_check(p, cfg):
    from .henon_normal_form import complete_family, extract_normal_form_quadratics, lorenz_condition

    fam = complete_family(p["a3"], p["b1"], p["b2"], p["gamma"], p["a4"], p["a5"], p["c3"])
    q = extract_normal_form_quadratics(fam, p["step"], p["variant"])
    value, ok = lorenz_condition(q)
    return {"henon.json": _json_text({
        "coefficients": fam.coefficients(), "A": q.A, "B": q.B, "C": q.C,
        "residuals": q.residuals, "lorenz_value": value, "satisfied": bool(ok), "variant": q.variant,
    })}


def cmd_cone_check(p, cfg):
    from .cone_field import check_cone_invariance, feasible_cone_params, monte_carlo_cone_check, partial_bounds

    if p["coeffs"] is None:
        raise ConfigError("cone-check needs a coeffs block")
    coeffs = zcoeffs_from_block(p["coeffs"])
    g = coeffs.gamma_constant
    if g is None:
        raise ConfigError("cone-check needs a constant Gamma")
    b = partial_bounds(coeffs, p["grid"])
    fc = feasible_cone_params(b, g)
    res = {"bounds": b.to_json(), "feasible": fc.feasible, "margin": fc.margin}
    if fc.feasible:
        lhs, rhs, holds = check_cone_invariance(b, g, fc.cone)
        res.update({
            "chosen": {"L": fc.cone.L, "c_cone": fc.cone.c_cone}, "lhs": lhs, "rhs": rhs, "holds": holds,
            "violations": monte_carlo_cone_check(coeffs, fc.cone, p["samples"], cfg.seed),
        })
    return {"cone.json": _json_text(res)}


def cmd_foliation(p, cfg):
    from .foliation import ExtendedMap, GridSpec, fixed_point_field, leaf_correspondence_check

    if p["coeffs"] is None:
        raise ConfigError("foliation needs a coeffs block")
    eps, shapes = (0.0, 0.0, 0.0), None
    if p["remainders"] is not None:
        r = p["remainders"]
        _strict(r, ("eps", "shapes"), "remainders")
        eps = tuple(_float_list(r.get("eps", [0, 0, 0])))
        shapes = r.get("shapes")
    coeffs = zcoeffs_from_block(p["coeffs"], "extended" if any(eps) else "truncated", eps, shapes)
    try:
        nz, nr, nphi = (int(v) for v in p["grid"].split(":"))
    except ValueError as exc:
        raise ConfigError("grid must be 'nz:nr:nphi'") from exc
    emap = ExtendedMap(coeffs, a1=p["a1"], h=p["h"])
    spec = GridSpec(nz, nr, nphi, p["y0"], p["ymin"], p["interp"])
    grid, bounds = fixed_point_field(emap, spec, p["tol"], p["max_iters"])
    report = {"bounds": bounds.to_json()}
    ly, x = grid.nodes()
    mu = grid.mu.reshape(-1, 3)
    rows = [(float(np.exp(a)), *xx, *m) for a, xx, m in zip(ly, x, mu)]
    out = {"mu0.csv": csv_text(rows, ("y", "z", "r", "phi", "mu_z", "mu_r", "mu_phi"))}
    if p["check_correspondence"]:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        n = p["n_starts"]
        starts = np.column_stack([
            np.exp(rng.uniform(math.log(1e-8), math.log(spec.y0), n)),
            rng.uniform(0, 1, n), rng.uniform(0.1, 0.9, n), rng.uniform(0, 1, n),
        ])
        report["correspondence"] = leaf_correspondence_check(emap, grid, starts, p["n_steps"]).to_json()
    out["foliation.json"] = _json_text(report)
    return out


COMMANDS = {
    "rsp-equilibria": cmd_rsp_equilibria,
    "rsp-simulate": cmd_rsp_simulate,
    "rates": cmd_rates,
    "scatter": cmd_scatter,
    "shadow": cmd_shadow,
    "return-map": cmd_return_map,
    "attractor": cmd_attractor,
    "henon-check": cmd_henon_check,
    "cone-check": cmd_cone_check,
    "foliation": cmd_foliation,
}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    glob = argparse.ArgumentParser(add_help=False)
    glob.add_argument("--config", help="JSON file with subcommand parameters")
    glob.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    glob.add_argument("--out", default=None, help="output directory (default ./out)")
    glob.add_argument("--threads", type=int, default=None, help="worker threads (env CHANNEL_LAB_THREADS)")
    parser = argparse.ArgumentParser(prog="channel-lab", description=__doc__.splitlines()[0], parents=[glob])
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name, table in PARAMS.items():
        sp = subs.add_parser(name, parents=[glob])
        for key, (caster, _) in table.items():
            flag = "--" + key.replace("_", "-")
            if caster is bool:
                sp.add_argument(flag, dest=key, nargs="?", const="true", default=argparse.SUPPRESS)
            else:
                sp.add_argument(flag, dest=key, default=argparse.SUPPRESS)
    return parser


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def _error(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_status": code}) + "\n")
    return code


def run(cfg: RunConfig) -> int:
    """Dispatch a resolved config; returns the exit status."""
    outputs = COMMANDS[cfg.subcommand](cfg.params, cfg)
    cfg.outputs = outputs
    base = Path(cfg.out) / cfg.subcommand
    for name, text in sorted(outputs.items()):
        atomic_write(base / name, text)
    atomic_write(base / "manifest.json", _json_text(cfg.manifest()))
    return 0


_MANIFEST_KEYS = {"subcommand", "params", "seed", "version", "outputs"}


def _unwrap_manifest(obj: dict, sub: str) -> dict:
    """A previous run's manifest is accepted as a config for the same subcommand."""
    if "params" not in obj or not set(obj) <= _MANIFEST_KEYS:
        return obj
    if obj.get("subcommand", sub) != sub:
        raise ConfigError(f"manifest belongs to {obj['subcommand']!r}, not {sub!r}")
    params = obj["params"]
    if not isinstance(params, dict):
        raise ConfigError("manifest params must be an object")
    out = {k: v for k, v in params.items() if v is not None}
    if "seed" in obj:
        out["seed"] = obj["seed"]
    return out


def main(argv=None) -> int:
    parser = build_parser()
    parser.__class__ = _Parser
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            sp.__class__ = _Parser
    try:
        ns = parser.parse_args(argv)
    except _ArgError as exc:
        return _error(2, "ConfigError", str(exc))
    try:
        d = vars(ns).copy()
        sub = d.pop("subcommand")
        config_path, seed, out, threads = (d.pop(k, None) for k in ("config", "seed", "out", "threads"))
        file_params = {}
        if config_path:
            try:
                file_params = json.loads(Path(config_path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
            if not isinstance(file_params, dict):
                raise ConfigError("config file must hold a JSON object")
            file_params = _unwrap_manifest(file_params, sub)
            file_seed = file_params.pop("seed", None)
            seed = file_seed if seed is None else seed
        seed = 0 if seed is None else int(seed)
        if not (0 <= seed < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if threads is None:
            from .channel_experiments import default_threads

            threads = default_threads()
        if threads < 1:
            raise ConfigError("threads must be positive")
        params = resolve_params(sub, file_params, d)
        cfg = RunConfig(sub, params, seed, out or "out", threads)
        return run(cfg)
    except ConfigError as exc:
        return _error(2, type(exc).__name__, str(exc))
    except NumericError as exc:
        return _error(3, type(exc).__name__, str(exc))
    except (FloatingPointError, np.linalg.LinAlgError, OverflowError, ZeroDivisionError, OSError) as exc:
        return _error(3, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
