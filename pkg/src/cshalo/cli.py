"""Command-line front end: ``cshalo {generate,correlate,sweep,oracle,validate}``.

Settings come from defaults, then an optional ``--config`` key=value file,
then ``key=value`` arguments on the command line. ``CSHALO_OUT_DIR``
replaces the output directory unless ``out_dir`` is given explicitly.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .corr import (
    BinGrid, correlate, export_fit_report, export_g2_csv, export_projection_csv, fit_correlation,
    fit_report, reference_histogram, accumulate_bb, accumulate_cl, accumulate_norm, partner_shots,
)
from .cstest import export_sweep_csv, sweep_M, sweep_summary
from .geometry import HaloGeometry
from .kvio import config_hash, dumps_kv, format_value, read_kv, write_kv
from .oracle import (
    GaussianStateSpec, GaussianTerm, box_integrated_c, fock_zone_moments, gaussian_wick_moments,
    predict_sweep, prediction_report, tmsv_joint_distribution, tmsv_moments,
)
from .pairgen import SourceParams, generate_dataset, load_dataset, save_dataset

OUTPUT_FORMAT = "cshalo-output/1"
OUT_DIR_ENV = "CSHALO_OUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

log = logging.getLogger("cshalo")


class ConfigError(ValueError):
    pass


def _floats(n=None):
    def parse(text):
        vals = tuple(float(x) for x in str(text).split(",") if x.strip())
        if n is not None and len(vals) != n:
            raise ValueError(f"expected {n} comma-separated numbers")
        return vals
    return parse


def _ints(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_SRC = SourceParams()
_GEO = HaloGeometry()
_CLG = BinGrid.cl_default()
_BBG = BinGrid.bb_default()


@dataclass
class RunConfig:
    # source
    n_bar: float = _SRC.n_bar
    sigma_cl: tuple = _SRC.sigma_cl
    sigma_bb: tuple = _SRC.sigma_bb
    sigma_r: float = _SRC.sigma_r
    efficiency: float = _SRC.efficiency
    n_shots: int = _SRC.n_shots
    seed: int = _SRC.seed
    shell_radius: float = _SRC.shell_radius
    cell_scale: float = _SRC.cell_scale
    background_rate: float = _SRC.background_rate
    allow_narrow_bb: bool = _SRC.allow_narrow_bb
    # geometry
    r_min: float = _GEO.r_min
    r_max: float = _GEO.r_max
    z_cut: float = _GEO.z_cut
    # correlation grids and normalization
    cl_width: tuple = _CLG.width
    cl_half_range: tuple = _CLG.half_range
    bb_width: tuple = _BBG.width
    bb_half_range: tuple = _BBG.half_range
    n_partners: int = 50
    norm_seed: int = 0
    # zones
    n_polar: int = 8
    m_list: tuple = (16, 32, 64, 128, 320, 640)
    bias_correct: bool = True
    # oracles
    wick_state: str = "tmsv"
    occupations: tuple = (0.1, 0.1)
    zones: tuple = (0, 1)
    box_dims: tuple = (0.2, 0.2, 0.02)
    box_mean_count: float = 1.0
    box_bb_amplitude: float = 1.0
    box_bb_widths: tuple = _SRC.sigma_bb
    box_cl_amplitude: float = 1.0
    box_cl_widths: tuple = _SRC.sigma_cl
    box_offset: tuple = (0.0, 0.0, 0.0)
    box_matched: bool = False
    # run
    dataset: str = ""
    out_dir: str = "cshalo_out"
    workers: int = 1

    # keys that do not change any numeric output
    RUNTIME_KEYS = ("out_dir", "workers", "dataset")

    _PARSERS = {"float": float, "int": int, "bool": _bool, "str": str}
    _TUPLES = {
        "sigma_cl": _floats(3), "sigma_bb": _floats(3), "cl_width": _floats(3), "cl_half_range": _floats(3),
        "bb_width": _floats(3), "bb_half_range": _floats(3), "box_dims": _floats(3),
        "box_bb_widths": _floats(3), "box_cl_widths": _floats(3), "box_offset": _floats(3),
        "occupations": _floats(), "zones": _ints, "m_list": _ints,
    }

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def build(cls, file_values: dict | None = None, overrides: dict | None = None,
              env: dict | None = None) -> "RunConfig":
        """Resolve CLI > file > defaults, with the env var standing in for an unset ``out_dir``."""
        env = os.environ if env is None else env
        merged = {**(file_values or {}), **(overrides or {})}
        unknown = sorted(set(merged) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        if "out_dir" not in (overrides or {}) and env.get(OUT_DIR_ENV):
            merged["out_dir"] = env[OUT_DIR_ENV]
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in merged.items():
            try:
                if key in cls._TUPLES:
                    kw[key] = cls._TUPLES[key](raw)
                else:
                    kw[key] = cls._PARSERS[types[key]](raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self):
        try:
            self.source()
            self.geometry()
            self.grid("CL")
            self.grid("BB")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.n_partners < 1:
            raise ConfigError("n_partners must be >= 1")
        if self.n_polar < 1 or self.n_polar % 2:
            raise ConfigError("n_polar must be a positive even number")
        if not self.m_list:
            raise ConfigError("m_list is empty")
        for M in self.m_list:
            if M % self.n_polar or M // self.n_polar < 2 or (M // self.n_polar) % 2:
                raise ConfigError(f"M={M} is not n_polar times an even azimuthal count")
        if any(b <= a for a, b in zip(self.m_list, self.m_list[1:])):
            raise ConfigError("m_list must be strictly increasing")
        if len(self.zones) != len(self.occupations):
            raise ConfigError("zones and occupations need one entry per mode")
        if self.wick_state not in ("tmsv", "thermal", "vacuum"):
            raise ConfigError("wick_state must be tmsv, thermal or vacuum")

    def source(self) -> SourceParams:
        return SourceParams(**{f.name: getattr(self, f.name) for f in fields(SourceParams)})

    def geometry(self) -> HaloGeometry:
        return HaloGeometry(self.r_min, self.r_max, self.z_cut)

    def grid(self, kind: str) -> BinGrid:
        if kind == "CL":
            return BinGrid(self.cl_width, self.cl_half_range)
        return BinGrid(self.bb_width, self.bb_half_range)

    @property
    def azim_list(self) -> tuple:
        return tuple(M // self.n_polar for M in self.m_list)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.keys()}

    def hash(self) -> str:
        return config_hash({k: v for k, v in self.as_dict().items() if k not in self.RUNTIME_KEYS})

    def dump(self) -> str:
        return dumps_kv(self.as_dict())


# -- helpers ---------------------------------------------------------------------

def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta(cfg: RunConfig, **extra) -> dict:
    return {"format_version": OUTPUT_FORMAT, "config_hash": cfg.hash(), "cshalo_version": __version__, **extra}


def _dataset_path(cfg: RunConfig, positional: str | None) -> Path:
    if positional:
        return Path(positional)
    if cfg.dataset:
        return Path(cfg.dataset)
    return Path(cfg.out_dir) / "events.csv"


def _emit(text: str):
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# -- commands ----------------------------------------------------------------------

def cmd_generate(cfg: RunConfig, path: str | None = None) -> int:
    params, geometry = cfg.source(), cfg.geometry()
    ds = generate_dataset(geometry, params, workers=cfg.workers)
    target = Path(path) if path else _out_dir(cfg) / "events.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    events, meta_path = save_dataset(ds, target)
    n_ev = len(ds.k)
    excised = int(ds.metadata.get("n_excised", 0))
    summary = {
        **_meta(cfg, dataset_config_hash=read_kv(meta_path)["config_hash"]),
        "events_file": str(events), "n_shots": ds.n_shots, "n_events": n_ev,
        "mean_events_per_shot": n_ev / ds.n_shots if ds.n_shots else 0.0,
        "excision_fraction": excised / (excised + n_ev) if excised + n_ev else 0.0,
    }
    write_kv(target.with_name(target.stem + "_summary.txt"), summary)
    _emit(dumps_kv(summary))
    return EXIT_OK


def cmd_correlate(cfg: RunConfig, path: str | None = None) -> int:
    src = _dataset_path(cfg, path)
    ds = load_dataset(src)
    out = _out_dir(cfg)
    meta = _meta(cfg, dataset=src.name, dataset_config_hash=ds.metadata.get("config_hash", "none"))
    summary = dict(meta)
    for kind in ("BB", "CL"):
        grid = cfg.grid(kind)
        if ds.n_shots < 2 or not np.any(ds.counts >= 2):
            report = {"kind": kind, "status": "no pairs",
                      "message": "no shot holds two or more events; nothing to correlate"}
            write_kv(out / f"fit_{kind}.txt", {**meta, **report})
            summary[f"{kind}.status"] = "no pairs"
            continue
        est = correlate(ds, kind, grid, cfg.n_partners, cfg.norm_seed, cfg.workers)
        export_g2_csv(est, out / f"g2_{kind}.csv", meta)
        export_projection_csv(est, out / f"proj_{kind}.csv", meta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = fit_correlation(est)
        export_fit_report(fit, out / f"fit_{kind}.txt", meta)
        rep = fit_report(fit)
        summary[f"{kind}.status"] = "ok" if fit.ok else "partial"
        for key in ("peak_g2", "peak_g2_err", "transverse.status", "transverse.sigma", "transverse.sigma_err",
                    "z.status", "z.sigma", "z.sigma_err", "clipped_pair_fraction"):
            summary[f"{kind}.{key}"] = rep[key]
        for note in fit.warnings:
            log.warning("%s: %s", kind, note)
    if all(f"{k}.transverse.status" in summary for k in ("BB", "CL")):
        ok = summary.pop("BB.transverse.status") == summary.pop("CL.transverse.status") == "ok"
        cl = summary["CL.transverse.sigma"]
        summary["width_ratio_transverse"] = summary["BB.transverse.sigma"] / cl if ok and cl else math.nan
    write_kv(out / "correlate_summary.txt", summary)
    _emit(dumps_kv(summary))
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, path: str | None = None) -> int:
    src = _dataset_path(cfg, path)
    ds = load_dataset(src)
    out = _out_dir(cfg)
    meta = _meta(cfg, dataset=src.name, dataset_config_hash=ds.metadata.get("config_hash", "none"))
    sw = sweep_M(ds, cfg.n_polar, cfg.azim_list, cfg.bias_correct)
    export_sweep_csv(sw, out / "sweep.csv", meta)
    summary = {**meta, **sweep_summary(sw)}
    for r in sw.rows:
        if r.excluded_pairs:
            log.warning("M=%d: %d degenerate zone pair(s) excluded", r.M, r.excluded_pairs)
        summary[f"M{r.M}.V_opp"] = r.V_opp
    write_kv(out / "sweep_summary.txt", summary)
    _emit(dumps_kv(summary))
    return EXIT_OK


def _oracle_tmsv(cfg: RunConfig) -> dict:
    m = tmsv_moments(cfg.n_bar)
    return {"oracle": "tmsv", "n_bar": cfg.n_bar, "G12": m.G12, "G11": m.G11, "G22": m.G11, "C": m.C,
            "G12_closed_form": m.G12_closed, "G11_closed_form": m.G11_closed, "C_closed_form": m.C_closed,
            "fock_cutoff": m.n_max}


def _oracle_wick(cfg: RunConfig) -> dict:
    if cfg.wick_state == "tmsv":
        spec, zones = GaussianStateSpec.tmsv(cfg.n_bar), (0, 1)
    elif cfg.wick_state == "thermal":
        spec, zones = GaussianStateSpec.thermal(cfg.occupations), cfg.zones
    else:
        spec, zones = GaussianStateSpec.vacuum(len(cfg.zones)), cfg.zones
    G = gaussian_wick_moments(spec, zones)
    out = {"oracle": "wick", "state": cfg.wick_state, "n_modes": spec.n_modes,
           "zones": ",".join(map(str, zones))}
    for i in range(G.shape[0]):
        for j in range(G.shape[1]):
            out[f"G{i + 1}{j + 1}"] = float(G[i, j])
    if G.shape[0] >= 2:
        den = math.sqrt(G[0, 0] * G[1, 1])
        out["C"] = float(G[0, 1] / den) if den > 0 else math.nan
    if cfg.wick_state == "tmsv":
        F = fock_zone_moments(tmsv_joint_distribution(cfg.n_bar), zones)
        out["max_abs_diff_vs_fock"] = float(np.max(np.abs(F - G)))
    return out


def _oracle_boxc(cfg: RunConfig, out: Path, meta: dict) -> dict:
    if cfg.box_matched:
        pred = predict_sweep(cfg.source(), cfg.geometry(), cfg.n_polar, cfg.azim_list)
        lines = [f"# {k}={v}" for k, v in meta.items()] + ["M,C_opp,C_nbr"]
        lines += [f"{M},{a:.9g},{b:.9g}" for M, a, b in zip(pred.M, pred.C_opp, pred.C_nbr)]
        (out / "oracle_boxc_sweep.csv").write_text("\n".join(lines) + "\n")
        return {"oracle": "boxc", "mode": "matched", "M": format_value(pred.M.tolist()),
                "C_opp": format_value(pred.C_opp.tolist()), "C_nbr": format_value(pred.C_nbr.tolist())}
    bb = [GaussianTerm(cfg.box_bb_amplitude, cfg.box_bb_widths)]
    cl = [GaussianTerm(cfg.box_cl_amplitude, cfg.box_cl_widths)]
    res = box_integrated_c(cfg.box_dims, cfg.box_mean_count, bb, cl, cfg.box_offset)
    return {"oracle": "boxc", "mode": "box", **prediction_report(res), "violates": res.violates}


def cmd_oracle(cfg: RunConfig, kind: str) -> int:
    out = _out_dir(cfg)
    meta = _meta(cfg)
    try:
        if kind == "tmsv":
            rep = _oracle_tmsv(cfg)
        elif kind == "wick":
            rep = _oracle_wick(cfg)
        elif kind == "boxc":
            rep = _oracle_boxc(cfg, out, meta)
        else:
            raise ConfigError(f"unknown oracle {kind!r}; choose tmsv, wick or boxc")
    except RuntimeError as exc:
        raise ConfigError(str(exc)) from None
    report = {**meta, **rep}
    write_kv(out / f"oracle_{kind}.txt", report)
    text = dumps_kv(report)
    for key in ("G12", "G11", "C"):
        # full precision for the exact references
        if key in rep and isinstance(rep[key], float):
            text = text.replace(f"{key}={format_value(rep[key])}", f"{key}={rep[key]:.15g}", 1)
    _emit(text)
    return EXIT_OK


def _validation_checks(workers: int) -> list[tuple[str, bool, str]]:
    checks = []

    for nb in (0.02, 0.5, 3.0):
        m = tmsv_moments(nb)
        ok = abs(m.C - m.C_closed) < 1e-10 * m.C_closed and abs(m.G12 - m.G12_closed) < 1e-10 * m.G12_closed
        checks.append((f"tmsv Fock sum equals closed form (n_bar={nb})", ok, f"C={m.C:.12g}"))

    F = fock_zone_moments(tmsv_joint_distribution(0.3), (0, 1))
    G = gaussian_wick_moments(GaussianStateSpec.tmsv(0.3), (0, 1))
    diff = float(np.max(np.abs(F - G)))
    checks.append(("Wick moments equal Fock moments for a squeezed pair", diff < 1e-10, f"max diff {diff:.2e}"))

    vac = gaussian_wick_moments(GaussianStateSpec.vacuum(3), (0, 1, 2))
    checks.append(("vacuum has zero moments", bool(np.all(vac == 0)), ""))

    huge = box_integrated_c((50.0, 50.0, 50.0), 1e4, [GaussianTerm(1.0, (0.2, 0.2, 0.02))],
                            [GaussianTerm(1.0, (0.036, 0.036, 0.002))])
    checks.append(("box C tends to 1 for huge zones", abs(huge.C - 1) < 1e-4, f"C={huge.C:.9g}"))

    rng = np.random.default_rng(7)
    shots = [rng.normal(0, 0.05, (rng.integers(0, 12), 3)) * (1, 1, 0.1) for _ in range(12)]
    ok = True
    for kind, grid, acc in (("CL", BinGrid((0.01, 0.01, 0.001), (0.08, 0.08, 0.008)), accumulate_cl),
                            ("BB", BinGrid((0.01, 0.01, 0.001), (0.08, 0.08, 0.008)), accumulate_bb)):
        ref = sum((reference_histogram(s, s, kind, grid, True) for s in shots), np.zeros(grid.shape, np.int64))
        ok &= bool(np.array_equal(acc(shots, grid, workers), ref))
        norm = accumulate_norm(shots, grid, kind, n_partners=4, seed=3, workers=workers).counts
        nref = np.zeros(grid.shape, np.int64)
        for i, s in enumerate(shots):
            for p in partner_shots(len(shots), i, 4, 3):
                nref += reference_histogram(s, shots[p], kind, grid, False)
        ok &= bool(np.array_equal(norm, nref))
    checks.append(("pair kernels equal the O(N^2) reference", ok, ""))

    params = SourceParams(n_shots=6, seed=11)
    a = generate_dataset(HaloGeometry(), params, workers=1)
    b = generate_dataset(HaloGeometry(), params, workers=max(2, workers))
    same = np.array_equal(a.k, b.k) and np.array_equal(a.shot, b.shot)
    checks.append(("generation independent of worker count", bool(same), f"{len(a.k)} events"))
    return checks


def cmd_validate(cfg: RunConfig) -> int:
    checks = _validation_checks(cfg.workers)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}" + (f" [{info}]" if info else "") for name, ok, info in checks]
    report = {**_meta(cfg), **{f"check{i}": ln for i, ln in enumerate(lines)}}
    try:
        write_kv(_out_dir(cfg) / "validate.txt", report)
    except OSError as exc:
        log.warning("could not write validation report: %s", exc)
    _emit("\n".join(lines))
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_INVALID


# -- entry point -----------------------------------------------------------------

def _split_items(items):
    overrides, positional = {}, []
    for it in items:
        if "=" in it:
            k, v = it.split("=", 1)
            overrides[k.strip()] = v.strip()
        else:
            positional.append(it)
    return overrides, positional


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are validation errors (exit 1), not argparse's default 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("--show-config", action="store_true", help="print the resolved configuration")

    p = _Parser(prog="cshalo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cshalo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", parents=[common], help="simulate a dataset")
    g.add_argument("items", nargs="*", help="[events.csv] key=value ...")
    c = sub.add_parser("correlate", parents=[common], help="BB and CL g2 with Gaussian fits")
    c.add_argument("items", nargs="*", help="[events.csv] key=value ...")
    s = sub.add_parser("sweep", parents=[common], help="C(M) for opposite and neighbouring zones")
    s.add_argument("items", nargs="*", help="[events.csv] key=value ...")
    o = sub.add_parser("oracle", parents=[common], help="exact references")
    o.add_argument("kind", choices=("tmsv", "wick", "boxc"))
    o.add_argument("items", nargs="*", help="key=value ...")
    v = sub.add_parser("validate", parents=[common], help="run the invariant self-checks")
    v.add_argument("items", nargs="*", help="key=value ...")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        # key=value items may follow options; anything else unknown is an error
        bad = [e for e in extra if e.startswith("-")]
        if bad:
            parser.error(f"unrecognized arguments: {' '.join(bad)}")
    except ConfigError as exc:
        print(f"cshalo: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    args.items = list(args.items) + extra
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides, positional = _split_items(args.items)
        if args.workers is not None:
            overrides["workers"] = str(args.workers)
        if args.out_dir is not None:
            overrides["out_dir"] = args.out_dir
        file_values = read_kv(args.config) if args.config else {}
        cfg = RunConfig.build(file_values, overrides)
        if len(positional) > (0 if args.command in ("oracle", "validate") else 1):
            raise ConfigError(f"unexpected arguments: {' '.join(positional)}")
        if args.show_config:
            _emit(cfg.dump())
        path = positional[0] if positional else None
        if args.command == "generate":
            return cmd_generate(cfg, path)
        if args.command == "correlate":
            return cmd_correlate(cfg, path)
        if args.command == "sweep":
            return cmd_sweep(cfg, path)
        if args.command == "oracle":
            return cmd_oracle(cfg, args.kind)
        return cmd_validate(cfg)
    except OSError as exc:
        print(f"cshalo: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"cshalo: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
