"""Batch command line front end.

Every subcommand reads one YAML config (model keys at the top level, its
own parameters under a section named after the subcommand), writes CSV
tables into ``--out`` and finishes with ``manifest.json``.  Passing a
previous ``manifest.json`` as ``--config`` replays that run.
"""

from __future__ import annotations

import argparse
import copy
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import experiments as ex
from .errors import AlloyLabError, ArgumentError, ConfigError
from .geometry import (
    ShearedUnion,
    enlarged_volume,
    factorize_domain,
    mc_volume,
    sheared_union_decomposition,
    sheared_union_volume,
)
from .model import (
    ModelConfig,
    assemble_hamiltonian,
    config_from_mapping,
    hamiltonian_from_potential,
    read_config_file,
    sample_disorder,
    zero_disorder,
)
from .output import (
    content_hash,
    emit_plot_data,
    matrix_triplets,
    sha256_file,
    write_csv,
    write_json,
)
from .spectral import (
    EnergyInterval,
    bs_equivalence_check,
    bs_resolvent_residual,
    birman_schwinger,
    combes_thomas_fit,
    eigenvalues,
    spectral_averaging_check,
)
from .toeplitz import build_system, column_sum_norm, symbol_sweep

log = logging.getLogger("alloylab")

DEFAULTS = {
    "spectrum": {"n_samples": 1, "export_matrix": False},
    "wegner": {"n_samples": 500, "center": 1.0, "widths": [0.2, 0.1, 0.05], "sides": None},
    "ids": {"n_samples": 200, "e_min": -1.0, "e_max": 5.0, "n_points": 121, "eps": 0.1, "disorder": True},
    "proximity": {"n_samples": 200, "energy": 1.0, "eps": [0.1, 0.05]},
    "combes-thomas": {"distances": [0.5, 1.0, 2.0], "source": None, "max_separation": None},
    "averaging": {"n_samples": 20, "cell": None, "center": 1.0, "width": 0.5, "t": 1.0, "n_grid": 200},
    "toeplitz-check": {"sizes": [4, 8, 16, 32, 64], "export_size": None, "symbol_points": 256},
    "volume": {"n_samples": 1000000, "t": [0.5, -0.3], "pivot": None},
    "birman-schwinger": {"n_samples": 100, "energy_shift": 0.5, "eps": 0.1},
    "msa": {
        "l0": 9,
        "zeta": 1.5,
        "m0": 1.0,
        "q0": 1.0,
        "c1": 0.0,
        "c2": 0.0,
        "c3": 1.0,
        "xi": 1.0,
        "steps": 5,
        "strict": True,
        "survey_energy": None,
        "n_samples": 20,
    },
    "lifshitz": {"n_samples": 500, "e_min": None, "e_max": None, "n_points": 25},
}

NEEDS_MODEL = set(DEFAULTS) - {"msa"}


# --------------------------------------------------------------------------
# Config handling


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, value = text.split("=", 1)
    try:
        parsed = yaml.safe_load(value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {value!r}: {exc}") from exc
    return key.strip().split("."), parsed


def apply_overrides(raw: dict, overrides) -> dict:
    out = copy.deepcopy(raw)
    for text in overrides:
        path, value = parse_override(text)
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: {part} is not a section")
        node[path[-1]] = value
    return out


def resolve_params(command: str, raw: dict, samples: int | None) -> dict:
    section = raw.get(command) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"section {command!r} must be a mapping")
    unknown = set(section) - set(DEFAULTS[command])
    if unknown:
        raise ConfigError(f"unknown key(s) in section {command!r}: {', '.join(sorted(unknown))}")
    params = {**DEFAULTS[command], **section}
    if samples is not None:
        if "n_samples" in params:
            params["n_samples"] = int(samples)
        else:
            log.warning("%s has no sample loop; --samples ignored", command)
    return params


def load_inputs(args) -> tuple[dict, int]:
    """Raw config mapping and seed; a manifest supplies both."""
    raw = read_config_file(args.config) if args.config else {}
    seed = args.seed
    if raw.get("tool") == "alloylab" and "config" in raw:
        if seed is None:
            seed = raw.get("seed")
        raw = raw["config"]
    return apply_overrides(raw, args.set or []), int(seed if seed is not None else 0)


# --------------------------------------------------------------------------
# Subcommands.  Each returns (list of output paths, summary dict, excluded count).


def _interval(center, width) -> EnergyInterval:
    return EnergyInterval(float(center) - float(width) / 2, float(center) + float(width) / 2)


def cmd_spectrum(cfg: ModelConfig, p, seed, workers, out: Path):
    rows = []
    for i in range(int(p["n_samples"])):
        lam = eigenvalues(assemble_hamiltonian(cfg, sample_disorder(cfg, seed, i)))
        rows.extend((i, k, v) for k, v in enumerate(lam))
    files = [write_csv(out / "spectrum.csv", ("sample", "k", "eigenvalue"), rows, [f"l={cfg.l} bc={cfg.bc}"])]
    if p["export_matrix"]:
        ham = assemble_hamiltonian(cfg, sample_disorder(cfg, seed, 0))
        files.append(write_csv(out / "hamiltonian.csv", ("row", "col", "value"), matrix_triplets(ham.matrix)))
    return files, {}, 0


def cmd_wegner(cfg, p, seed, workers, out):
    sides = p["sides"] or [cfg.l]
    ivs = [_interval(p["center"], w) for w in p["widths"]]
    res = ex.wegner_experiment(cfg, ivs, sides, int(p["n_samples"]), seed, workers)
    comments = [
        f"d={cfg.d} omega_plus={cfg.omega_plus!r} a_star={cfg.site.a_star!r} bc={cfg.bc}",
        "ratio = mean / ((e2 - e1) * l^d)",
    ]
    path = write_csv(out / "wegner.csv", res.columns, res.rows(), comments)
    pos = res.width > 0
    summary = {
        "spread": res.spread(),
        "r2_vs_width": {str(k): v for k, v in res.width_fit_r2().items()},
        "r2_vs_volume": {f"{a!r}:{b!r}": v for (a, b), v in res.volume_fit_r2().items()},
        "ratio_times_omega_plus": [float(res.constant_disorder_scaled[pos].min()), float(res.constant_disorder_scaled[pos].max())],
        "ratio_times_omega_plus_one_minus_a_star": [
            float(res.constant_site_scaled[pos].min()),
            float(res.constant_site_scaled[pos].max()),
        ],
    }
    return [path], summary, res.excluded


def cmd_ids(cfg, p, seed, workers, out):
    grid = np.linspace(float(p["e_min"]), float(p["e_max"]), int(p["n_points"]))
    table = ex.ids_estimate(cfg, grid, int(p["n_samples"]), seed, workers, disorder=bool(p["disorder"]))
    path = emit_plot_data(table, "ids", out / "ids.csv")
    return [path], {"lipschitz_modulus": ex.lipschitz_modulus(table, float(p["eps"]))}, table.excluded


def cmd_proximity(cfg, p, seed, workers, out):
    eps = np.atleast_1d(np.asarray(p["eps"], dtype=float))
    if np.any(eps <= 0):
        raise ArgumentError("eps must be positive")
    dist, bad = ex.proximity_distances(cfg, float(p["energy"]), int(p["n_samples"]), seed, workers)
    rows = []
    for e in eps:
        hit = (dist <= e).astype(float)
        est = float(hit.mean())
        err = float(np.sqrt(est * (1 - est) / hit.size))
        rows.append((e, est, err, hit.size, est / (e * float(cfg.l) ** (2 * cfg.d))))
    cols = ("eps", "estimate", "stderr", "n", "scaled")
    path = write_csv(out / "proximity.csv", cols, rows, [f"energy={float(p['energy'])!r}", "scaled = estimate / (eps l^2d)"])
    return [path], {}, bad


def cmd_combes_thomas(cfg, p, seed, workers, out):
    ham = assemble_hamiltonian(cfg, sample_disorder(cfg, seed, 0))
    floor = float(eigenvalues(ham)[0])
    source = int(p["source"]) if p["source"] is not None else cfg.l // 4
    reach = int(p["max_separation"]) if p["max_separation"] is not None else cfg.l // 2
    x = np.full(cfg.d, source)
    pairs = []
    for k in range(1, reach + 1):
        y = x.copy()
        y[0] += k
        if y[0] < cfg.l:
            pairs.append((x, y))
    rows, summary_rows = [], []
    for dist in p["distances"]:
        fit = combes_thomas_fit(ham, floor - float(dist), pairs)
        for s, v, q in zip(fit.separation, fit.log_norm, fit.prediction()):
            rows.append((float(dist), s, v, q))
        summary_rows.append((float(dist), fit.rate, fit.intercept, fit.r2))
    files = [
        write_csv(out / "combes_thomas.csv", ("distance", "separation", "log_norm", "fit_prediction"), rows,
                  [f"spectral floor of sample 0: {floor!r}", "z = floor - distance"]),
        write_csv(out / "combes_thomas_fit.csv", ("distance", "rate", "intercept", "r2"), summary_rows),
    ]
    return files, {"floor": floor}, 0


def cmd_averaging(cfg, p, seed, workers, out):
    cell = p["cell"] if p["cell"] is not None else [cfg.l // 2] * cfg.d
    iv = _interval(p["center"], p["width"])
    rows = []
    for i in range(int(p["n_samples"])):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i, 1]))
        f = rng.standard_normal(cfg.n_nodes)
        f /= np.linalg.norm(f)
        val, bound = spectral_averaging_check(
            cfg, cell, f, iv, float(p["t"]), sample_disorder(cfg, seed, i), int(p["n_grid"])
        )
        rows.append((i, val, bound))
    path = write_csv(out / "averaging.csv", ("sample", "integral", "bound"), rows)
    return [path], {"max_integral_over_bound": max(r[1] / r[2] for r in rows) if rows else None}, 0


def cmd_toeplitz_check(cfg, p, seed, workers, out):
    rows = []
    bound = 1.0 / (1.0 - cfg.site.a_star)
    files = []
    for size in p["sizes"]:
        system = build_system(cfg.site, int(size))
        ab = float(np.max(np.abs(system.A @ system.B - np.eye(system.size))))
        nu = float(np.linalg.svd(system.A, compute_uv=False)[-1])
        rows.append((int(size), ab, column_sum_norm(system.B), bound, nu))
        if p["export_size"] is not None and int(size) == int(p["export_size"]):
            for name, mat in (("A", system.A), ("B", system.B)):
                files.append(write_csv(out / f"toeplitz_{name}.csv", ("row", "col", "value"), matrix_triplets(mat)))
    files.insert(0, write_csv(out / "toeplitz_check.csv", ("size", "ab_residual", "norm_b", "bound", "nu"), rows,
                              ["size = box side l; bound = 1 / (1 - a*); nu = smallest singular value of A"]))
    sweep = symbol_sweep(cfg.site.a, int(p["symbol_points"]))
    files.append(write_csv(out / "symbol.csv", ("theta", "re", "im", "abs"), sweep.tolist()))
    return files, {}, 0


def cmd_volume(cfg, p, seed, workers, out):
    n_mc = int(p["n_samples"])
    u = ShearedUnion(len(p["t"]), tuple(p["t"]), cfg.omega_plus)
    est, err = mc_volume(u.contains, u.bbox(), n_mc, seed)
    pieces = sheared_union_decomposition(u)
    rows = [
        ("sheared_union", sheared_union_volume(u), est, err),
        ("decomposition_sum", sum(pc.volume for pc in pieces), float("nan"), float("nan")),
    ]
    system = build_system(cfg.site, cfg.l)
    pivot = p["pivot"] if p["pivot"] is not None else [cfg.l - 1] * cfg.d
    fact = factorize_domain(system, pivot, cfg.omega_plus)
    eta = system.A @ sample_disorder(cfg, seed, 0).omega
    eta_less = eta[fact.less]
    est, err = mc_volume(lambda y: fact.in_M_greater_plus(eta_less, y), fact.enlarged_bbox(eta_less), n_mc, seed + 1)
    rows.append(("enlarged_domain", enlarged_volume(fact), est, err))
    path = write_csv(out / "volume.csv", ("quantity", "exact", "mc", "stderr"), rows,
                     [f"t={list(u.t)}", f"pivot={list(pivot)} |Lambda_>|={fact.greater.size}"])
    return [path], {}, 0


def cmd_birman_schwinger(cfg, p, seed, workers, out):
    h0 = hamiltonian_from_potential(
        assemble_hamiltonian(cfg, zero_disorder(cfg)).potential, cfg.h, cfg.bc
    )
    floor = float(eigenvalues(h0)[0])
    energy = floor - float(p["energy_shift"])
    rows = []
    for i in range(int(p["n_samples"])):
        ham = assemble_hamiltonian(cfg, sample_disorder(cfg, seed, i))
        v = ham.potential - h0.potential
        rep = bs_equivalence_check(h0, v, energy, float(p["eps"]))
        resid = bs_resolvent_residual(birman_schwinger(h0, v, energy), h0, v)
        rows.append((i, rep.dist_spectrum, rep.resolvent_norm, rep.near, rep.large_norm, rep.holds, resid))
    cols = ("sample", "dist_spectrum", "resolvent_norm", "near", "large_norm", "holds", "resolvent_residual")
    path = write_csv(out / "birman_schwinger.csv", cols, rows, [f"energy={energy!r} eps={float(p['eps'])!r}"])
    return [path], {"all_hold": all(r[5] for r in rows)}, 0


def cmd_msa(cfg, p, seed, workers, out):
    keys = ("c1", "c2", "c3", "xi", "steps", "strict")
    sched = ex.msa_schedule(int(p["l0"]), float(p["zeta"]), float(p["m0"]), float(p["q0"]), **{k: p[k] for k in keys},
                            d=cfg.d if cfg is not None else 1)
    files = [emit_plot_data(sched, "msa", out / "msa.csv")]
    summary = {"mass_retained": sched.mass_retained, "probability_improves": sched.probability_improves}
    if p["survey_energy"] is not None:
        if cfg is None:
            raise ConfigError("a regularity survey needs the model keys in the config")
        rows = ex.regularity_survey(cfg, sched, float(p["survey_energy"]), int(p["n_samples"]), seed, workers=workers)
        files.append(write_csv(out / "msa_survey.csv", ("j", "l", "m", "fraction", "n", "status"),
                               [(r.j, r.l, r.m, r.fraction, r.n, r.status) for r in rows]))
    return files, summary, 0


def cmd_lifshitz(cfg, p, seed, workers, out):
    lo = float(p["e_min"]) if p["e_min"] is not None else 0.0
    hi = float(p["e_max"]) if p["e_max"] is not None else 1.0
    series = ex.lifshitz_probe(cfg, np.linspace(lo, hi, int(p["n_points"])), int(p["n_samples"]), seed, workers)
    path = emit_plot_data(series, "lifshitz", out / "lifshitz.csv")
    return [path], {"e0": series.e0, "skipped": series.skipped.tolist()}, 0


COMMANDS = {
    "spectrum": cmd_spectrum,
    "wegner": cmd_wegner,
    "ids": cmd_ids,
    "proximity": cmd_proximity,
    "combes-thomas": cmd_combes_thomas,
    "averaging": cmd_averaging,
    "toeplitz-check": cmd_toeplitz_check,
    "volume": cmd_volume,
    "birman-schwinger": cmd_birman_schwinger,
    "msa": cmd_msa,
    "lifshitz": cmd_lifshitz,
}


# --------------------------------------------------------------------------
# Driver


def run(command: str, args) -> dict:
    """Execute one subcommand and write its manifest; returns the manifest."""
    started = datetime.now(timezone.utc).isoformat()
    raw, seed = load_inputs(args)
    params = resolve_params(command, raw, args.samples)
    model_keys = {k: v for k, v in raw.items() if k not in DEFAULTS}
    cfg = None
    if command in NEEDS_MODEL or any(k in model_keys for k in ("d", "l", "a")):
        cfg = config_from_mapping(model_keys)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files, summary, excluded = COMMANDS[command](cfg, params, seed, max(1, int(args.workers)), out)
    effective = {**model_keys, command: params}
    manifest = {
        "tool": "alloylab",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": effective,
        "input_hash": content_hash({"command": command, "seed": seed, "config": effective}),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": [{"file": f.name, "sha256": sha256_file(f), "bytes": f.stat().st_size} for f in files],
        "excluded_samples": excluded,
        "summary": summary,
    }
    write_json(out / "manifest.json", manifest)
    return manifest


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config, or a manifest.json to replay")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--samples", type=int, default=None, help="override the sample count")
    common.add_argument("--workers", type=int, default=1, help="worker processes for sample loops")
    common.add_argument("--set", action="append", metavar="K=V", help="override a config key (dots reach into sections)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="alloylab", description="Disorder experiments for alloy-type random operators.")
    parser.add_argument("--version", action="version", version=f"alloylab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=(COMMANDS[name].__doc__ or name.replace("-", " ")))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        manifest = run(args.command, args)
    except AlloyLabError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    for item in manifest["outputs"]:
        print(Path(args.out) / item["file"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
