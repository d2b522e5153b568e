"""Config-driven command line for the full areal pipeline.

Subcommands, in pipeline order:

    mesh        triangulate the region, write the mesh and neighbor graph
    aggregate   locate records, aggregate to triangles, write the dataset
    select      lasso-logistic covariate screen with cross-validation
    fit         fit the model grid, write summaries, comparison grids,
                predictions, and the choropleth GeoJSON
    report      write a provenance manifest (hashes, seeds, timings)

All commands read a flat ``key = value`` config file; a handful of flags
override config entries. Every stage is seeded, so rerunning a command
with the same inputs reproduces its outputs byte for byte.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .beta import LINKS
from .ingest import (
    AreaDataset,
    SchemaError,
    aggregate_providers,
    aggregate_tax,
    build_area_dataset,
    compute_brandrate,
    read_provider_csv,
    read_schema,
    read_tax_csv,
    read_zipgeo_csv,
    resolve_delimiter,
    split_train_test,
    transform_covariates,
)
from .inference import (
    FitControls,
    FitError,
    fit_laplace,
    fit_mcmc,
    model_data_from_dataset,
)
from .lasso import binarize_response, cv_select
from .mesh import (
    InvalidRegionError,
    NeighborGraph,
    TriMesh,
    build_mesh,
    build_neighbor_graph,
    load_region,
    mesh_to_geojson,
    precision_matrix,
)
from .metrics import ccc, dic, rse, waic
from .model import MODEL_KINDS, ModelSpec

__all__ = ["main", "ConfigError"]


class ConfigError(ValueError):
    """Raised for missing or malformed configuration."""


_DEFAULTS = {
    "provider_delimiter": "tab",
    "tax_delimiter": "comma",
    "mesh_target": "530",
    "mesh_seed": "0",
    "split_fraction": "0.8",
    "split_seed": "0",
    "select_folds": "10",
    "select_seed": "0",
    "models": ",".join(MODEL_KINDS),
    "links": ",".join(LINKS),
    "fit_seed": "0",
    "fit_draws": "1000",
    "mcmc_check": "false",
    "mcmc_iterations": "20000",
    "mcmc_burn_in": "10000",
    "mcmc_seed": "0",
    "parallel": "1",
}


def _load_config(path):
    cfg = dict(_DEFAULTS)
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    with fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{ln}: empty key")
            cfg[key] = val
    return cfg


def _require(cfg, key):
    if key not in cfg or cfg[key] == "":
        raise ConfigError(f"config key {key!r} is required")
    return cfg[key]


def _as_int(cfg, key):
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"config key {key!r} must be an integer, got {cfg[key]!r}")


def _as_float(cfg, key):
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"config key {key!r} must be a number, got {cfg[key]!r}")


def _as_bool(cfg, key):
    val = cfg[key].strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"config key {key!r} must be boolean, got {cfg[key]!r}")


def _model_list(cfg):
    kinds = [m.strip() for m in cfg["models"].split(",") if m.strip()]
    for m in kinds:
        if m not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {m!r}")
    return [m for m in MODEL_KINDS if m in kinds]


def _link_list(cfg):
    links = [l.strip() for l in cfg["links"].split(",") if l.strip()]
    for l in links:
        if l not in LINKS:
            raise ConfigError(f"unknown link {l!r}")
    return [l for l in LINKS if l in links]


def _out_dir(cfg):
    out = _require(cfg, "out_dir")
    os.makedirs(out, exist_ok=True)
    return out


def _record_timing(out, command, seconds):
    path = os.path.join(out, "timings.json")
    data = {}
    if os.path.exists(path):
        with open(path) as fh:
            data = json.load(fh)
    data[command] = seconds
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _mesh_paths(out):
    return (
        os.path.join(out, "mesh.txt"),
        os.path.join(out, "mesh.geojson"),
        os.path.join(out, "neighbors.txt"),
    )


def cmd_mesh(cfg):
    out = _out_dir(cfg)
    region = load_region(_require(cfg, "region_file"))
    mesh = build_mesh(region, _as_int(cfg, "mesh_target"), _as_int(cfg, "mesh_seed"))
    graph = build_neighbor_graph(mesh)
    n_comp, _ = graph.components()
    mesh_txt, mesh_geo, nbr_txt = _mesh_paths(out)
    with open(mesh_txt, "w") as fh:
        fh.write(mesh.to_text())
    _write_json(mesh_geo, mesh_to_geojson(mesh))
    with open(nbr_txt, "w") as fh:
        fh.write(graph.to_text())
    print(f"mesh: {mesh.n_triangles} triangles, {n_comp} graph component(s)")
    return 0


def cmd_aggregate(cfg):
    out = _out_dir(cfg)
    mesh_txt = _mesh_paths(out)[0]
    if not os.path.exists(mesh_txt):
        raise ConfigError(f"{mesh_txt} not found; run the mesh command first")
    with open(mesh_txt) as fh:
        mesh = TriMesh.from_text(fh.read())
    zipgeo = read_zipgeo_csv(_require(cfg, "zipgeo_csv"))
    pschema = read_schema(_require(cfg, "provider_schema"), "provider")
    pdelim = resolve_delimiter(cfg["provider_delimiter"])
    providers, preport = read_provider_csv(_require(cfg, "provider_csv"), pschema, pdelim)
    tschema = read_schema(_require(cfg, "tax_schema"), "tax")
    tdelim = resolve_delimiter(cfg["tax_delimiter"])
    taxes, treport = read_tax_csv(_require(cfg, "tax_csv"), tschema, tdelim)

    sums, p_excluded = aggregate_providers(providers, zipgeo, mesh)
    tax_vals, t_excluded = aggregate_tax(taxes, zipgeo, mesh)
    rates, reasons = compute_brandrate(sums)
    dataset = build_area_dataset(rates, tax_vals)
    dataset = transform_covariates(dataset, exclude=("avgscore",))
    dataset = split_train_test(
        dataset, _as_float(cfg, "split_fraction"), _as_int(cfg, "split_seed")
    )
    dataset.to_csv(os.path.join(out, "dataset.csv"))
    empty = mesh.n_triangles - len(rates)
    print(
        f"providers: {preport.n_rows} rows, {preport.n_dropped} dropped, "
        f"{p_excluded} outside the mesh"
    )
    print(
        f"tax: {treport.n_rows} rows, {treport.n_dropped} dropped, "
        f"{t_excluded} outside the mesh"
    )
    print(
        f"areas: {dataset.n} with data, {empty} empty triangles, "
        f"dropped {reasons}"
    )
    print(
        f"brandrate: min {dataset.brandrate.min():.4f} "
        f"max {dataset.brandrate.max():.4f} mean {dataset.brandrate.mean():.4f}"
    )
    return 0


def cmd_select(cfg):
    out = _out_dir(cfg)
    ds_path = os.path.join(out, "dataset.csv")
    if not os.path.exists(ds_path):
        raise ConfigError(f"{ds_path} not found; run the aggregate command first")
    dataset = AreaDataset.from_csv(ds_path)
    if not dataset.covariate_names:
        raise ConfigError("dataset has no covariate columns to select from")
    folds = _as_int(cfg, "select_folds")
    if folds < 2 or folds > dataset.n:
        raise ConfigError(
            f"select_folds = {folds} must be between 2 and the "
            f"{dataset.n} dataset rows"
        )
    y = binarize_response(dataset.brandrate)
    sel = cv_select(
        dataset.covariates,
        y,
        folds=folds,
        seed=_as_int(cfg, "select_seed"),
        names=list(dataset.covariate_names),
    )
    path = sel.path
    one_se_idx = int(np.nonzero(path.lambdas == path.lambda_1se)[0][0])
    lines = [
        f"# lambda_min = {float(path.lambda_min)!r}",
        f"# lambda_1se = {float(path.lambda_1se)!r}",
        "covariate,selected,coef_1se",
    ]
    for j, name in enumerate(dataset.covariate_names):
        coef = float(path.coefs[j, one_se_idx])
        lines.append(f"{name},{int(coef != 0.0)},{coef!r}")
    with open(os.path.join(out, "selection.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    curve = ["lambda,cv_mean,cv_se,nonzero"]
    for li, lam in enumerate(path.lambdas):
        nz = int(np.count_nonzero(path.coefs[:, li]))
        curve.append(f"{float(lam)!r},{float(path.cv_mean[li])!r},{float(path.cv_se[li])!r},{nz}")
    with open(os.path.join(out, "cv_curve.csv"), "w") as fh:
        fh.write("\n".join(curve) + "\n")
    print(
        f"selection: {len(sel.selected)} of {len(dataset.covariate_names)} covariates "
        f"at lambda_1se = {path.lambda_1se:.6g}"
    )
    return 0


def _read_selected(out):
    path = os.path.join(out, "selection.csv")
    if not os.path.exists(path):
        return None
    selected = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("covariate,"):
                continue
            name, flag, _ = line.split(",", 2)
            if flag == "1":
                selected.append(name)
    return selected


def _fit_cell(args):
    kind, link, data, Q, controls = args
    spec = ModelSpec(kind=kind, link=link)
    fit = fit_laplace(spec, data, Q, controls)
    return kind, link, fit


def cmd_fit(cfg):
    out = _out_dir(cfg)
    ds_path = os.path.join(out, "dataset.csv")
    mesh_txt, _, nbr_txt = _mesh_paths(out)
    for path, stage in ((ds_path, "aggregate"), (mesh_txt, "mesh"), (nbr_txt, "mesh")):
        if not os.path.exists(path):
            raise ConfigError(f"{path} not found; run the {stage} command first")
    dataset = AreaDataset.from_csv(ds_path)
    with open(mesh_txt) as fh:
        mesh = TriMesh.from_text(fh.read())
    with open(nbr_txt) as fh:
        graph = NeighborGraph.from_text(fh.read())
    Q = precision_matrix(graph)

    selected = _read_selected(out)
    covariates = selected if selected is not None else list(dataset.covariate_names)
    data = model_data_from_dataset(dataset, covariates, mesh.n_triangles)
    controls = FitControls(
        seed=_as_int(cfg, "fit_seed"), n_draws=_as_int(cfg, "fit_draws")
    )
    kinds = _model_list(cfg)
    links = _link_list(cfg)
    cells = [(kind, link, data, Q, controls) for kind in kinds for link in links]

    results = {}
    failures = []
    parallel = _as_int(cfg, "parallel")
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(_fit_cell_safe, cells))
    else:
        outcomes = [_fit_cell_safe(cell) for cell in cells]
    for kind, link, fit, error in outcomes:
        if error is not None:
            failures.append({"model": kind, "link": link, "error": error})
        else:
            results[(kind, link)] = fit

    y = dataset.brandrate
    train = dataset.train
    grid_rows_in = {"DIC": {}, "WAIC": {}}
    grid_rows_out = {"CCC": {}, "RSE": {}}
    pred_cols = {}
    for (kind, link), fit in sorted(results.items(), key=lambda kv: cells_index(kv[0], kinds, links)):
        d, _ = dic(fit.pointwise_loglik, fit.deviance_at_mean)
        w, _ = waic(fit.pointwise_loglik, fit.deviance_at_mean)
        grid_rows_in["DIC"][(kind, link)] = d
        grid_rows_in["WAIC"][(kind, link)] = w
        mu = fit.fitted_mu
        if np.any(~train):
            grid_rows_out["CCC"][(kind, link)] = ccc(y[~train], mu[~train])
            grid_rows_out["RSE"][(kind, link)] = rse(y[~train], mu[~train])
        pred_cols[f"{kind}_{link}"] = mu
        fit.to_csv(
            os.path.join(out, f"fit_{kind}_{link}.csv"),
            metadata={
                "model": kind,
                "link": link,
                "seed": controls.seed,
                "draws": controls.n_draws,
                "marginal_loglik": repr(float(fit.log_marginal)),
                "deviance_at_mean": repr(float(fit.deviance_at_mean)),
                "converged": fit.diagnostics["inner_converged"],
            },
        )

    def write_grid(path, blocks):
        lines = ["criterion,model," + ",".join(links)]
        for crit, rows in blocks.items():
            for kind in kinds:
                cells_txt = []
                for link in links:
                    if (kind, link) in rows:
                        cells_txt.append(repr(float(rows[(kind, link)])))
                    elif (kind, link) in results:
                        cells_txt.append("")
                    else:
                        cells_txt.append("failed")
                lines.append(f"{crit},{kind}," + ",".join(cells_txt))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    write_grid(os.path.join(out, "insample_grid.csv"), grid_rows_in)
    if np.any(~train):
        write_grid(os.path.join(out, "outsample_grid.csv"), grid_rows_out)

    pred_names = [f"{kind}_{link}" for kind in kinds for link in links if (kind, link) in results]
    lines = ["area_id,observed,split," + ",".join(pred_names)]
    for i in range(dataset.n):
        cells_txt = [
            str(int(dataset.area_id[i])),
            repr(float(y[i])),
            "train" if train[i] else "test",
        ]
        cells_txt += [repr(float(pred_cols[nm][i])) for nm in pred_names]
        lines.append(",".join(cells_txt))
    with open(os.path.join(out, "predictions.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")

    observed = [None] * mesh.n_triangles
    row_of_area = {int(a): i for i, a in enumerate(dataset.area_id)}
    for a, i in row_of_area.items():
        observed[a] = float(y[i])
    props = {"observed": observed}
    for nm in pred_names:
        col = [None] * mesh.n_triangles
        for a, i in row_of_area.items():
            col[a] = float(pred_cols[nm][i])
        props[f"pred_{nm}"] = col
    _write_json(os.path.join(out, "map.geojson"), mesh_to_geojson(mesh, props))
    _write_json(os.path.join(out, "failures.json"), failures)

    if _as_bool(cfg, "mcmc_check") and results:
        first = min(results, key=lambda kl: cells_index(kl, kinds, links))
        fit = results[first]
        spec = ModelSpec(kind=first[0], link=first[1])
        samples = fit_mcmc(
            spec,
            data,
            Q,
            iterations=_as_int(cfg, "mcmc_iterations"),
            burn_in=_as_int(cfg, "mcmc_burn_in"),
            seed=_as_int(cfg, "mcmc_seed"),
        )
        lines = ["parameter,laplace_mean,mcmc_mean,abs_diff,tolerance,agree"]
        mc_means = samples.beta.mean(axis=0)
        for j, name in enumerate(data.names):
            lap = float(fit.beta_mean[j])
            mc = float(mc_means[j])
            tol = max(0.05, 0.1 * abs(lap))
            lines.append(
                f"{name},{lap!r},{mc!r},{abs(lap - mc)!r},{tol!r},{int(abs(lap - mc) <= tol)}"
            )
        with open(os.path.join(out, "mcmc_check.csv"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"mcmc check written for {first[0]}/{first[1]}")

    print(
        f"fit: {len(results)} of {len(cells)} cells succeeded"
        + (f", {len(failures)} failed" if failures else "")
    )
    return 0


def cells_index(cell, kinds, links):
    kind, link = cell
    return kinds.index(kind) * len(links) + links.index(link)


def _fit_cell_safe(args):
    kind, link = args[0], args[1]
    try:
        k, l, fit = _fit_cell(args)
        return k, l, fit, None
    except Exception as exc:
        return kind, link, None, f"{type(exc).__name__}: {exc}"


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_report(cfg, config_path):
    out = _out_dir(cfg)
    inputs = {}
    for key in (
        "region_file",
        "zipgeo_csv",
        "provider_csv",
        "provider_schema",
        "tax_csv",
        "tax_schema",
    ):
        path = cfg.get(key)
        if path and os.path.exists(path):
            inputs[key] = {"path": path, "sha256": _sha256(path)}
    inputs["config"] = {"path": config_path, "sha256": _sha256(config_path)}

    outputs = {}
    for name in sorted(os.listdir(out)):
        if name in ("manifest.json",):
            continue
        path = os.path.join(out, name)
        if os.path.isfile(path):
            outputs[name] = {"sha256": _sha256(path), "bytes": os.path.getsize(path)}

    timings = {}
    tpath = os.path.join(out, "timings.json")
    if os.path.exists(tpath):
        with open(tpath) as fh:
            timings = json.load(fh)

    failures = []
    fpath = os.path.join(out, "failures.json")
    if os.path.exists(fpath):
        with open(fpath) as fh:
            failures = json.load(fh)

    manifest = {
        "version": __version__,
        "config": {k: cfg[k] for k in sorted(cfg)},
        "seeds": {
            k: cfg[k]
            for k in ("mesh_seed", "split_seed", "select_seed", "fit_seed", "mcmc_seed")
        },
        "inputs": inputs,
        "outputs": outputs,
        "failures": failures,
        "timings_seconds": timings,
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"manifest: {len(inputs)} inputs, {len(outputs)} outputs")
    return 0


def _apply_overrides(cfg, args):
    if args.out is not None:
        cfg["out_dir"] = args.out
    if args.models is not None:
        cfg["models"] = args.models
    if args.links is not None:
        cfg["links"] = args.links
    if args.parallel is not None:
        cfg["parallel"] = str(args.parallel)
    if args.mcmc_check:
        cfg["mcmc_check"] = "true"
    if args.seed is not None:
        for key in ("mesh_seed", "split_seed", "select_seed", "fit_seed", "mcmc_seed"):
            cfg[key] = str(args.seed)
    return cfg


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="spatbeta", description="areal Beta-regression pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("mesh", "aggregate", "select", "fit", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, help="override every stage seed")
        p.add_argument("--models", help="comma-separated model kinds")
        p.add_argument("--links", help="comma-separated link names")
        p.add_argument("--parallel", type=int, help="process count for the fit grid")
        p.add_argument(
            "--mcmc-check",
            action="store_true",
            help="run the MCMC oracle on the first fitted cell",
        )
    args = parser.parse_args(argv)

    try:
        cfg = _apply_overrides(_load_config(args.config), args)
        started = time.perf_counter()
        if args.command == "mesh":
            rc = cmd_mesh(cfg)
        elif args.command == "aggregate":
            rc = cmd_aggregate(cfg)
        elif args.command == "select":
            rc = cmd_select(cfg)
        elif args.command == "fit":
            rc = cmd_fit(cfg)
        else:
            rc = cmd_report(cfg, args.config)
        _record_timing(_out_dir(cfg), args.command, time.perf_counter() - started)
        return rc
    except (ConfigError, SchemaError, InvalidRegionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
