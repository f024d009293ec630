"""Batch command-line front end.

Subcommands: combine, kernel, impute, predict, simulate, cv, replay. Every
run writes a manifest (resolved configuration, input digests, tool version,
seed) next to its outputs; ``replay`` re-executes a manifest and reproduces
the outputs bit-exactly. Exit codes: 0 ok, 1 finished without converging,
2 input/format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    CovmergeError,
    MatrixFormatError,
    NotPositiveDefinite,
    SingularInformation,
    SingularSubmatrix,
)
from .imputation import IncompleteFeatureMatrix, soft_impute
from .kernels import (
    gaussian_kernel,
    grm_rowcentered,
    grm_to_dist,
    grm_vanraden,
    polynomial_kernel,
    read_marker_csv,
)
from .matcore import (
    LabeledSymMatrix,
    read_matrix_csv,
    to_correlation,
    write_matrix_csv,
)
from .mixedmodel import (
    fit_gblup,
    predict_gebv,
    read_phenotype_csv,
    write_gebv_csv,
)
from .simlab import (
    cv_leave_group_out,
    cv_random_kfold,
    merge_vs_impute_bench,
    run_supp_ex1,
    run_supp_ex2,
)
from .wishart_em import EMConfig, PartialSampleSet, combine

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_INPUT_ERROR = 2
EXIT_NUMERICAL = 3

NUMERICAL_ERRORS = (SingularSubmatrix, NotPositiveDefinite, SingularInformation)


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _out_base(out: str) -> Path:
    p = Path(out)
    return p.with_suffix("") if p.suffix else p


def _write_manifest(subcommand: str, args: dict, inputs: list, out: str) -> None:
    manifest = {
        "tool": "covmerge",
        "version": __version__,
        "subcommand": subcommand,
        "config": args,
        "inputs": {str(p): _digest(p) for p in inputs},
        "seed": args.get("seed"),
    }
    path = _out_base(out).with_suffix(".manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows_csv(rows: list[dict], path) -> None:
    if not rows:
        return
    keys = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _resolve_threads(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("COVMERGE_THREADS")
    return int(env) if env else 1


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


# ---------------------------------------------------------------------------
# Subcommand handlers (each returns a process exit code)
# ---------------------------------------------------------------------------


def _cmd_combine(args: argparse.Namespace) -> int:
    inputs = [read_matrix_csv(p) for p in args.inputs]
    if args.correlation:
        inputs = [to_correlation(m) for m in inputs]
    weights = None
    if args.weights:
        weights = [float(t) for t in args.weights.split(",")]
        if len(weights) != len(inputs):
            raise MatrixFormatError(
                f"{len(weights)} weights for {len(inputs)} input files"
            )
    sset = PartialSampleSet.from_samples(inputs, weights=weights)
    cfg = EMConfig(
        nu=args.nu,
        max_iter=args.max_iter,
        rel_tol=args.tol,
        compute_se=args.se,
    )
    result = combine(sset, cfg)

    base = _out_base(args.out)
    write_matrix_csv(result.sigma_hat, args.out)
    if args.se:
        write_matrix_csv(result.se, base.with_suffix(".se.csv"))
    report = {
        "iterations": result.iterations,
        "converged": result.converged,
        "loglik_trace": list(result.loglik_trace),
        "nu": result.nu,
        "rel_tol": cfg.rel_tol,
        "weights": list(sset.weights),
    }
    _write_json(report, base.with_suffix(".report.json"))
    _write_manifest("combine", _args_dict(args), args.inputs, args.out)
    if not result.converged:
        print(
            f"warning: stopped after {result.iterations} iterations without "
            "meeting the tolerance",
            file=sys.stderr,
        )
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_kernel(args: argparse.Namespace) -> int:
    markers = read_marker_csv(args.infile, ploidy=args.ploidy)
    if markers.has_missing:
        markers = markers.mean_imputed()
    if args.method == "vanraden":
        out = grm_vanraden(markers)
    elif args.method == "rowcentered":
        out = grm_rowcentered(markers)
    elif args.method == "gaussian":
        out = gaussian_kernel(grm_to_dist(grm_rowcentered(markers)), args.h)
    elif args.method == "polynomial":
        out = polynomial_kernel(markers, args.c, args.d)
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(args.method)
    write_matrix_csv(out, args.out)
    _write_manifest("kernel", _args_dict(args), [args.infile], args.out)
    return EXIT_OK


def _cmd_impute(args: argparse.Namespace) -> int:
    markers = read_marker_csv(args.infile)
    X = IncompleteFeatureMatrix(
        markers.genotype_labels,
        markers.marker_labels,
        np.where(markers.missing_mask, np.nan, markers.dosages),
    )
    result = soft_impute(
        X, max_rank=args.rank, lam=args.lam, tol=args.tol, max_iter=args.max_iter
    )
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", *result.col_labels])
        for lab, row in zip(result.row_labels, result.values):
            writer.writerow([lab, *(repr(float(v)) for v in row)])
    base = _out_base(args.out)
    _write_json(
        {
            "iterations": result.iterations,
            "converged": result.converged,
            "objective_trace": list(result.objective_trace),
            "rank": args.rank,
            "lambda": args.lam,
        },
        base.with_suffix(".report.json"),
    )
    _write_manifest("impute", _args_dict(args), [args.infile], args.out)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _cmd_predict(args: argparse.Namespace) -> int:
    G = read_matrix_csv(args.grm)
    pheno = read_phenotype_csv(args.pheno)
    with open(args.targets, "r", encoding="utf-8") as fh:
        targets = [line.strip() for line in fh if line.strip()]
    fit = fit_gblup(pheno, G)
    gebvs = predict_gebv(fit, G, targets)
    write_gebv_csv(targets, gebvs, args.out)
    base = _out_base(args.out)
    _write_json(
        {
            "sigma2_g": fit.sigma2_g,
            "sigma2_e": fit.sigma2_e,
            "lambda": fit.lambda_hat,
            "heritability": fit.heritability,
            "reml_loglik": fit.reml_loglik,
            "beta_hat": [float(b) for b in fit.beta_hat],
            "trait": fit.trait_name,
        },
        base.with_suffix(".report.json"),
    )
    _write_manifest(
        "predict", _args_dict(args), [args.grm, args.pheno, args.targets], args.out
    )
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace) -> int:
    threads = _resolve_threads(args.threads)
    base = _out_base(args.out)
    rows: list[dict] = []
    if args.protocol == "ex1":
        reports = run_supp_ex1(
            n_totals=_parse_int_list(args.n_totals),
            n_kernels=_parse_int_list(args.n_kernels),
            replicates=args.replicates,
            nu=args.nu,
            rng_seed=args.seed,
            threads=threads,
        )
        summary = {}
        for (nt, nk), rep in reports.items():
            summary[f"n_total={nt},n_kernel={nk}"] = {
                "mean_mse": rep.mse_upper,
                "mean_pearson": rep.pearson_upper,
            }
            for row in rep.per_replicate:
                rows.append({"n_total": nt, "n_kernel": nk, **row})
    elif args.protocol == "ex2":
        out = run_supp_ex2(
            n=args.n,
            n_samples=args.samples,
            n_starts=args.starts,
            nu=args.nu,
            rng_seed=args.seed,
        )
        summary = {
            "max_rel_final_loglik_gap": out["max_rel_gap"],
            "final_logliks": out["final_logliks"],
            "union_size": out["union_size"],
        }
        for s, trace in enumerate(out["traces"]):
            for it, ll in enumerate(trace):
                rows.append({"start": s, "iteration": it + 1, "loglik": ll})
    elif args.protocol == "bench":
        summary = {}
        for nk in _parse_int_list(args.n_kernels):
            comb, imp = merge_vs_impute_bench(
                n_genotypes=args.geno,
                n_markers=args.markers,
                panel_genotypes=args.panel_geno,
                panel_markers=args.panel_markers,
                n_kernel=nk,
                replicates=args.replicates,
                rank=args.rank,
                rng_seed=args.seed,
                threads=threads,
            )
            summary[f"n_kernel={nk}"] = {
                "mse_combined": comb.mse_upper,
                "mse_imputed": imp.mse_upper,
                "pearson_combined": comb.pearson_upper,
                "pearson_imputed": imp.pearson_upper,
            }
            for row in comb.per_replicate:
                flat = {
                    k: v for k, v in row.items() if not isinstance(v, dict)
                }
                rows.append({"n_kernel": nk, **flat})
    else:  # pragma: no cover
        raise ValueError(args.protocol)
    _write_rows_csv(rows, base.with_suffix(".metrics.csv"))
    _write_json(summary, base.with_suffix(".summary.json"))
    _write_manifest(f"simulate {args.protocol}", _args_dict(args), [], args.out)
    return EXIT_OK


def _cmd_cv(args: argparse.Namespace) -> int:
    threads = _resolve_threads(args.threads)
    G = read_matrix_csv(args.grm)
    pheno = read_phenotype_csv(args.pheno)
    base = _out_base(args.out)
    if args.scheme == "kfold":
        out = cv_random_kfold(pheno, G, k=args.k, rng_seed=args.seed, threads=threads)
        rows = out["per_fold"]
        summary = {"mean_accuracy": out["mean_accuracy"], "k": args.k}
        inputs = [args.grm, args.pheno]
    else:
        groups: dict[str, list[str]] = {}
        with open(args.groups, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["genotype", "group"]:
                raise MatrixFormatError(
                    "groups header must be 'genotype,group'", path=args.groups, line=1
                )
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) < 2:
                    raise MatrixFormatError(
                        "expected 'genotype,group'", path=args.groups, line=line_no
                    )
                groups.setdefault(row[1].strip(), []).append(row[0].strip())
        out = cv_leave_group_out(pheno, G, groups, threads=threads)
        rows = out["per_group"]
        summary = {"mean_accuracy": out["mean_accuracy"]}
        inputs = [args.grm, args.pheno, args.groups]
    _write_rows_csv(rows, base.with_suffix(".metrics.csv"))
    _write_json(summary, base.with_suffix(".summary.json"))
    _write_manifest(f"cv {args.scheme}", _args_dict(args), inputs, args.out)
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    with open(args.manifest, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for path, digest in manifest.get("inputs", {}).items():
        if _digest(path) != digest:
            raise MatrixFormatError(f"input {path} changed since the manifest was written")
    argv = []
    argv.extend(manifest["subcommand"].split())
    config = dict(manifest["config"])
    positional = config.pop("inputs", None)
    flag_names = {"infile": "--in", "lam": "--lambda"}
    for key, value in config.items():
        if value is None or value is False:
            continue
        flag = flag_names.get(key, "--" + key.replace("_", "-"))
        if value is True:
            argv.append(flag)
        else:
            argv.extend([flag, str(value)])
    if positional:
        argv.extend(positional)
    return main(argv)


def _args_dict(args: argparse.Namespace) -> dict:
    skip = {"func", "subcommand"}
    out = {}
    for key, value in vars(args).items():
        if key in skip:
            continue
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covmerge",
        description="Combine partial relationship/covariance matrices and run "
        "the surrounding prediction, imputation, and evaluation workflows.",
    )
    parser.add_argument("--version", action="version", version=f"covmerge {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("combine", help="combine partial matrix CSVs")
    p.add_argument("inputs", nargs="+", help="matrix CSV files")
    p.add_argument("--out", required=True, help="output CSV for the combined matrix")
    p.add_argument("--nu", type=float, default=None, help="degrees of freedom (default n+1)")
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--weights", default=None, help="comma-separated weights in (0,1]")
    p.add_argument(
        "--correlation",
        action="store_true",
        help="convert every input to a correlation matrix first",
    )
    p.add_argument("--se", action="store_true", help="also write asymptotic standard errors")
    p.set_defaults(func=_cmd_combine)

    p = sub.add_parser("kernel", help="build a relationship/kernel matrix from markers")
    p.add_argument("--in", dest="infile", required=True, help="marker CSV")
    p.add_argument(
        "--method",
        choices=["vanraden", "rowcentered", "gaussian", "polynomial"],
        required=True,
    )
    p.add_argument("--out", required=True)
    p.add_argument("--ploidy", type=int, default=2)
    p.add_argument("--h", type=float, default=1.0, help="gaussian bandwidth")
    p.add_argument("--c", type=float, default=0.0, help="polynomial offset")
    p.add_argument("--d", type=int, default=2, help="polynomial degree")
    p.set_defaults(func=_cmd_kernel)

    p = sub.add_parser("impute", help="complete a feature CSV by low-rank imputation")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--max-iter", type=int, default=100)
    p.set_defaults(func=_cmd_impute)

    p = sub.add_parser("predict", help="GBLUP prediction from a relationship matrix")
    p.add_argument("--grm", required=True)
    p.add_argument("--pheno", required=True)
    p.add_argument("--targets", required=True, help="text file, one genotype per line")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("simulate", help="run a simulation protocol")
    psub = p.add_subparsers(dest="protocol", required=True)

    p1 = psub.add_parser("ex1", help="accuracy over a grid of sizes and sample counts")
    p1.add_argument("--n-totals", default="40,80")
    p1.add_argument("--n-kernels", default="10,40")
    p1.add_argument("--replicates", type=int, default=10)
    p1.add_argument("--nu", type=float, default=300.0)
    p1.add_argument("--seed", type=int, default=0)
    p1.add_argument("--threads", type=int, default=None)
    p1.add_argument("--out", required=True)
    p1.set_defaults(func=_cmd_simulate)

    p2 = psub.add_parser("ex2", help="log-likelihood convergence from perturbed starts")
    p2.add_argument("--n", type=int, default=50)
    p2.add_argument("--samples", type=int, default=10)
    p2.add_argument("--starts", type=int, default=10)
    p2.add_argument("--nu", type=float, default=300.0)
    p2.add_argument("--seed", type=int, default=0)
    p2.add_argument("--threads", type=int, default=None)
    p2.add_argument("--out", required=True)
    p2.set_defaults(func=_cmd_simulate)

    p3 = psub.add_parser("bench", help="combining versus imputing marker panels")
    p3.add_argument("--n-kernels", default="3,5,10")
    p3.add_argument("--replicates", type=int, default=10)
    p3.add_argument("--geno", type=int, default=300)
    p3.add_argument("--markers", type=int, default=3000)
    p3.add_argument("--panel-geno", type=int, default=100)
    p3.add_argument("--panel-markers", type=int, default=500)
    p3.add_argument("--rank", type=int, default=40)
    p3.add_argument("--seed", type=int, default=0)
    p3.add_argument("--threads", type=int, default=None)
    p3.add_argument("--out", required=True)
    p3.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("cv", help="cross-validate genomic prediction accuracy")
    csub = p.add_subparsers(dest="scheme", required=True)

    c1 = csub.add_parser("kfold", help="random k-fold over genotypes")
    c1.add_argument("--grm", required=True)
    c1.add_argument("--pheno", required=True)
    c1.add_argument("--k", type=int, default=10)
    c1.add_argument("--seed", type=int, default=0)
    c1.add_argument("--threads", type=int, default=None)
    c1.add_argument("--out", required=True)
    c1.set_defaults(func=_cmd_cv)

    c2 = csub.add_parser("group", help="leave one genotype group out at a time")
    c2.add_argument("--grm", required=True)
    c2.add_argument("--pheno", required=True)
    c2.add_argument("--groups", required=True, help="CSV with header genotype,group")
    c2.add_argument("--threads", type=int, default=None)
    c2.add_argument("--out", required=True)
    c2.set_defaults(func=_cmd_cv)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.set_defaults(func=_cmd_replay)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MatrixFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except NUMERICAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CovmergeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
