"""Command line interface: simulate, fit, select-k, estimate, report."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from sklearn.metrics import adjusted_rand_score

from . import io, plotting
from .estimate import filter_columns, match_columns, salso_select
from .mcmc import ChainAbort, run_chain
from .missingness import empirical_betas, solve_beta
from .model import ModelError, preprocess
from .selection import calibration_metric, dic, k_grid_report, lpml, summarize_fit
from .simulate import gen_simulation1, gen_simulation2

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_MODEL, EXIT_RUNTIME = 0, 2, 3, 4, 5

log = logging.getLogger("cytofam")


# ---------------------------------------------------------------------------
# helpers


def resolve_beta(cfg: io.RunConfig, data) -> np.ndarray:
    """Explicit coefficients, else shared anchors, else empirical quantiles."""
    if cfg.beta is not None:
        beta = np.asarray(cfg.beta, dtype=float).reshape(-1, 3)
        if len(beta) != data.I:
            raise ModelError(f"beta has {len(beta)} rows of coefficients for {data.I} samples")
        return beta
    if cfg.anchors is not None:
        return np.tile(solve_beta(cfg.anchors), (data.I, 1))
    return empirical_betas(data, cfg.quantiles, cfg.rho_targets)


def load_data(cfg: io.RunConfig):
    if not cfg.samples:
        raise io.ConfigError("no sample files given (use --samples or samples = ... in the config)")
    data = io.load_csv(cfg.samples, cfg.cutoffs)
    report = None
    if cfg.preprocess:
        data, report = preprocess(data, cfg.pos_frac, cfg.miss_frac, cfg.floor)
        log.info("preprocessing dropped markers %s and cells %s", report.dropped_markers, report.dropped_cells)
    return data, report


def _fit_one(cfg: io.RunConfig, data, beta, K: int, out: Path):
    hyper = cfg.hyperparams(K)
    trace = run_chain(data, hyper, beta, cfg.chain_config(), progress_every=max(cfg.n_iter // 10, 1))
    out.mkdir(parents=True, exist_ok=True)
    io.save_trace(out / "trace.npz", trace, data, full_state=cfg.full_state)
    io.write_matrix(out / "loglik.csv", ["iteration", "loglik"],
                    np.column_stack([np.arange(len(trace.loglik)), trace.loglik]))
    io.write_manifest(out / "manifest.json", seed=cfg.seed, K=K, draws=len(trace), wall_time=trace.wall_time,
                      beta=beta, markers=data.markers, sizes=data.sizes, config=cfg.echo())
    return trace


def _select_worker(args):
    cfg, data, beta, K, out = args
    trace = _fit_one(cfg, data, beta, K, out)
    return summarize_fit(trace, data, beta, cfg.threshold)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg: io.RunConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    kw = {"J": args.J}
    if args.sizes:
        kw["sizes"] = tuple(int(s) for s in args.sizes.split(","))
    if args.design == "sim1":
        data, truth = gen_simulation1(rng, canned_w=args.canned_w, **kw)
    else:
        data, truth = gen_simulation2(rng, canned_w=not args.random_w, **kw)
    out = Path(cfg.out)
    io.write_csv(data, out)
    cols = [f"k{k + 1}" for k in range(truth.K)]
    io.write_matrix(out / "truth_Z.csv", cols, truth.Z)
    io.write_matrix(out / "truth_w.csv", cols, truth.w)
    io.write_matrix(out / "truth_p.csv", data.markers, truth.p)
    for i, lam in enumerate(np.split(truth.lam, np.cumsum(truth.sizes)[:-1])):
        io.write_labels(out / f"truth_lambda_{i + 1}.csv", lam, "lambda")
    io.write_manifest(out / "manifest.json", design=args.design, seed=cfg.seed, sizes=data.sizes, J=data.J,
                      K=truth.K, canned_w=bool(args.canned_w if args.design == "sim1" else not args.random_w))
    print(f"I={data.I} J={data.J} K={truth.K} N={data.sizes.tolist()}")
    for i in range(data.I):
        print(f"sample {i + 1}: missing fraction {1 - data.sample_m(i).mean():.4f}")
    return EXIT_OK


def cmd_fit(args, cfg: io.RunConfig) -> int:
    data, _ = load_data(cfg)
    beta = resolve_beta(cfg, data)
    trace = _fit_one(cfg, data, beta, cfg.K, Path(cfg.out))
    print(f"K={cfg.K} draws={len(trace)} wall_time={trace.wall_time:.1f}s -> {Path(cfg.out) / 'trace.npz'}")
    return EXIT_OK


def cmd_select_k(args, cfg: io.RunConfig) -> int:
    data, _ = load_data(cfg)
    beta = resolve_beta(cfg, data)
    out = Path(cfg.out)
    jobs = [(cfg, data, beta, K, out / f"K{K}") for K in cfg.k_grid]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_select_worker, jobs))
    else:
        rows = [_select_worker(j) for j in jobs]
    report = k_grid_report(rows)
    report.to_csv(out / "kgrid.csv")
    (out / "kgrid.txt").write_text(report.to_text())
    plotting.k_grid_figures(out, report)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_estimate(args, cfg: io.RunConfig) -> int:
    trace, data = io.load_trace(args.trace)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    est = salso_select(trace, data.sizes)
    cols = [f"k{k + 1}" for k in range(trace.K)]
    io.write_matrix(out / "estimate_w.csv", cols, np.array([e.w for e in est]))
    for e in est:
        i = e.sample + 1
        io.write_matrix(out / f"estimate_Z_{i}.csv", cols, e.Z)
        io.write_labels(out / f"estimate_lambda_{i}.csv", e.lam, "lambda")
        plotting.expression_heatmap(out / f"heatmap_{i}.svg", data.sample_y(e.sample), e.lam, data.markers,
                                    title=f"sample {i}")
        Zf, wf, keep = filter_columns(e.Z, e.w, cfg.min_weight)
        plotting.feature_grid(out / f"zgrid_{i}.svg", Zf, wf, data.markers, title=f"sample {i}")
        print(f"sample {i}: draw {e.draw}, {len(keep)} of {trace.K} subpopulations with weight >= {cfg.min_weight}")
    return EXIT_OK


def _load_truth(directory, I):
    d = Path(directory)
    _, Z = io.read_matrix(d / "truth_Z.csv")
    _, w = io.read_matrix(d / "truth_w.csv")
    lams = [io.read_matrix(d / f"truth_lambda_{i + 1}.csv")[1][:, 0].astype(int) for i in range(I)]
    return Z.astype(int), w, lams


def cmd_report(args, cfg: io.RunConfig) -> int:
    trace, data = io.load_trace(args.trace)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dr = dic(trace, data)
    lines = [f"K = {trace.K}", f"draws = {len(trace)}", f"LPML = {lpml(trace, data):.4f}",
             f"DIC (Dbar - Dhat) = {dr.p_d:.4f}", f"DIC (2 Dbar - Dhat) = {dr.standard:.4f}",
             f"negligible weights (< {cfg.threshold}) = {calibration_metric(trace, cfg.threshold).count}"]
    plotting.line_plot(out / "loglik.svg", np.arange(len(trace.loglik)), trace.loglik, "iteration", "log likelihood")
    if args.truth:
        Zt, wt, lams = _load_truth(args.truth, data.I)
        for e in salso_select(trace, data.sizes):
            Zf, wf, keep = filter_columns(e.Z, e.w, cfg.min_weight)
            r, c, dist = match_columns(Zf, Zt)
            w_err = np.abs(e.w[keep][r] - wt[e.sample][c]).max() if len(r) else np.nan
            ari = adjusted_rand_score(lams[e.sample], e.lam)
            lines.append(f"sample {e.sample + 1}: columns {len(keep)} vs {Zt.shape[1]}, hamming {int(dist.sum())}, "
                         f"ARI {ari:.4f}, max |w - w_true| {w_err:.4f}")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


_OVERRIDES = [
    ("--samples", str, "comma-separated sample CSV files"),
    ("--cutoffs", str, "CSV of per-sample cutoffs (values are then raw intensities)"),
    ("--K", int, "number of subpopulations"),
    ("--k-grid", str, "K values, e.g. 2..8 or 2,4,6"),
    ("--n-iter", int, "total iterations"),
    ("--burn-in", int, "discarded iterations"),
    ("--thin", int, "thinning stride"),
    ("--seed", int, "random seed"),
    ("--proposal-sd", float, "Metropolis proposal sd for missing values"),
    ("--fixed", str, "comma-separated parameters to hold fixed"),
    ("--beta", str, "missingness coefficients, three per sample"),
    ("--anchors", str, "three y:rho anchors shared by all samples"),
    ("--quantiles", str, "quantile levels of negative observed values"),
    ("--rho-targets", str, "missing probabilities at the quantiles"),
    ("--jobs", int, "parallel fits for select-k"),
    ("--threshold", float, "negligible-weight threshold"),
    ("--min-weight", float, "display threshold for subpopulation weights"),
    ("--out", str, "output directory"),
]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    for flag, typ, hlp in _OVERRIDES:
        common.add_argument(flag, type=typ, help=hlp)
    common.add_argument("--preprocess", action="store_true", default=None, help="apply marker/cell filtering")
    common.add_argument("--full-state", action="store_true", default=None, help="store every parameter in the trace")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cytofam", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset with truth files")
    s.add_argument("--design", choices=("sim1", "sim2"), default="sim1")
    s.add_argument("--sizes", help="comma-separated cells per sample")
    s.add_argument("--J", type=int, default=20)
    s.add_argument("--canned-w", action="store_true", help="sim1: use the tabulated weights")
    s.add_argument("--random-w", action="store_true", help="sim2: draw weights instead of the table")
    sub.add_parser("fit", parents=[common], help="run one chain")
    sub.add_parser("select-k", parents=[common], help="fit a K grid and report LPML/DIC/calibration")
    e = sub.add_parser("estimate", parents=[common], help="point estimates and heatmaps from a trace")
    e.add_argument("--trace", required=True)
    r = sub.add_parser("report", parents=[common], help="fit metrics of a trace, optionally against truth")
    r.add_argument("--trace", required=True)
    r.add_argument("--truth", help="directory with truth files written by simulate")
    return p


def make_config(args) -> io.RunConfig:
    mapping, base = {}, None
    if args.config:
        mapping.update(io.read_config(args.config))
        base = Path(args.config).parent
    for item in args.set:
        if "=" not in item:
            raise io.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        mapping[k.strip()] = v.strip()
    flags = {}
    for flag, _, _ in _OVERRIDES:
        key = flag[2:].replace("-", "_")
        val = getattr(args, key)
        if val is not None:
            flags[key] = val if isinstance(val, str) else str(val)
    for key in ("preprocess", "full_state"):
        if getattr(args, key):
            flags[key] = "true"
    # command-line values are relative to the working directory
    return io.RunConfig.from_mapping(mapping, base_dir=base).update(flags)


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "select-k": cmd_select_k,
            "estimate": cmd_estimate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = make_config(args)
        return COMMANDS[args.command](args, cfg)
    except (io.ParseError, io.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ChainAbort as exc:
        print(f"error: chain aborted at {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
