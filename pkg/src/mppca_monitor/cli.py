"""Command-line interface: train, select-k, threshold, monitor, evaluate, simulate, report.

Exit status: 0 on success (for ``monitor``: no alarm raised), 2 when
``monitor`` raised at least one alarm, 1 on any error.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data_io import (
    DataFormatError,
    Dataset,
    ModelArtifact,
    ModelFormatError,
    read_csv,
    read_model,
    standardize,
    write_csv,
    write_model,
)
from .missing import conditional_impute, em_fit_missing
from .mixture import TrainingConfig, choose_q, em_fit, select_k
from .monitoring import FORMS, MODES, STATISTICS, detect, evaluate, fit_thresholds, global_statistics
from .synth import benchmark_scenario, generate, scenario_from_dict, scenario_to_dict

log = logging.getLogger("mppca_monitor")

EXIT_OK, EXIT_ERROR, EXIT_ALARM = 0, 1, 2


class CliError(Exception):
    pass


def _header_flag(args):
    return {"auto": None, "yes": True, "no": False}[args.header]


def _load(path, args) -> Dataset:
    ds = read_csv(path, header=_header_flag(args))
    if len(ds) == 0:
        raise CliError(f"{path}: no samples")
    return ds


def _complete_for_stats(mixture, values):
    return values if not np.isnan(values).any() else conditional_impute(mixture, values)


def _resolve_q(values, args):
    if args.q is not None:
        return args.q
    seeded = np.where(np.isnan(values), np.nanmean(values, axis=0), values)
    return choose_q(seeded, args.rate)


def _fit(values, K, q, args):
    cfg = TrainingConfig(K=K, q=q, max_iterations=args.max_iter, tol=args.tol, seed=args.seed)
    if np.isnan(values).any():
        return em_fit_missing(values, cfg)
    return em_fit(values, cfg)


def _h_table(h_values, best):
    lines = ["  K        H(K)"]
    for k in sorted(h_values):
        mark = "  <- selected" if k == best else ""
        lines.append(f"{k:3d}  {h_values[k]:12.6f}{mark}")
    return "\n".join(lines)


def _select(values, q, args):
    k_values = range(args.k_min, args.k_max + 1)
    if np.isnan(values).any():
        # criterion on the observed-data fit for every K
        h, reports = {}, {}
        for K in k_values:
            rep = _fit(values, K, q, args)
            h[K], reports[K] = rep.h_value, rep
        best = min(h, key=lambda k: (h[k], k))
        return best, reports, h
    cfg = TrainingConfig(q=q, max_iterations=args.max_iter, tol=args.tol, seed=args.seed)
    res = select_k(values, cfg, k_values, rule=args.rule, delta=args.delta)
    for K, msg in res.failures.items():
        log.warning("K=%d failed: %s", K, msg)
    return res.best_K, res.reports, res.h_values


def cmd_train(args):
    ds = _load(args.data, args)
    std = None
    values = ds.values
    if args.standardize:
        ds, std = standardize(ds)
        values = ds.values
    q = _resolve_q(values, args)
    h_values = {}
    if args.K is not None:
        report = _fit(values, args.K, q, args)
        h_values = {args.K: report.h_value}
        K = args.K
    else:
        K, reports, h_values = _select(values, q, args)
        report = reports[K]
        print(_h_table(h_values, K))
    m = report.params
    g = global_statistics(m, _complete_for_stats(m, values), args.form)
    th = fit_thresholds(g, args.alpha)
    config = {
        "K": K,
        "q": q,
        "alpha": args.alpha,
        "seed": args.seed,
        "max_iterations": args.max_iter,
        "tol": args.tol,
        "h_values": {str(k): float(v) for k, v in sorted(h_values.items())},
        "log_likelihood": float(report.log_likelihood),
        "iterations": report.iterations,
        "converged": report.converged,
        "n_train": len(ds),
        "columns": ds.column_names,
    }
    write_model(ModelArtifact(m, th, config, args.form, std), args.out)
    print(f"K={K} q={q} log-likelihood={report.log_likelihood:.6f} iterations={report.iterations}"
          f" converged={report.converged}")
    print(f"thresholds (alpha={args.alpha}): T2={th.t2:.6g} SPE={th.spe:.6g} Tc2={th.tc2:.6g}")
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_select_k(args):
    ds = _load(args.data, args)
    values = standardize(ds)[0].values if args.standardize else ds.values
    q = _resolve_q(values, args)
    best, _, h_values = _select(values, q, args)
    print(_h_table(h_values, best))
    if args.out:
        doc = {"best_K": best, "q": q, "h_values": {str(k): float(v) for k, v in sorted(h_values.items())}}
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def _prepared(art: ModelArtifact, ds: Dataset):
    if ds.values.shape[1] != art.mixture.d:
        raise CliError(f"data has {ds.values.shape[1]} variables but the model expects {art.mixture.d}")
    values = ds.values if art.standardization is None else art.standardization.apply(ds.values)
    return _complete_for_stats(art.mixture, values)


def cmd_threshold(args):
    art = read_model(args.model)
    ds = _load(args.data, args)
    g = global_statistics(art.mixture, _prepared(art, ds), art.form)
    art.thresholds = fit_thresholds(g, args.alpha)
    art.config = dict(art.config, alpha=args.alpha, threshold_data=str(args.data))
    write_model(art, args.out or args.model)
    th = art.thresholds
    print(f"thresholds (alpha={args.alpha}): T2={th.t2:.6g} SPE={th.spe:.6g} Tc2={th.tc2:.6g}")
    return EXIT_OK


def cmd_monitor(args):
    art = read_model(args.model)
    if art.thresholds is None:
        raise CliError(f"{args.model} has no thresholds; run 'threshold' first")
    ds = _load(args.data, args)
    g = global_statistics(art.mixture, _prepared(art, ds), art.form)
    alarms = np.atleast_1d(detect(g, art.thresholds, args.mode))
    th = art.thresholds
    header = ["index", "t2", "spe", "tc2", "j_t2", "j_spe", "j_tc2", "alarm"]
    if ds.labels is not None:
        header.append("fault")
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for n in range(len(ds)):
            row = [n + 1, repr(float(g.t2[n])), repr(float(g.spe[n])), repr(float(g.tc2[n])),
                   repr(th.t2), repr(th.spe), repr(th.tc2), int(alarms[n])]
            if ds.labels is not None:
                row.append(int(ds.labels[n]))
            w.writerow(row)
    n_alarm = int(alarms.sum())
    print(f"{len(ds)} samples, {n_alarm} alarms ({args.mode} mode); statistics written to {args.out}")
    return EXIT_ALARM if n_alarm else EXIT_OK


def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise CliError(f"{path}: no rows")
    return rows


def cmd_evaluate(args):
    rows = _read_table(args.alarms)
    if "alarm" not in rows[0]:
        raise CliError(f"{args.alarms}: no 'alarm' column")
    alarms = np.array([int(r["alarm"]) for r in rows], dtype=bool)
    if args.labels:
        ds = read_csv(args.labels, header=_header_flag(args))
        if ds.labels is None:
            raise CliError(f"{args.labels}: no 'fault' column")
        labels = ds.labels
    elif "fault" in rows[0]:
        labels = np.array([int(r["fault"]) for r in rows], dtype=bool)
    else:
        raise CliError("no labels: pass --labels or monitor a labelled file")
    if labels.size != alarms.size:
        raise CliError(f"{alarms.size} alarms but {labels.size} labels")
    rep = evaluate(alarms, labels)
    fmt = lambda v: "n/a" if v is None else f"{v:.2f}%"  # noqa: E731
    print(f"MAR={fmt(rep.mar)} FAR={fmt(rep.far)} "
          f"(alarmed faults {rep.true_alarms}, missed {rep.missed}, false alarms {rep.false_alarms},"
          f" quiet normals {rep.true_silent})")
    if args.out:
        Path(args.out).write_text(json.dumps(rep.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_simulate(args):
    if args.scenario:
        spec = scenario_from_dict(json.loads(Path(args.scenario).read_text(encoding="utf-8")))
    else:
        spec = benchmark_scenario(seed=args.seed, K=args.K, d=args.d, q=args.q, magnitude=args.magnitude,
                                  variables=args.variables, kind=args.kind, n_normal=args.n_normal,
                                  n_test=args.n_test, onset=args.onset - 1, missing_rate=args.missing_rate,
                                  separation=args.separation, noise_std=args.noise_std)
        spec.train_missing_rate = args.train_missing_rate
    train, test = generate(spec)
    write_csv(train, args.train_out)
    write_csv(test, args.test_out)
    if args.scenario_out:
        Path(args.scenario_out).write_text(json.dumps(scenario_to_dict(spec), indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(train)} training rows to {args.train_out} and {len(test)} test rows to {args.test_out}")
    return EXIT_OK


def _svg_chart(values, limit, title, width=800, height=240, pad=40):
    n = len(values)
    top = max(float(np.max(values)), limit) * 1.05 or 1.0
    sx = (width - 2 * pad) / max(n - 1, 1)
    sy = (height - 2 * pad) / top

    def xy(i, v):
        return f"{pad + i * sx:.2f},{height - pad - v * sy:.2f}"

    points = " ".join(xy(i, v) for i, v in enumerate(values))
    ly = height - pad - limit * sy
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<title>{title}</title>',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="{pad - 12}" font-family="sans-serif" font-size="14">{title}</text>',
        f'<line class="axis" x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line class="axis" x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<polyline class="statistic" fill="none" stroke="steelblue" stroke-width="1" points="{points}"/>',
        f'<line class="threshold" x1="{pad}" y1="{ly:.2f}" x2="{width - pad}" y2="{ly:.2f}" '
        f'stroke="red" stroke-dasharray="6,4"/>',
        "</svg>",
        "",
    ])


def cmd_report(args):
    rows = _read_table(args.stats)
    missing = [c for c in ("index", *STATISTICS, *(f"j_{s}" for s in STATISTICS)) if c not in rows[0]]
    if missing:
        raise CliError(f"{args.stats}: missing columns {missing}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        for s in STATISTICS:
            values = np.array([float(r[s]) for r in rows])
            limit = float(rows[0][f"j_{s}"])
            (out / f"{s}.svg").write_text(_svg_chart(values, limit, f"{s.upper()} (limit {limit:.4g})"),
                                          encoding="utf-8")
    except ValueError as exc:
        raise CliError(f"{args.stats}: malformed statistics: {exc}") from None
    with open(out / "series.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", *STATISTICS])
        for r in rows:
            w.writerow([r["index"], *(r[s] for s in STATISTICS)])
    print(f"charts written to {out}")
    return EXIT_OK


def _common(p):
    p.add_argument("--header", choices=("auto", "yes", "no"), default="auto",
                   help="whether CSV inputs carry a header row (default: detect)")


def _fit_options(p):
    p.add_argument("--q", type=int, help="latent dimension (overrides --rate)")
    p.add_argument("--rate", type=float, default=0.9, help="cumulative contribution rate used to pick q")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6, help="relative log-likelihood change for convergence")
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--rule", choices=("argmin", "delta"), default="argmin")
    p.add_argument("--delta", type=float, help="threshold for --rule delta (default 0.05 |H(1)|)")
    p.add_argument("--standardize", action="store_true", help="scale columns to zero mean, unit variance")


def build_parser():
    parser = argparse.ArgumentParser(prog="mppca-monitor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a mixture on normal data and compute alarm limits")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--K", type=int, help="fixed number of local models (default: select by criterion)")
    p.add_argument("--alpha", type=float, default=0.99)
    p.add_argument("--form", choices=FORMS, default="posterior")
    _fit_options(p)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("select-k", help="tabulate the model-count criterion over a K range")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    _fit_options(p)
    _common(p)
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("threshold", help="recompute alarm limits from (held-out) normal data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=0.99)
    p.add_argument("--out", help="write the updated model here (default: overwrite --model)")
    _common(p)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("monitor", help="score samples and raise alarms")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=MODES, default="combined")
    _common(p)
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("evaluate", help="missing and false alarm rates")
    p.add_argument("--alarms", required=True, help="output of 'monitor'")
    p.add_argument("--labels", help="CSV with a 'fault' column (default: the alarms file's own)")
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="write synthetic train/test CSVs")
    p.add_argument("--scenario", help="scenario JSON (overrides the options below)")
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.add_argument("--scenario-out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--q", type=int, default=3)
    p.add_argument("--kind", default="step", choices=("step", "ramp", "gain", "noise"))
    p.add_argument("--magnitude", type=float, default=5.0)
    p.add_argument("--variables", type=int, nargs="+", default=[0, 1], help="0-based fault columns")
    p.add_argument("--onset", type=int, default=429, help="1-based first faulty test sample")
    p.add_argument("--n-normal", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=750)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--train-missing-rate", type=float, default=0.0)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--noise-std", type=float, default=0.3)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="SVG monitoring charts from a statistics file")
    p.add_argument("--stats", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, DataFormatError, ModelFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"error: fit failed (seed {getattr(args, 'seed', 'n/a')}): {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
