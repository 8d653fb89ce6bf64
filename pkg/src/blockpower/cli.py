"""Command-line front end.

Subcommands:

- ``design``: build a block structure from covariates and sample one
  balanced assignment.
- ``match``: Mahalanobis distances plus exact pairwise matching.
- ``test``: compute the stratified test statistic from block, assignment and
  response CSVs.
- ``theory``: evaluate the asymptotic power functionals for a population
  and block structure.
- ``sweep``: run a Monte Carlo sweep from a config file, emitting one CSV
  row per cell and one SVG per (2n, p, effect-size) group.
- ``report``: Bonferroni-corrected calibration report over a results CSV.

Every subcommand is a thin adapter over the library; numbers printed or
written are identical to direct library calls with the same inputs and seed.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from blockpower import designs, matching
from blockpower.cmh import chi2_threshold, mh_table_form, reject, tabulate
from blockpower.harness import (
    apply_overrides,
    bonferroni_size_report,
    cells_from_config,
    load_sweep_config,
    sweep,
    write_results_csv,
    _CONFIG_DEFAULTS,
)
from blockpower.population import CovariateMatrix, read_population_csv
from blockpower.svgplot import power_curve_svg
from blockpower.theory import eta_n


def _read_covariates(path: str) -> CovariateMatrix:
    """Covariate CSV: header ``subject,x1..xp`` with optional trailing pT,pC."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "subject":
            raise ValueError(f"covariate CSV must start with a 'subject' column, got {header}")
        x_cols = [i for i, name in enumerate(header) if name.startswith("x")]
        if not x_cols:
            raise ValueError("covariate CSV has no x columns")
        rows = []
        for row in reader:
            rows.append([float(row[i]) for i in x_cols])
    return CovariateMatrix(np.array(rows))


def _read_responses(path: str, two_n: int) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["subject", "y"]:
            raise ValueError(f"unexpected responses CSV header: {header}")
        y = np.zeros(two_n, dtype=np.int8)
        seen = 0
        for row in reader:
            y[int(row[0])] = int(row[1])
            seen += 1
    if seen != two_n:
        raise ValueError(f"responses CSV has {seen} rows, expected {two_n}")
    return y


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_design(args) -> int:
    x = _read_covariates(args.covariates)
    kind = args.design
    if kind == "bcrd":
        bs = designs.BlockStructure.single_block(x.two_n)
    elif kind == "quantile":
        bs = designs.quantile_blocks(x.column(0), args.B)
    elif kind == "hierarchical":
        bs = designs.hierarchical_blocks(x, args.B)
    else:  # pairwise
        if x.p == 1:
            bs = designs.quantile_blocks(x.column(0), x.n)
        else:
            bs = matching.pm_blockstructure(
                matching.min_weight_perfect_matching(matching.mahalanobis_distances(x))
            )
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(args.seed)))
    assignment = designs.sample_assignment(bs, rng)
    out = _outdir(args)
    designs.write_blocks_csv(out / "blocks.csv", bs)
    designs.write_assignment_csv(out / "assignment.csv", assignment)
    print(f"wrote {out / 'blocks.csv'} ({bs.B} blocks of {bs.n_B}) and {out / 'assignment.csv'}")
    return 0


def _cmd_match(args) -> int:
    x = _read_covariates(args.covariates)
    d = matching.mahalanobis_distances(x)
    m = matching.greedy_pairing(d) if args.greedy else matching.min_weight_perfect_matching(d)
    out = _outdir(args)
    matching.write_matching_csv(out / "pairs.csv", m, d)
    if args.distances:
        matching.write_distances_csv(out / "distances.csv", d)
    print(f"total weight {m.total_weight!r}; wrote {out / 'pairs.csv'}")
    return 0


def _cmd_test(args) -> int:
    bs = designs.read_blocks_csv(args.blocks)
    assignment = designs.read_assignment_csv(args.assignment, bs)
    y = _read_responses(args.responses, bs.two_n)
    result = mh_table_form(tabulate(bs, assignment, y), bs.n_B)
    decision = reject(result, args.alpha)
    if result.defined:
        print(f"MH = {result.mh:.6f}")
        print(f"signed root = {result.signed_root:.6f}")
    else:
        print("MH undefined (all responses constant within every block)")
    print(f"threshold = {chi2_threshold(args.alpha):.4f} at alpha = {args.alpha}")
    print(f"reject = {decision}")
    out = _outdir(args)
    with open(out / "mh_result.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mh", "signedRoot", "numerator", "denominator", "defined", "alpha", "reject"])
        writer.writerow(
            [
                repr(result.mh),
                repr(result.signed_root),
                repr(result.numerator),
                repr(result.denominator),
                result.defined,
                args.alpha,
                decision,
            ]
        )
    return 0


def _cmd_theory(args) -> int:
    x, po = read_population_csv(args.population)
    bs = designs.read_blocks_csv(args.blocks)
    summary = eta_n(po, bs, alpha=args.alpha)
    print(summary.to_json())
    out = _outdir(args)
    with open(out / "theory.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["twoN", "B", "vQuad", "bernoulliTerm", "etaN", "secondOrder", "localC", "asymptoticPower"]
        )
        writer.writerow(summary.csv_row())
    return 0


def _cmd_sweep(args) -> int:
    config = load_sweep_config(args.config) if args.config else dict(_CONFIG_DEFAULTS)
    overrides = list(args.overrides)
    for flag in ("seed", "ny", "alpha", "parallelism"):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"{'n_y' if flag == 'ny' else flag}={value}")
    config = apply_overrides(config, overrides)
    specs = cells_from_config(config)
    results = sweep(
        specs,
        parallelism=int(config["parallelism"]),
        ci_method=str(config["ci_method"]),
        record_timing=not args.no_timing,
    )
    out = _outdir(args)
    write_results_csv(out / "results.csv", results)

    groups = defaultdict(list)
    for r in results:
        if r.error is None:
            groups[(r.spec.two_n, r.spec.p, r.spec.beta_t)].append(r)
    for (two_n, p, beta_t), members in sorted(groups.items()):
        name = f"power_2n{two_n}_p{p}_bT{beta_t:g}.svg"
        reference = members[0].spec.alpha if beta_t == 0.0 else None
        power_curve_svg(members, out / name, title=f"2n={two_n}, p={p}, effect={beta_t:g}", reference=reference)

    print(f"{'twoN':>6} {'B':>5} {'p':>3} {'betaT':>6} {'design':<20} {'rate':>8} {'ci':>19}")
    for r in results:
        s = r.spec
        if r.error:
            print(f"{s.two_n:>6} {s.B:>5} {s.p:>3} {s.beta_t:>6g} {s.design_kind.value:<20} ERROR: {r.error}")
        else:
            print(
                f"{s.two_n:>6} {s.B:>5} {s.p:>3} {s.beta_t:>6g} {s.design_kind.value:<20} "
                f"{r.rate:>8.4f} [{r.ci_low:.4f}, {r.ci_high:.4f}]"
            )
    if any(r.size_test_p is not None for r in results):
        report = bonferroni_size_report(results)
        report_path = out / "size_report.txt"
        report_path.write_text("\n".join(report.lines()) + "\n")
        for line in report.lines():
            print(line)
    if any(r.error for r in results):
        return 1
    return 0


def _cmd_report(args) -> int:
    with open(args.results, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"results CSV {args.results} is empty")
    total = len(rows)
    threshold = args.test_alpha / total
    null_rows = [row for row in rows if row.get("sizeTestP")]
    flagged = [row for row in null_rows if float(row["sizeTestP"]) < threshold]
    print(
        f"calibration: {len(null_rows)} null cells of {total} total, "
        f"Bonferroni threshold {threshold:.3g}"
    )
    if not flagged:
        print("no cells flagged")
    for row in flagged:
        key = (row["twoN"], row["B"], row["p"], row["betaT"], row["designKind"])
        print(f"FLAG {key}: rate={float(row['rate']):.4f} p={float(row['sizeTestP']):.3g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockpower",
        description="Blocking designs and power analysis for stratified tests of binary outcomes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_design = sub.add_parser("design", help="build a block structure and sample an assignment")
    p_design.add_argument("--covariates", required=True, help="covariate CSV (subject,x1..xp)")
    p_design.add_argument(
        "--design",
        required=True,
        choices=["quantile", "hierarchical", "pairwise", "bcrd"],
    )
    p_design.add_argument("--B", type=int, default=1, help="number of blocks")
    p_design.add_argument("--seed", type=int, default=0)
    p_design.add_argument("--out", default=".", help="output directory")
    p_design.set_defaults(func=_cmd_design)

    p_match = sub.add_parser("match", help="Mahalanobis distances and exact pairwise matching")
    p_match.add_argument("--covariates", required=True)
    p_match.add_argument("--greedy", action="store_true", help="greedy pairing (benchmarking only)")
    p_match.add_argument("--distances", action="store_true", help="also write the distance matrix")
    p_match.add_argument("--out", default=".")
    p_match.set_defaults(func=_cmd_match)

    p_test = sub.add_parser("test", help="compute the stratified test statistic")
    p_test.add_argument("--blocks", required=True)
    p_test.add_argument("--assignment", required=True)
    p_test.add_argument("--responses", required=True)
    p_test.add_argument("--alpha", type=float, default=0.05)
    p_test.add_argument("--out", default=".")
    p_test.set_defaults(func=_cmd_test)

    p_theory = sub.add_parser("theory", help="asymptotic power functionals")
    p_theory.add_argument("--population", required=True, help="population CSV (with pT, pC)")
    p_theory.add_argument("--blocks", required=True)
    p_theory.add_argument("--alpha", type=float, default=0.05)
    p_theory.add_argument("--out", default=".")
    p_theory.set_defaults(func=_cmd_theory)

    p_sweep = sub.add_parser("sweep", help="Monte Carlo sweep from a config file")
    p_sweep.add_argument("--config", help="YAML sweep config; defaults apply if omitted")
    p_sweep.add_argument("overrides", nargs="*", help="key=value config overrides")
    p_sweep.add_argument("--out", default=".")
    p_sweep.add_argument("--seed", type=int)
    p_sweep.add_argument("--ny", type=int)
    p_sweep.add_argument("--alpha", type=float)
    p_sweep.add_argument("--parallelism", type=int)
    p_sweep.add_argument(
        "--no-timing", action="store_true", help="write 0 wallclock (byte-stable reruns)"
    )
    p_sweep.set_defaults(func=_cmd_sweep)

    p_report = sub.add_parser("report", help="calibration report from a results CSV")
    p_report.add_argument("--results", required=True)
    p_report.add_argument("--test-alpha", type=float, default=0.05)
    p_report.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
