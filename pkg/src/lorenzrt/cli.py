"""Command-line runner: map checks, escape and return partitions, towers, correlations.

Every command is a pure function of its config (plus the --seed/--ensemble
overrides) and writes CSV files, a plain-text summary and a manifest into
the output directory.  Exit status: 0 all checks pass, 1 a scientific
check failed, 2 usage or configuration error.
"""
import argparse
import hashlib
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .config import RunConfig
from .driver import check_uniform_expansion, sample_omega
from .errors import ConfigError, WindowError
from .escape import (build_escape_partition, fit_escape_tail, sample_escape_times,
                     tail_series, verify_depth_size_bound, verify_escape_depth_relation)
from .induced import InducedSystem
from .maps import validate_local_holder, validate_singularity_order
from .measures import quenched_correlation
from .returns import (build_return_partition, check_aperiodicity, check_markov,
                      default_t_star, fit_return_tail, preimages_of_zero, sample_return_times)
from .tower import build_tower, check_tower_conditions

log = logging.getLogger("lorenzrt")

PASS, FAIL, USAGE = 0, 1, 2


class Run:
    """Shared state of one command: config, output directory, omega ensemble."""

    def __init__(self, cfg, command, quiet=False):
        self.cfg = cfg
        self.command = command
        self.quiet = quiet
        self.out = cfg.output.dir
        self.lines = []
        self.failed = False
        self.files = []
        os.makedirs(self.out, exist_ok=True)
        self._omegas = None

    # windows -------------------------------------------------------------
    def window(self):
        c = self.cfg
        t_cap = c.returns.t_star_cap
        explicit = (c.run.distortion_depth + 2) * (c.run.n_cap_explicit + t_cap)
        R = max(c.run.n_cap_escape, c.run.n_cap_return + t_cap, explicit, c.measure.n_max) + 10
        L = max(c.measure.burn_in + c.measure.n_max, c.run.height_cap + 1) + 10
        return L, R

    def omegas(self):
        if self._omegas is None:
            L, R = self.window()
            fam = self.cfg.family_range()
            self._omegas = [sample_omega(self.cfg.run.seed + i, L, R, fam)
                            for i in range(self.cfg.run.ensemble)]
            for i, om in enumerate(self._omegas):
                self.write(f"omega_{i}.csv", om.to_csv())
        return self._omegas

    def t_star(self):
        if self.cfg.returns.t_star is not None:
            return self.cfg.returns.t_star
        return default_t_star(self.omegas(), self.cfg.bar_delta(), self.cfg.returns.t_star_cap)

    # output --------------------------------------------------------------
    def write(self, name, text):
        path = os.path.join(self.out, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        if name not in self.files:
            self.files.append(name)

    def say(self, line, ok=True):
        self.lines.append(line)
        if not ok:
            self.failed = True

    def finish(self):
        summary = "\n".join(self.lines) + "\n"
        self.write("summary.txt", summary)
        manifest = [f"command = {self.command}", f"version = {__version__}", ""]
        manifest.append(self.cfg.to_text())
        for name in sorted(self.files):
            if name == "manifest.txt":
                continue
            with open(os.path.join(self.out, name), "rb") as fh:
                digest = hashlib.sha1(fh.read()).hexdigest()
            manifest.append(f"# {name} sha1={digest}")
        self.write("manifest.txt", "\n".join(manifest) + "\n")
        if not self.quiet:
            sys.stdout.write(summary)
        return FAIL if self.failed else PASS


def _csv(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return str(v)


def _spread(values):
    vals = np.array([v for v in values if np.isfinite(v) and v > 0])
    if not vals.size:
        return math.nan, math.nan
    med = float(np.median(vals))
    return med, float(max(vals.max() / med, med / vals.min()))


# commands -------------------------------------------------------------------

def cmd_check_map(run):
    cfg = run.cfg
    fam = cfg.family_range()
    lams = np.unique(np.linspace(fam.lambda_lo, fam.lambda_hi, 5))
    rows = []
    for lam in lams:
        p = fam.params(float(lam))
        viol = p.violations()
        so = validate_singularity_order(p, 1000)
        ho = validate_local_holder(p, 2000, seed=cfg.run.seed)
        ok = not viol and so.passed and ho.passed
        rows.append((float(lam), p.a, so.c_est, p.c_order, so.passed, ho.k_est, ho.bound,
                     ho.passed, "; ".join(viol)))
        run.say(f"lambda={lam:.4g}: order C={so.c_est:.4g} holder K={ho.k_est:.4g} "
                f"{'pass' if ok else 'FAIL'}" + (f" [{'; '.join(viol)}]" if viol else ""), ok)
    run.write("check_map.csv", _csv(["lambda", "a", "c_est", "c_order", "order_pass", "k_est",
                                     "k_bound", "holder_pass", "violations"], rows))
    rows = []
    rng = np.random.default_rng(cfg.run.seed)
    bar = cfg.bar_delta()
    for i, om in enumerate(run.omegas()):
        xs = rng.uniform(-0.5, 0.5, size=200)
        est = check_uniform_expansion(om, xs, 30)
        pre = preimages_of_zero(om, min(cfg.returns.t_star_cap, 12))
        dense = pre.max_gap <= bar
        rows.append((i, om.seed, est.ell, est.c_tilde, est.passed, pre.depth, pre.max_gap, dense))
        run.say(f"omega {i}: expansion ell={est.ell:.4g} C~={est.c_tilde:.4g} "
                f"{'pass' if est.passed else 'FAIL'}; preimages of 0 max gap "
                f"{pre.max_gap:.3g} {'<=' if dense else '>'} bar_delta {bar:.3g}",
                est.passed and dense)
    run.write("expansion.csv", _csv(["omega", "seed", "ell", "c_tilde", "pass", "depth",
                                     "max_gap", "dense"], rows))


def cmd_escape(run):
    cfg = run.cfg
    pc = cfg.partition_config()
    J0 = (-pc.delta, pc.delta)
    n_cap = cfg.run.n_cap_escape
    n_range = (5, min(40, n_cap))
    rows = []
    for i, om in enumerate(run.omegas()):
        sampled = sample_escape_times(om, J0, pc, n_cap, cfg.run.n_samples, seed=cfg.run.seed + i)
        part = build_escape_partition(om, J0, pc, n_cap=n_cap)
        run.write(f"escape_partition_{i}.csv", part.to_csv())
        ns = np.arange(0, n_cap + 1)
        exp_tail = tail_series(part.escape_times(), part.lengths(), part.residual_mass, ns)
        smp_tail = sampled.tail(ns) + sampled.censored
        run.write(f"escape_tail_{i}.csv", _csv(["n", "explicit", "sampled"],
                                               zip(ns, exp_tail, smp_tail)))
        fit = fit_escape_tail(sampled, n_range)
        ell = check_uniform_expansion(om, np.random.default_rng(i).uniform(-0.5, 0.5, 100),
                                      30).ell
        b1 = verify_depth_size_bound(part.elements)
        b2 = verify_escape_depth_relation(part.elements, ell) if ell > 0 else None
        capped = part.capped_mass / (2 * pc.delta)
        flagged = capped > cfg.returns.residual_threshold
        ok = fit.passed and b1.passed and (b2 is None or b2.passed) and not flagged
        rows.append((i, om.seed, fit.c, fit.rate, fit.r2, len(part.elements),
                     part.residual_mass / (2 * pc.delta), capped, b1.passed,
                     b2.passed if b2 else False))
        run.say(f"omega {i}: gamma={fit.rate:.4g} r2={fit.r2:.4g} elements={len(part.elements)} "
                f"unescaped={capped:.3g}" + (" FLAGGED" if flagged else "")
                + f" depth-size {'pass' if b1.passed else 'FAIL'}"
                + f" escape-depth {'pass' if b2 and b2.passed else 'FAIL'}", ok)
    run.write("escape_fit.csv", _csv(["omega", "seed", "c", "rate", "r2", "n_elements",
                                      "residual", "unescaped", "depth_size_pass",
                                      "escape_depth_pass"], rows))
    med, spread = _spread([r[3] for r in rows])
    run.say(f"ensemble: median gamma={med:.4g}, max ratio to median={spread:.3g}")


def cmd_returns(run):
    cfg = run.cfg
    pc = cfg.partition_config()
    frc = cfg.return_config(run.t_star())
    ds = frc.delta_star
    rows = []
    parts = []
    for i, om in enumerate(run.omegas()):
        sampled = sample_return_times(om, pc, frc, cfg.run.n_cap_return, cfg.run.n_samples,
                                      seed=cfg.run.seed + i)
        fit = fit_return_tail(sampled, (10, min(60, cfg.run.n_cap_return)))
        part = build_return_partition(om, pc, frc, n_cap=cfg.run.n_cap_explicit)
        parts.append(part)
        run.write(f"return_partition_{i}.csv", part.to_csv())
        mk = check_markov(part)
        unreturned = (sampled.open_weight + sampled.censored) / (2 * ds)
        flagged = unreturned > cfg.returns.residual_threshold
        rows.append((i, om.seed, fit.c, fit.rate, fit.r2, unreturned, len(part.elements),
                     mk.max_endpoint_error, part.stats["beta_min"], part.stats["search_failures"]))
        run.say(f"omega {i}: b={fit.rate:.4g} r2={fit.r2:.4g} unreturned at "
                f"{cfg.run.n_cap_return}={unreturned:.3g}"
                + (" FLAGGED (above residual threshold)" if flagged else "")
                + f"; markov err={mk.max_endpoint_error:.2g} "
                f"{'pass' if mk.passed else 'FAIL'}", fit.passed and mk.passed)
    run.write("return_fit.csv", _csv(["omega", "seed", "c", "b", "r2", "unreturned",
                                      "n_elements", "markov_error", "beta_min",
                                      "search_failures"], rows))
    ap = check_aperiodicity(parts)
    run.say(f"aperiodicity: gcd={ap.gcd} over taus {ap.taus[:8]}", ap.passed)
    med, spread = _spread([r[3] for r in rows])
    run.say(f"ensemble: t_star={frc.t_star} median b={med:.4g}, max ratio to median={spread:.3g}")


def cmd_tower(run):
    cfg = run.cfg
    pc = cfg.partition_config()
    frc = cfg.return_config(run.t_star())
    rows = []
    systems = [InducedSystem(om, pc, frc, n_cap=cfg.run.n_cap_explicit) for om in run.omegas()]
    bases = [s.partition(0) for s in systems]
    for i, (om, system) in enumerate(zip(run.omegas(), systems)):
        sampled = sample_return_times(om, pc, frc, cfg.run.n_cap_return, cfg.run.n_samples,
                                      seed=cfg.run.seed + i)
        tower = build_tower(system, cfg.run.height_cap)
        run.write(f"tower_{i}.csv", tower.to_csv())
        rep = check_tower_conditions(system, sampled, max_depth=cfg.run.distortion_depth,
                                     seed=cfg.run.seed + i, aperiodicity_partitions=bases)
        for name, c in rep.conditions.items():
            rows.append((i, name, c.passed, " ".join(f"{k}={_cell(v)}" for k, v in
                                                     c.measured.items()), c.note))
        run.say(f"omega {i}: tower mass={tower.total_mass:.4g} (levels<{tower.height_cap}, "
                f"truncated {tower.truncated_mass:.3g})", True)
        for line in rep.summary().splitlines():
            run.say("  " + line, True)
        if not rep.passed:
            run.failed = True
    run.write("conditions.csv", _csv(["omega", "condition", "pass", "measured", "note"], rows))


def cmd_correlations(run):
    cfg = run.cfg
    m = cfg.measure
    rows = []
    for i, om in enumerate(run.omegas()):
        for mode in ("forward", "pullback"):
            series = quenched_correlation(om, m.phi, m.psi, m.n_max, m.bins, m.burn_in, mode)
            run.write(f"correlation_{i}_{mode}.csv", series.to_csv())
            f = series.fit
            ok = f.passed
            rows.append((i, mode, f.c, f.rate, f.r2, f.n_range[1], series.noise_floor))
            run.say(f"omega {i} {mode}: b={f.rate:.4g} r2={f.r2:.4g} fitted to "
                    f"n={f.n_range[1]} (noise floor {series.noise_floor:.3g})"
                    + (f" {f.message}" if f.message else ""), ok)
    run.write("correlation_fit.csv", _csv(["omega", "mode", "c", "b", "r2", "n_last",
                                           "noise_floor"], rows))
    for mode in ("forward", "pullback"):
        med, spread = _spread([r[3] for r in rows if r[1] == mode])
        run.say(f"ensemble {mode}: median b={med:.4g}, max ratio to median={spread:.3g}")


HELP = {
    "check-map": "family conditions, uniform expansion and density of preimages of 0",
    "escape": "escape partitions of Delta_0, escape-time tails, depth bounds",
    "returns": "full-return partitions of Delta*, return tails, Markov check, aperiodicity",
    "tower": "random tower and the conditions C1-C6",
    "correlations": "forward and pullback quenched correlations with exponential fits",
}

COMMANDS = {
    "check-map": cmd_check_map,
    "escape": cmd_escape,
    "returns": cmd_returns,
    "tower": cmd_tower,
    "correlations": cmd_correlations,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key=value run configuration")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--ensemble", type=int, metavar="K", help="number of sampled omegas")
    common.add_argument("--quiet", action="store_true", help="do not print the summary")
    parser = argparse.ArgumentParser(prog="lorenzrt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    sub.add_parser("default-config", help="print the default configuration")
    return parser


def load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace("run", seed=args.seed)
    if args.ensemble is not None:
        cfg = cfg.replace("run", ensemble=args.ensemble)
    if args.out is not None:
        cfg = cfg.replace("output", dir=args.out)
    return cfg.validate()


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "default-config":
        sys.stdout.write(RunConfig().to_text())
        return PASS
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except FileNotFoundError as exc:
        sys.stderr.write(f"lorenzrt: config file not found: {exc.filename}\n")
        return USAGE
    except (ConfigError, ValueError) as exc:
        sys.stderr.write(f"lorenzrt: bad configuration: {exc}\n")
        return USAGE
    run = Run(cfg, args.command, quiet=args.quiet)
    try:
        COMMANDS[args.command](run)
    except WindowError as exc:
        sys.stderr.write(f"lorenzrt: {exc}\n")
        return USAGE
    except ConfigError as exc:
        sys.stderr.write(f"lorenzrt: bad configuration: {exc}\n")
        return USAGE
    return run.finish()


if __name__ == "__main__":
    sys.exit(main())
