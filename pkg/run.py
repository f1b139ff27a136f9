#!/usr/bin/env python3
# Lower Snell Toolkit - Command Line
# ============================================================================

"""
Command line for the Lower Snell Toolkit.

Usage:
    python run.py gen --steps 3 --out model.json        # binomial drift-ambiguity model
    python run.py gen --seed 7 --depth 3 --out r.json   # seeded random instance
    python run.py gen --gap-seed 0 --out gap.json       # searched family with a minimax gap
    python run.py price --model model.json              # robust value, tau-down, envelope
    python run.py verify --model model.json             # full invariant suite
    python run.py enumerate --model model.json          # tau x Q value table (CSV)
    python run.py paste --model m.json --q1 0 --q2 1 --sigma 1
    python run.py refine --max-power 6                  # refinement study (CSV)
"""

import argparse
import copy
import itertools
import logging
import logging.config
import sys
from pathlib import Path

# Add current directory to Python path
sys.path.insert(0, str(Path(__file__).parent))

from config import (
    Config, EXIT_BUDGET, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_VERIFICATION_FAILED, LOGGING_CONFIG,
    LOGS_DIR, PAYOFF_TYPES, default_budget,
)
from filtered_tree import EnumerationBudgetError, ModelValidationError, StoppingTime
from invariant_suite import failed_checks, run_suite
from lower_snell import lower_snell, upper_snell
from measure_algebra import RectangularFamily, contains, count_members, members, pasting_formula_check
from models import (
    binomial_kappa, load_model, model_document, model_hash, random_instance, refine_study, search_nonstable_gap,
)
from oracle import direct_lower_snell, direct_maximin, value_table
from reports import dump_json, with_provenance
from snell_classic import min_optimal_time, snell_envelope

logger = logging.getLogger(__name__)


def status(message: str):
    """Human-readable status line; stdout is reserved for JSON and CSV."""
    print(message, file=sys.stderr)


def setup_logging(level: str):
    """Create the logs directory and configure handlers from LOGGING_CONFIG."""
    LOGS_DIR.mkdir(parents=True, exist_ok=True)
    config = copy.deepcopy(LOGGING_CONFIG)
    config['root']['level'] = level.upper()
    logging.config.dictConfig(config)


def positive_int(text: str) -> int:
    """argparse type for counts and sizes."""
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def parse_sigma(text: str, tree) -> StoppingTime:
    """``--sigma 2`` is the deterministic time 2; ``--sigma 1,5,6`` lists region nodes."""
    try:
        parts = [int(p) for p in text.split(',') if p.strip()]
    except ValueError:
        raise ModelValidationError(f"--sigma must be a depth or a comma-separated node list, got {text!r}",
                                   field='sigma')
    if ',' not in text and len(parts) == 1:
        return StoppingTime.at_depth(tree, parts[0])
    return StoppingTime(tree, parts)


def nth_member(family, index: int, budget: int):
    """Member index in canonical member order."""
    if not 0 <= index < count_members(family):
        raise ModelValidationError(f"measure id {index} outside 0..{count_members(family) - 1}",
                                   field='measure')
    return next(itertools.islice(members(family, budget), index, None))


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------

def cmd_gen(args, budget: int, exact: bool) -> int:
    """Write a binomial, random or gap-search model as JSON."""
    origin = None
    if args.gap_seed is not None:
        found = search_nonstable_gap(args.gap_seed, args.attempts, exact)
        if found is None:
            raise ModelValidationError(f"no minimax gap in {args.attempts} attempts (seed {args.gap_seed})",
                                       field='gap_seed')
        model, gap, attempt = found
        origin = {'generator': 'models.search_nonstable_gap', 'seed': args.gap_seed,
                  'attempt': attempt, 'gap': gap}
        status(f"✅ Gap instance (seed {args.gap_seed}, attempt {attempt}): gap {gap:.6g}")
    elif args.seed is not None:
        model = random_instance(args.seed, args.depth, args.branching, args.kernels, exact)
        status(f"✅ Random instance (seed {args.seed}): {len(model.tree)} nodes")
    else:
        model = binomial_kappa(args.steps, args.s0, args.u, args.d, args.plo, args.phi, args.payoff,
                               args.strike, exact=exact, grid_points=args.grid_points)
        status(f"✅ Binomial model: {args.steps} steps, {len(model.tree)} nodes")
    document = model_document(model)
    if origin is not None:
        document['origin'] = origin
    text = dump_json(document)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + '\n', encoding='utf-8')
        status(f"📁 Written to {out}")
    else:
        print(text)
    return EXIT_OK


def cmd_price(args, budget: int, exact: bool) -> int:
    """Robust value and tau-down, or the classical value under one member."""
    model = load_model(args.model, exact)
    tree, family, H = model
    initial = StoppingTime.initial(tree)
    if args.measure is not None:
        Q = nth_member(family, args.measure, budget)
        U = snell_envelope(Q, H)
        document = {
            'measure_id': args.measure,
            'root_value': U[tree.root],
            'tau_region': list(min_optimal_time(Q, H, initial, U).nodes),
            'envelope_by_node': {str(n): v for n, v in U.values.items()},
        }
    elif isinstance(family, RectangularFamily):
        result = lower_snell(family, H)
        document = result.to_json()
        document['upper_root_value'] = upper_snell(family, H)[tree.root]
    else:
        # explicit families need not be stable; report both orders of inf and sup
        document = {
            'inf_sup': direct_lower_snell(family, H, initial, budget)[tree.root],
            'sup_inf': direct_maximin(family, H, initial, budget)[tree.root],
        }
    print(dump_json(with_provenance(document, model_hash(model))))
    status("✅ Priced")
    return EXIT_OK


def cmd_verify(args, budget: int, exact: bool) -> int:
    """Run the invariant suite on a model file or a seeded instance."""
    if args.model:
        model = load_model(args.model, exact)
    elif args.seed is not None:
        model = random_instance(args.seed, args.depth, args.branching, args.kernels, exact)
    else:
        status("❌ verify needs --model or --seed")
        return EXIT_USAGE
    document = run_suite(model, budget, seed=args.suite_seed)
    print(dump_json(document))
    summary = document['summary']
    if document['passed']:
        status(f"✅ All checks passed ({summary['passed']} passed, {summary['skipped']} skipped)")
        return EXIT_OK
    status(f"❌ Failed checks: {', '.join(failed_checks(document))}")
    return EXIT_VERIFICATION_FAILED


def cmd_enumerate(args, budget: int, exact: bool) -> int:
    """Value table over stopping times and members as CSV."""
    model = load_model(args.model, exact)
    table = value_table(model.family, model.payoff, budget)
    table.to_csv(sys.stdout, index=False, lineterminator='\n')
    status(f"✅ {len(table)} rows")
    return EXIT_OK


def cmd_paste(args, budget: int, exact: bool) -> int:
    """Paste two members at sigma and check the pasting formula."""
    model = load_model(args.model, exact)
    Q1 = nth_member(model.family, args.q1, budget)
    Q2 = nth_member(model.family, args.q2, budget)
    sigma = parse_sigma(args.sigma, model.tree)
    report = pasting_formula_check(Q1, Q2, sigma)
    document = {
        'sigma': sigma,
        'pasted_kernels': report.details['pasted_kernels'],
        'in_family': contains(model.family, report.details['pasted_kernels']),
        'formula_check': report.to_dict(),
    }
    print(dump_json(with_provenance(document, model_hash(model))))
    if report.passed:
        status(f"✅ Pasting formula holds on {report.details['events_checked']} events")
        return EXIT_OK
    status("❌ Pasting formula mismatch")
    return EXIT_VERIFICATION_FAILED


def cmd_refine(args, budget: int, exact: bool) -> int:
    """Refinement study on the recombining lattice as CSV."""
    table = refine_study(args.max_power, args.s0, args.u, args.d, args.plo, args.phi, args.payoff, args.strike)
    table.to_csv(sys.stdout, index=False, lineterminator='\n')
    status(f"✅ Refinement study over {len(table)} lattices")
    return EXIT_OK


COMMANDS = {
    'gen': cmd_gen,
    'price': cmd_price,
    'verify': cmd_verify,
    'enumerate': cmd_enumerate,
    'paste': cmd_paste,
    'refine': cmd_refine,
}


def add_market_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--s0', type=float, default=100.0, help='Initial price')
    parser.add_argument('--u', type=float, default=1.2, help='Up factor')
    parser.add_argument('--d', type=float, default=0.8, help='Down factor')
    parser.add_argument('--plo', type=float, default=0.4, help='Lowest up-probability')
    parser.add_argument('--phi', type=float, default=0.6, help='Highest up-probability')
    parser.add_argument('--payoff', choices=[p for p in PAYOFF_TYPES if p != 'custom'], default='put')
    parser.add_argument('--strike', type=float, default=100.0, help='Strike price')


def add_random_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--seed', type=int, help='Seed for a random instance')
    parser.add_argument('--depth', type=positive_int, default=3)
    parser.add_argument('--branching', type=positive_int, default=2)
    parser.add_argument('--kernels', type=positive_int, default=2, help='Kernels per node (at most)')


def build_parser() -> argparse.ArgumentParser:
    """Global flags plus one subparser per command."""
    parser = argparse.ArgumentParser(
        description="Lower Snell Toolkit - robust optimal stopping on finite event trees",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__.split('Usage:', 1)[1],
    )
    parser.add_argument('--budget', type=positive_int, help='Enumeration budget (default: SNELL_BUDGET or 10^6)')
    parser.add_argument('--exact', action='store_true', help='Rational arithmetic throughout')
    parser.add_argument('--log-level', default=Config.LOG_LEVEL,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], type=str.upper)
    parser.add_argument('--workers', type=positive_int, help='Processes for oracle enumerations')
    subparsers = parser.add_subparsers(dest='command', required=True)

    gen = subparsers.add_parser('gen', help='Generate a model file')
    gen.add_argument('--steps', type=positive_int, default=3)
    add_market_arguments(gen)
    add_random_arguments(gen)
    gen.add_argument('--grid-points', type=positive_int, help='Interval grid instead of endpoints')
    gen.add_argument('--gap-seed', type=int, help='Seed for the search for a non-stable family with a minimax gap')
    gen.add_argument('--attempts', type=positive_int, default=500, help='Attempts for --gap-seed')
    gen.add_argument('--out', help='Output path (default: stdout)')

    price = subparsers.add_parser('price', help='Lower Snell envelope and tau-down')
    price.add_argument('--model', required=True)
    price.add_argument('--measure', type=int, help='Classical price under the given member id')

    verify = subparsers.add_parser('verify', help='Run the invariant suite')
    verify.add_argument('--model')
    add_random_arguments(verify)
    verify.add_argument('--suite-seed', type=int, default=0, help='Seed for the randomized draws')

    enumerate_ = subparsers.add_parser('enumerate', help='Value table over stopping times and members')
    enumerate_.add_argument('--model', required=True)

    paste = subparsers.add_parser('paste', help='Paste two members at a stopping time')
    paste.add_argument('--model', required=True)
    paste.add_argument('--q1', type=int, required=True)
    paste.add_argument('--q2', type=int, required=True)
    paste.add_argument('--sigma', required=True, help='A depth, or a comma-separated list of region nodes')

    refine = subparsers.add_parser('refine', help='Refinement study on the recombining lattice')
    refine.add_argument('--max-power', type=positive_int, required=True)
    add_market_arguments(refine)
    return parser


def main(argv=None) -> int:
    """Main entry point."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    setup_logging(args.log_level)
    try:
        budget = args.budget if args.budget is not None else default_budget()
    except ValueError as e:
        status(f"❌ {e}")
        return EXIT_USAGE
    if args.workers is not None:
        Config.WORKERS = args.workers
    exact = args.exact or Config.EXACT_ARITHMETIC

    logger.info(f"Running {args.command} (budget {budget}, exact {exact})")
    try:
        return COMMANDS[args.command](args, budget, exact)
    except EnumerationBudgetError as e:
        logger.error(str(e))
        status(f"❌ {e}")
        return EXIT_BUDGET
    except (ModelValidationError, FileNotFoundError, ValueError) as e:
        logger.error(str(e))
        status(f"❌ {e}")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
