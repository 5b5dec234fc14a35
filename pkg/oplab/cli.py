import argparse
import json
import logging
import sys
from fractions import Fraction

from oplab import __version__
from oplab.config import ConfigError, Tolerances, load_config
from oplab.experiments import Experiment
from oplab.homotopy import StageError, certify_path, load_path
from oplab.index import FredholmError, default_probes, index_k_projection, nontriviality_probe, projection_index
from oplab.lattice_geometry import GeometryError
from oplab.opmat import OpmatError, export_heatmap, export_operator, import_operator
from oplab.operator_core import CircleFunction, OperatorError, TruncationWindow
from oplab.report import ReportError, emit_plots, ensure_dir, write_json

LOGGER = logging.getLogger(__name__)

# constants
VALIDATION_ERRORS = (ConfigError, OpmatError, GeometryError)
STAGE_ERRORS = (StageError, FredholmError, OperatorError, ReportError)
EXIT_OK, EXIT_VALIDATION, EXIT_STAGE = 0, 2, 3


def _print_json(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _window(radius:str) -> TruncationWindow:
    try:
        return TruncationWindow('Z', Fraction(radius))
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError([f'radius: {e}']) from e


def cmd_run(args) -> int:
    config = load_config(args.config, args.seed, args.out)
    manifest = Experiment(config).run()
    print(f'{config.experiment}: {len(manifest.files)} files written to {config.out_dir}')
    return EXIT_OK


def cmd_index(args) -> int:
    window = _window(args.radius)
    base, P = index_k_projection(args.k, window)
    result = projection_index(P, base, Tolerances(), args.method)
    _print_json({'k': args.k, 'radius': str(window.radius), 'index': result.to_json()})
    return EXIT_OK


def cmd_probe(args) -> int:
    window = _window(args.radius)
    base, P = index_k_projection(args.k, window)
    fns = [CircleFunction.monomial(n) for n in args.degree]
    report = nontriviality_probe(P, base, fns, default_probes(window))
    _print_json(report.to_json())
    return EXIT_OK


def cmd_certify(args) -> int:
    path = load_path(args.path)
    report = certify_path(path, samples=args.samples)
    if args.out:
        out = ensure_dir(args.out)
        write_json(report.to_json(), out / 'certificate.json')
        emit_plots(report, out, 'certificate')
    _print_json({'path': path.name, 'segments': path.kinds, 'certificate': report.to_json()})
    return EXIT_OK


def cmd_convert(args) -> int:
    A = import_operator(args.source)
    if args.png:
        export_heatmap(A, args.target)
    else:
        export_operator(A, args.target, 'base64' if args.base64 else 'binary')
    LOGGER.info(f'converted {args.source} to {args.target}')
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='opl', description='Numerical lab for operators that almost commute '
                                                             'with a fixed unitary on a lattice.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='warnings only')
    verbs = parser.add_subparsers(dest='verb', required=True)

    run = verbs.add_parser('run', help='run a configured experiment')
    run.add_argument('--config', required=True, help='JSON experiment configuration')
    run.add_argument('--seed', type=int, default=None, help='overrides the configured seed')
    run.add_argument('--out', default=None, help='overrides the configured output directory')
    run.set_defaults(func=cmd_run)

    index = verbs.add_parser('index', help='index of the index-k projection on a Z window')
    index.add_argument('--k', type=int, required=True)
    index.add_argument('--radius', required=True)
    index.add_argument('--method', default='auto',
                       choices=['auto', 'kernel_count', 'trace_formula', 'partial_permutation'])
    index.set_defaults(func=cmd_index)

    probe = verbs.add_parser('probe', help='non-triviality probe of the index-k projection')
    probe.add_argument('--k', type=int, required=True)
    probe.add_argument('--radius', required=True)
    probe.add_argument('--degree', type=int, nargs='+', default=[1], help='monomials z^n to probe with')
    probe.set_defaults(func=cmd_probe)

    certify = verbs.add_parser('certify', help='certify a saved path')
    certify.add_argument('path', help='directory written by a run')
    certify.add_argument('--samples', type=int, default=100)
    certify.add_argument('--out', default=None, help='write the report and plots here')
    certify.set_defaults(func=cmd_certify)

    convert = verbs.add_parser('convert', help='re-encode an opmat file or render it as PNG')
    convert.add_argument('source')
    convert.add_argument('target')
    encoding = convert.add_mutually_exclusive_group()
    encoding.add_argument('--png', action='store_true', help='greyscale heatmap of |entries|')
    encoding.add_argument('--base64', action='store_true', help='base64 payload')
    convert.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except VALIDATION_ERRORS as e:
        print(f'opl: {e}', file=sys.stderr)
        return EXIT_VALIDATION
    except STAGE_ERRORS as e:
        print(f'opl: {e}', file=sys.stderr)
        return EXIT_STAGE


if __name__ == '__main__':
    sys.exit(main())
