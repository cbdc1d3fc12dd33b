import argparse
import json
import logging
import sys

from mfsocial import options
from mfsocial.exceptions import ConfigurationError
from mfsocial.exceptions import Error
from mfsocial.exceptions import ValidationError
from mfsocial.pipeline import StageFailed

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_USAGE = 64

# Sub-command -> configuration method.
COMMANDS = {
    'validate': 'validate',
    'oracle': 'oracle',
    'learn': 'learn',
    'meanfield': 'meanfield_paths',
    'cost': 'cost_of_oracle_policy',
}
PRINTED = ('validate', 'cost')


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def dispatch(conf, command):
    """Run the method of `conf` behind the sub-command `command`."""
    try:
        method = getattr(conf, COMMANDS[command])
    except (KeyError, AttributeError):
        raise ConfigurationError("unknown command %r" % command)
    return method()


def exit_code(error):
    if isinstance(error, StageFailed):
        error = error.cause
    if isinstance(error, ValidationError):
        return EXIT_VALIDATION
    return EXIT_NUMERICAL


def unconverged_loops(document):
    """Loops of a run document that exhausted their iteration budget."""
    convergence = document.get('convergence') or {}
    return sorted(loop for loop, entry in convergence.items()
                  if not entry['converged'])


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None,
                        help="base seed of the random streams")
    common.add_argument('--out-dir', dest='output_dir', default=None,
                        help="directory for the outputs")
    common.add_argument('--format', dest='output_format', default=None,
                        choices=('csv', 'json'),
                        help="format of the tabular outputs")
    common.add_argument('-v', '--verbose', action='store_true',
                        help="log every iteration")

    parser = _ArgumentParser(
        prog='mfsocial',
        description="Model-free mean-field social control design.")
    subparsers = parser.add_subparsers(dest='command', metavar='command',
                                       parser_class=_ArgumentParser)
    subparsers.required = True
    for name, text in (
            ('validate', "check a configuration"),
            ('oracle', "model-based solutions"),
            ('learn', "run the model-free design"),
            ('meanfield', "mean-field paths of the learned policy"),
            ('cost', "social cost of the model-based policy")):
        sub = subparsers.add_parser(name, parents=[common], help=text)
        sub.add_argument('config', help="JSON configuration file")
    subparsers.add_parser('reproduce-paper', parents=[common],
                          help="run the built-in benchmark")
    return parser


def cli_main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return e.code

    logging.basicConfig(format='%(name)s: %(levelname)s: %(message)s',
                        level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        if args.command == 'reproduce-paper':
            conf, command = options.get('benchmark'), 'learn'
        else:
            conf = options.BaseExperimentConfiguration.load(args.config)
            command = args.command
        conf = conf.override(seed=args.seed, output_dir=args.output_dir,
                             output_format=args.output_format)
        document = dispatch(conf, command)
    except Error as e:
        logger.error("%s", e)
        return exit_code(e)
    except OSError as e:
        logger.error("cannot write outputs: %s", e)
        return EXIT_VALIDATION

    if command in PRINTED:
        print(json.dumps(document, indent=2, sort_keys=True))
    logger.info("outputs in %s", conf.get_output_dir())
    unconverged = unconverged_loops(document)
    if unconverged:
        logger.error("no convergence within max_iter: %s",
                     ", ".join(unconverged))
        return EXIT_NUMERICAL
    return EXIT_OK


def main():
    sys.exit(cli_main())
