#
# Command line of the laboratory
#
# Copyright (C) 2026  The depolab developers.  All rights reserved.
#
# This library is free software; you can redistribute it and/or
# modify it under the terms of the GNU Lesser General Public
# License as published by the Free Software Foundation; either
# version 2.1 of the License, or (at your option) any later version.
#
# This library is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the GNU
# Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public
# License along with this library; if not, write to the Free Software
# Foundation, Inc., 51 Franklin Street, Fifth Floor, Boston, MA  02110-1301
# USA
#
import argparse
import json
import logging
import os
import sys

from depolab.config import RunConfig
from depolab.constants import OUTPUT_DIR_VARIABLE, CONFIG_FILE_NAME, \
    METRICS_FILE_NAME, SUMMARY_FILE_NAME, RATIO_SWEEP_FILE_NAME, \
    KL_VERIFY_FILE_NAME, KTEST_SWEEP_FILE_NAME, GRADCHECK_FILE_NAME, \
    CHECKPOINT_FILE_NAME
from depolab.diagnostics import DiagnosticsError, RATIO_COLUMNS, \
    KL_COLUMNS, KTEST_COLUMNS, DEFAULT_MAGNITUDES, \
    ratio_mismatch_experiment, random_kl_configs, verify_vmf_kl, \
    gradcheck_all, ktest_sweep
from depolab.error import DepolabError, UsageError, ConfigError, \
    EXIT_SUCCESS, EXIT_FAILURE, error_mapper
from depolab.namespace import get_stream
from depolab.signal import Signal, CsvSink, write_csv
from depolab.tasks import create_task
from depolab.trainer import SFT_COLUMNS, RL_COLUMNS, run_sft, run_rl, \
    evaluate, initial_checkpoint, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

__all__ = [
    "build_parser",
    "resolve_config",
    "dispatch",
    "main",
]

# Configurations of the KL verification.
KL_CONFIG_COUNT = 20

# Samples per configuration of the KL verification.
KL_DEFAULT_SAMPLES = 10 ** 6

# Canvas budgets of the K_test sweep.
KTEST_DEFAULT_VALUES = "0,1,2,4,8,16,32"


class _ArgumentParser(argparse.ArgumentParser):
    """An argument parser that raises usage errors."""

    def error(self, message):
        raise UsageError(message)


def _common_options():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument(
        "--config", metavar="PATH",
        help="a file with config lines 'key = value'"
    )
    parser.add_argument(
        "--seed", type=int, metavar="SEED",
        help="the master seed of all random streams"
    )
    parser.add_argument(
        "--out", metavar="DIR",
        help="the output directory"
    )
    parser.add_argument(
        "--from-checkpoint", action="append", default=[], metavar="PATH",
        dest="checkpoints",
        help="a checkpoint to start from, repeatable for ktest"
    )
    parser.add_argument(
        "--task", metavar="NAME",
        help="the name of the task"
    )
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        dest="overrides",
        help="override one config field, repeatable"
    )
    parser.add_argument(
        "--log-level", default="INFO", metavar="LEVEL",
        help="the level of the log messages"
    )
    return parser


def build_parser():
    """Create the parser of the command line.

    :return: an instance of ArgumentParser
    """
    common = _common_options()
    parser = _ArgumentParser(
        prog="depolab",
        description="Train and verify hybrid latent-reasoning policies."
    )
    subparsers = parser.add_subparsers(
        dest="command", metavar="COMMAND", parser_class=_ArgumentParser
    )
    subparsers.required = True

    subparsers.add_parser(
        "sft", parents=[common],
        help="run the supervised stage"
    )
    subparsers.add_parser(
        "rl", parents=[common],
        help="run the reinforcement stage from a checkpoint"
    )

    command = subparsers.add_parser(
        "eval", parents=[common],
        help="evaluate a checkpoint with greedy decoding"
    )
    command.add_argument(
        "--k-test", type=int, metavar="K",
        help="the canvas budget of the evaluation"
    )

    subparsers.add_parser(
        "diag-ratio", parents=[common],
        help="measure importance ratios under parameter perturbations"
    )

    command = subparsers.add_parser(
        "verify-vmf", parents=[common],
        help="compare the closed-form vMF KL with Monte-Carlo estimates"
    )
    command.add_argument(
        "--samples", type=int, default=KL_DEFAULT_SAMPLES, metavar="N",
        help="the number of samples per configuration"
    )

    subparsers.add_parser(
        "gradcheck", parents=[common],
        help="check the gradients of every objective"
    )

    command = subparsers.add_parser(
        "ktest", parents=[common],
        help="evaluate checkpoints under several canvas budgets"
    )
    command.add_argument(
        "--k-test", metavar="K,K,...", default=KTEST_DEFAULT_VALUES,
        help="a comma-separated list of canvas budgets"
    )

    return parser


def _split_override(text):
    if "=" not in text:
        raise UsageError("Invalid override '{}'.".format(text))

    name, value = text.split("=", 1)
    return name.strip(), value


def resolve_config(args, environ=None):
    """Resolve the config of a command.

    The defaults are updated by the config file, the environment,
    the flags and the overrides, in this order.

    :param args: parsed arguments
    :param environ: a map of environment variables or None
    :return: a validated instance of RunConfig
    :raise ConfigError: if the config is invalid
    """
    environ = os.environ if environ is None else environ
    config = RunConfig()

    if args.config:
        try:
            with open(args.config, "r") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(
                "Cannot read the config '{}': {}".format(
                    args.config, e.strerror
                )
            ) from None

        config.update_lines(text)

    if environ.get(OUTPUT_DIR_VARIABLE):
        config.out_dir = environ[OUTPUT_DIR_VARIABLE]

    if args.seed is not None:
        config.seed = args.seed

    if args.out is not None:
        config.out_dir = args.out

    if args.task is not None:
        config.task = args.task

    for override in args.overrides:
        config.update_text(*_split_override(override))

    config.validate()
    return config


def _output_path(config, name):
    return os.path.join(config.out_dir, name)


def _prepare_output(config):
    os.makedirs(config.out_dir, exist_ok=True)

    with open(_output_path(config, CONFIG_FILE_NAME), "w") as f:
        f.write(RunConfig.to_text(config))


def _single_checkpoint(args, config, required=True):
    if len(args.checkpoints) > 1:
        raise UsageError(
            "Command '{}' takes one checkpoint.".format(args.command)
        )

    if not args.checkpoints:
        if required:
            raise UsageError(
                "Command '{}' requires --from-checkpoint.".format(
                    args.command
                )
            )

        return None

    return load_checkpoint(args.checkpoints[0], dims=config)


def _save_stage(config, checkpoint):
    path = _output_path(
        config, CHECKPOINT_FILE_NAME.format(checkpoint.stage.lower())
    )
    save_checkpoint(checkpoint, path)
    return path


def _metrics_signal(config, columns):
    sink = CsvSink(_output_path(config, METRICS_FILE_NAME), columns)
    sink.open()
    metrics = Signal()
    metrics.connect(sink)
    return metrics, sink


def _run_sft(args, config):
    checkpoint = _single_checkpoint(args, config, required=False)
    task = create_task(config)
    metrics, sink = _metrics_signal(config, SFT_COLUMNS)

    with sink:
        result = run_sft(
            task, config.sft_epochs, config, config.seed,
            checkpoint=checkpoint, metrics=metrics
        )

    print(_save_stage(config, result))


def _run_rl(args, config):
    checkpoint = _single_checkpoint(args, config)
    task = create_task(config)
    metrics, sink = _metrics_signal(config, RL_COLUMNS)

    with sink:
        result = run_rl(
            checkpoint, task, config.rl_steps, config, config.seed,
            metrics=metrics
        )

    print(_save_stage(config, result))


def _run_eval(args, config):
    checkpoint = _single_checkpoint(args, config)
    summary = evaluate(
        checkpoint.params, create_task(config), config,
        config.eval_episodes, config.seed, canvas_budget=args.k_test
    )
    summary["stage"] = checkpoint.stage
    summary["seed"] = config.seed
    text = json.dumps(summary, sort_keys=True, indent=1) + "\n"

    with open(_output_path(config, SUMMARY_FILE_NAME), "w") as f:
        f.write(text)

    print(text, end="")


def _run_ratio(args, config):
    checkpoint = _single_checkpoint(args, config, required=False)

    if checkpoint is None:
        checkpoint = initial_checkpoint(config)

    task = create_task(config)
    result = ratio_mismatch_experiment(
        checkpoint.params, task, DEFAULT_MAGNITUDES, config.diag_trials,
        config, config.seed
    )

    # Repeat the sweep at the concentration of the training.
    if config.kappa not in result.kappas():
        result = result.join(ratio_mismatch_experiment(
            checkpoint.params, task, DEFAULT_MAGNITUDES, config.diag_trials,
            config, config.seed, kappa=config.kappa
        ))

    write_csv(
        _output_path(config, RATIO_SWEEP_FILE_NAME), RATIO_COLUMNS,
        result.to_rows()
    )


def _run_verify(args, config):
    configs = random_kl_configs(
        KL_CONFIG_COUNT, get_stream(config.seed, "verify", "configs")
    )
    report = verify_vmf_kl(configs, args.samples, config.seed)
    write_csv(
        _output_path(config, KL_VERIFY_FILE_NAME), KL_COLUMNS,
        report.to_rows()
    )
    print("{}/{} PASS".format(report.passed, len(report.checks)))

    if not report.all_passed:
        raise DiagnosticsError("The closed-form KL failed some checks.")


def _run_gradcheck(args, config):
    report = gradcheck_all(config.seed)
    text = report.format()

    with open(_output_path(config, GRADCHECK_FILE_NAME), "w") as f:
        f.write(text)

    print(text, end="")

    if not report.passed:
        raise DiagnosticsError("The gradient checks failed.")


def _parse_budgets(text):
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError("Invalid canvas budgets '{}'.".format(text)) \
            from None


def _run_ktest(args, config):
    if not args.checkpoints:
        raise UsageError("Command 'ktest' requires --from-checkpoint.")

    checkpoints = [
        (os.path.basename(path), load_checkpoint(path, dims=config).params)
        for path in args.checkpoints
    ]
    rows = ktest_sweep(
        checkpoints, create_task(config), _parse_budgets(args.k_test),
        config.eval_episodes, config, config.seed
    )
    write_csv(
        _output_path(config, KTEST_SWEEP_FILE_NAME), KTEST_COLUMNS, rows
    )


COMMANDS = {
    "sft": _run_sft,
    "rl": _run_rl,
    "eval": _run_eval,
    "diag-ratio": _run_ratio,
    "verify-vmf": _run_verify,
    "gradcheck": _run_gradcheck,
    "ktest": _run_ktest,
}


def dispatch(argv=None, environ=None):
    """Run one command of the command line.

    Failures are reported with a one-line reason and mapped
    to an exit status by the error mapper.

    :param argv: a list of arguments or None
    :param environ: a map of environment variables or None
    :return: an exit status
    """
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=args.log_level.upper(),
            format="%(asctime)s %(levelname)s %(name)s: %(message)s"
        )
        config = resolve_config(args, environ)
        _prepare_output(config)
        log.info("Running '%s' in %s.", args.command, config.out_dir)
        COMMANDS[args.command](args, config)
    except DepolabError as e:
        print("depolab: {}".format(e), file=sys.stderr)
        return error_mapper.get_exit_status(type(e))
    except (OSError, ValueError) as e:
        print("depolab: {}".format(e), file=sys.stderr)
        return EXIT_FAILURE

    return EXIT_SUCCESS


def main():
    """Run the command line and exit."""
    sys.exit(dispatch())
