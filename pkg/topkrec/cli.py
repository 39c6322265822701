"""
cli.py: The topkrec command line program

Subcommands: prepare, train, eval, quantile-error, simulate, verify.
JSON reports are written to standard output and progress to standard error.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import json
import logging.config
import os
import sys
import time
import traceback
from collections import OrderedDict

import numpy as np

from . import dataset as ds
from .errors import Error, ArgumentError, ConfigError, VerificationError
from .info import print_logo
from .model import init, save_checkpoint, load_checkpoint
from .nifty import logger, bak, config_path
from .params import RunConfig, parse_args
from .quantile import ThresholdTable, estimation_error_report
from .simulator import run_inconsistency
from .trainer import Trainer, evaluate
from .verify import run_checks

DATA_DIR_ENV = 'TOPKREC_DATA_DIR'

def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError("Cannot serialize %r" % type(obj))

def write_json(obj, stream=None):
    stream = sys.stdout if stream is None else stream
    stream.write(json.dumps(obj, indent=2, default=_json_default) + "\n")
    stream.flush()

def setup_logging(args):
    """
    Configure the package logger from an ini file. "train" also writes <out_dir>/train.log,
    backing up an existing one; everything else logs to standard error only.
    """
    logfilename = None
    if args.command == 'train':
        if not os.path.isdir(args.out_dir):
            os.makedirs(args.out_dir)
        logfilename = os.path.join(args.out_dir, 'train.log')
        bak(logfilename)
    if args.logIni is not None:
        logIni = args.logIni
    else:
        logIni = config_path('log.ini' if logfilename is not None else 'logStream.ini')
    defaults = {'logfilename': logfilename if logfilename is not None else os.devnull}
    logging.config.fileConfig(logIni, defaults=defaults, disable_existing_loggers=False)
    return logfilename

def resolve_data_path(path):
    """ Relative paths that do not exist are looked up in $TOPKREC_DATA_DIR. """
    if os.path.exists(path) or os.path.isabs(path):
        return path
    data_dir = os.environ.get(DATA_DIR_ENV)
    if data_dir and os.path.exists(os.path.join(data_dir, path)):
        return os.path.join(data_dir, path)
    return path

#=========================#
#|      Subcommands      |#
#=========================#
def cmd_prepare(args, config):
    data_path = resolve_data_path(args.data_path)
    if not os.path.exists(data_path):
        raise FileNotFoundError("Interaction file %s does not exist" % data_path)
    split_config = config.split_config()
    dataset = ds.split(ds.load(data_path, split_config), split_config)
    ds.save(dataset, args.out_path)
    summary = dataset.summary()
    logger.info("Wrote %s: %s\n" % (args.out_path, ', '.join('%s=%s' % kv for kv in summary.items())))
    summary['path'] = args.out_path
    return summary

def _load_split(path):
    if not os.path.exists(path):
        raise FileNotFoundError("Split file %s does not exist" % path)
    return ds.load_split(path)

def cmd_train(args, config):
    dataset = _load_split(args.split_path)
    tconfig = config.train_config()
    spec = tconfig.loss
    model = init(dataset.num_users, dataset.num_items, d=config['dim'], seed=config['seed'])
    thresholds = None
    if spec.uses_quantile:
        thresholds = ThresholdTable(dataset.num_users, dataset.num_items, spec.K, tconfig.threshold_lr)
    t0 = time.time()
    trainer = Trainer(dataset, model, thresholds, tconfig)
    trainer_model, log = trainer.train()
    metadata = OrderedDict([('loss', spec.as_dict()), ('seed', tconfig.seed), ('dim', model.dim),
                            ('eval_cutoffs', tconfig.eval_cutoffs), ('llpauc_alpha', tconfig.llpauc_alpha),
                            ('llpauc_beta', tconfig.llpauc_beta), ('epochs_run', len(log)),
                            ('split_path', os.path.abspath(args.split_path)), ('threshold_update', 'per_batch')])
    ckpt = os.path.join(args.out_dir, 'checkpoint.npz')
    save_checkpoint(ckpt, trainer_model, trainer.adam, thresholds, metadata)
    log_path = os.path.join(args.out_dir, 'train_log.jsonl')
    log.to_jsonl(log_path)
    logger.info("Training finished in %.1f s; wrote %s and %s\n" % (time.time() - t0, ckpt, log_path))
    return OrderedDict([('checkpoint', ckpt), ('train_log', log_path), ('epochs_run', len(log)),
                        ('final_loss', log.losses[-1])])

def _cutoffs(args, config):
    if getattr(args, 'cutoffs', None):
        try:
            return [int(x) for x in args.cutoffs.split(',')]
        except ValueError:
            raise ConfigError("--cutoffs expects comma-separated integers, got %r" % args.cutoffs)
    return list(config['eval_cutoffs'])

def cmd_eval(args, config):
    model, state, thresholds, metadata = load_checkpoint(args.checkpoint)
    dataset = _load_split(args.split_path)
    if (dataset.num_users, dataset.num_items) != (model.num_users, model.num_items):
        raise ArgumentError("Checkpoint has %i users and %i items but the split has %i and %i"
                            % (model.num_users, model.num_items, dataset.num_users, dataset.num_items))
    cutoffs = _cutoffs(args, config)
    report = evaluate(model, dataset, args.split, cutoffs, metadata.get('llpauc_alpha', config['llpauc_alpha']),
                      metadata.get('llpauc_beta', config['llpauc_beta']), config['workers'],
                      metadata=OrderedDict([('loss', metadata.get('loss', {}).get('family')),
                                            ('tau', metadata.get('loss', {}).get('tau')),
                                            ('seed', metadata.get('seed'))]))
    logger.info("%s\n" % report)
    return report.to_dict()

def cmd_quantile_error(args, config):
    model, state, thresholds, metadata = load_checkpoint(args.checkpoint)
    if thresholds is None:
        raise ArgumentError("Checkpoint %s holds no thresholds; its loss family does not learn them" % args.checkpoint)
    dataset = _load_split(args.split_path)
    report = estimation_error_report(model, thresholds, dataset, num_samples=args.samples, seed=config['seed'])
    logger.info("Mean |beta - exact quantile| = %.6f over %i users\n" % (report['mean_abs_error'], report['num_users']))
    return report

def cmd_simulate(args, config):
    return run_inconsistency(config.simulation_config(), tsv=args.tsv).to_dict()

def cmd_verify(args, config):
    results = run_checks(config, [args.check] if args.check else None)
    out = OrderedDict([('passed', all(r.passed for r in results)), ('checks', [r.to_dict() for r in results])])
    if not out['passed']:
        write_json(out)
        raise VerificationError("Failed checks: %s" % ', '.join(r.name for r in results if not r.passed), results)
    return out

COMMANDS = OrderedDict([('prepare', cmd_prepare), ('train', cmd_train), ('eval', cmd_eval),
                        ('quantile-error', cmd_quantile_error), ('simulate', cmd_simulate), ('verify', cmd_verify)])

def run_command(args, argv):
    """ Configure logging, build the configuration and run one parsed subcommand. """
    try:
        setup_logging(args)
        if args.command == 'train':
            print_logo(logger)
        logger.info('topkrec called with the following command line:\n')
        logger.info(' '.join(['topkrec'] + list(argv)) + '\n')
        config = RunConfig.from_args(args)
        config.printInfo()
    except (ConfigError, ArgumentError, FileNotFoundError) as e:
        logger.error("Configuration error: %s\n" % e)
        return 2
    try:
        result = COMMANDS[args.command](args, config)
    except (ConfigError, FileNotFoundError) as e:
        logger.error("%s: %s\n" % (type(e).__name__, e))
        return 2
    except VerificationError as e:
        logger.error("VerificationError: %s\n" % e)
        return 1
    except Error:
        logger.error("%s\n" % traceback.format_exc())
        return 1
    write_json(result)
    return 0

def run(argv):
    """
    Run one subcommand and return its exit code.
    The root logger handlers in place before the call are restored afterwards.
    """
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return e.code
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    try:
        return run_command(args, argv)
    finally:
        for handler in root.handlers:
            if handler not in handlers:
                handler.close()
        root.handlers[:] = handlers
        root.setLevel(level)

def main():
    # Read user input (look in params.py for the full list of options)
    sys.exit(run(sys.argv[1:]))

if __name__ == "__main__":
    main()
