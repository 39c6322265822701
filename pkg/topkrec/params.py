"""
params.py: Run parameters, the flat configuration file and command line options

All parameter containers take keyword arguments so that the library can be driven
from another script as easily as from the command line.
"""

import argparse
import os
from collections import OrderedDict

import numpy as np

from .errors import ConfigError
from .losses import LossSpec, FAMILIES
from .nifty import logger, printcool_dictionary

def _check(cond, message):
    if not cond:
        raise ConfigError(message)

class SplitConfig(object):
    """ Filtering and splitting options for the dataset module. """
    def __init__(self, **kwargs):
        # Split procedure: "iid" (per-user random) or "temporal" (global timestamp cut)
        self.mode = kwargs.get('mode', 'iid')
        # Share of each user's positives (iid) or of all interactions (temporal) kept out of test
        self.train_fraction = kwargs.get('train_fraction', 0.8)
        # Share of the train pool moved to validation
        self.validation_fraction = kwargs.get('validation_fraction', 0.1)
        # Interactions rated below this are dropped; None keeps everything
        self.min_rating = kwargs.get('min_rating', 3.0)
        # k-core threshold applied to users and items until a fixpoint
        self.core = kwargs.get('core', 10)
        # Seed for the per-user shuffles and the validation draw
        self.seed = kwargs.get('seed', 0)
        _check(self.mode in ('iid', 'temporal'), "mode must be iid or temporal, got %r" % self.mode)
        _check(0 < self.train_fraction < 1, "train_fraction must lie in (0,1)")
        _check(0 < self.validation_fraction < 1, "validation_fraction must lie in (0,1)")
        _check(self.core >= 0, "core must be non-negative")
        if self.min_rating is not None:
            _check(np.isfinite(self.min_rating), "min_rating must be finite")

class TrainConfig(object):
    """ Options of the alternating trainer. """
    def __init__(self, **kwargs):
        # Loss family, temperature, quantile position K and negative count
        self.loss = kwargs.get('loss', LossSpec())
        # Maximum number of epochs
        self.epochs = kwargs.get('epochs', 500)
        # Number of (user, positive item) examples per mini-batch
        self.batch_size = kwargs.get('batch_size', 1024)
        # Adam learning rate and decoupled weight decay of the embeddings
        self.lr = kwargs.get('lr', 1e-2)
        self.weight_decay = kwargs.get('weight_decay', 0.0)
        # Plain SGD learning rate of the per-user thresholds
        self.threshold_lr = kwargs.get('threshold_lr', 1e-3)
        # Cutoffs reported on validation every epoch
        self.eval_cutoffs = list(kwargs.get('eval_cutoffs', [20]))
        # Early stopping: epochs without improvement of eval_metric on validation
        self.patience = kwargs.get('patience', 25)
        self.eval_metric = kwargs.get('eval_metric', 'precision@20')
        # LLPAUC constraint levels used in the reports
        self.llpauc_alpha = kwargs.get('llpauc_alpha', 0.3)
        self.llpauc_beta = kwargs.get('llpauc_beta', 0.1)
        # Seed of the shuffles and negative-sampling streams
        self.seed = kwargs.get('seed', 0)
        # Threads used for per-user evaluation
        self.workers = kwargs.get('workers', 1)
        _check(self.epochs >= 1, "epochs must be at least 1")
        _check(self.batch_size >= 1, "batch_size must be at least 1")
        _check(self.patience >= 1, "patience must be at least 1")
        _check(self.lr >= 0 and self.weight_decay >= 0, "lr and weight_decay must be non-negative")
        _check(self.threshold_lr >= 0, "threshold_lr must be non-negative")
        _check(len(self.eval_cutoffs) > 0 and min(self.eval_cutoffs) >= 1, "eval_cutoffs must be positive")
        _check(self.workers >= 1, "workers must be at least 1")
        name, _, k = self.eval_metric.partition('@')
        _check(name in ('precision', 'recall', 'ndcg', 'mrr', 'auc', 'llpauc'), "Unknown eval_metric %r" % self.eval_metric)
        if k:
            _check(k.isdigit() and int(k) in self.eval_cutoffs,
                   "eval_metric %s needs its cutoff in eval_cutoffs" % self.eval_metric)

    def printInfo(self):
        logger.info("Loss family %s with tau = %g, K = %i, %i negatives per example\n"
                    % (self.loss.family, self.loss.tau, self.loss.K, self.loss.negatives_per_example()))
        logger.info("Adam lr = %g, weight decay = %g; threshold SGD lr = %g\n" % (self.lr, self.weight_decay, self.threshold_lr))
        logger.info("Up to %i epochs of batch size %i; early stopping on validation %s with patience %i\n"
                    % (self.epochs, self.batch_size, self.eval_metric, self.patience))

class SimulationConfig(object):
    """ Options of the metric-inconsistency simulation. """
    def __init__(self, **kwargs):
        # Number of independent trials, each comparing two random ranking lists
        self.trials = kwargs.get('trials', 10000)
        # Total number of items in every list
        self.total_items = kwargs.get('total_items', 2000)
        # Inclusive range of the positive count m, drawn uniformly per list
        self.m_range = tuple(kwargs.get('m_range', (5, 50)))
        # Positives occupy ranks in 1..rank_cap
        self.rank_cap = kwargs.get('rank_cap', 200)
        # Cutoff of the Top-K metrics
        self.K = kwargs.get('K', 20)
        # LLPAUC levels of the comparison metric
        self.llpauc_alpha = kwargs.get('llpauc_alpha', 0.3)
        self.llpauc_beta = kwargs.get('llpauc_beta', 0.01)
        self.seed = kwargs.get('seed', 0)
        self.workers = kwargs.get('workers', 1)
        _check(self.trials >= 1, "trials must be at least 1")
        _check(len(self.m_range) == 2 and 1 <= self.m_range[0] <= self.m_range[1] <= self.rank_cap,
               "m_range must satisfy 1 <= lo <= hi <= %i" % self.rank_cap)
        _check(self.rank_cap <= self.total_items, "rank_cap cannot exceed total_items")
        _check(self.K >= 1, "K must be at least 1")
        _check(0 < self.llpauc_alpha <= 1 and 0 < self.llpauc_beta <= 1, "LLPAUC levels must lie in (0,1]")

class BoundCheckConfig(object):
    """ Options of the Top-K surrogate bound check. """
    def __init__(self, **kwargs):
        # The epsilon of the log(0) := log(epsilon) convention
        self.epsilon_log = kwargs.get('epsilon_log', 1e-6)
        self.trials = kwargs.get('trials', 1000)
        self.K = kwargs.get('K', 10)
        self.num_items = kwargs.get('num_items', 100)
        # Number of temperatures in the tightness sweep
        self.tau_grid = kwargs.get('tau_grid', 5)
        self.seed = kwargs.get('seed', 0)
        _check(0 < self.epsilon_log < 1, "epsilon_log must lie in (0,1); %g leaves no valid temperature" % self.epsilon_log)
        _check(1 <= self.K < self.num_items, "K must lie in [1, num_items)")
        _check(self.trials >= 1, "trials must be at least 1")

class DroCheckConfig(object):
    """ Options of the KL-robust identity check. """
    def __init__(self, **kwargs):
        self.trials = kwargs.get('trials', 1000)
        # Negatives per random instance of the algebraic identity
        self.num_negatives = kwargs.get('num_negatives', 8)
        self.tau_range = tuple(kwargs.get('tau_range', (0.05, 1.0)))
        self.tolerance = kwargs.get('tolerance', 1e-9)
        # KL radius, instance count and direction count of the worst-case search
        self.eta = kwargs.get('eta', 0.1)
        self.sup_instances = kwargs.get('sup_instances', 20)
        self.sup_negatives = kwargs.get('sup_negatives', 3)
        self.directions = kwargs.get('directions', 2000)
        self.sup_tolerance = kwargs.get('sup_tolerance', 1e-3)
        self.seed = kwargs.get('seed', 0)
        _check(0 < self.tau_range[0] <= self.tau_range[1], "tau_range must be positive and ordered")
        _check(self.eta > 0, "eta must be positive")
        _check(self.sup_negatives in (2, 3), "sup_negatives must be 2 or 3")

class UnbiasednessConfig(object):
    """ Options of the sampled quantile objective check. """
    def __init__(self, **kwargs):
        self.num_items = kwargs.get('num_items', 500)
        self.num_positives = kwargs.get('num_positives', 20)
        self.K = kwargs.get('K', 20)
        self.num_negatives = kwargs.get('num_negatives', 32)
        self.draws = kwargs.get('draws', 10000)
        # Pass when the Monte-Carlo mean lies within this many standard errors of the full objective
        self.max_stderr = kwargs.get('max_stderr', 3.0)
        # Relative error level reported alongside; it does not decide the check
        self.rel_tolerance = kwargs.get('rel_tolerance', 0.01)
        self.seed = kwargs.get('seed', 0)
        _check(self.num_positives + self.num_negatives <= self.num_items, "Too many positives and negatives")
        _check(1 <= self.K < self.num_items, "K must lie in [1, num_items)")

class GradientCheckConfig(object):
    """ Options of the finite-difference gradient check. """
    def __init__(self, **kwargs):
        self.instances = kwargs.get('instances', 100)
        self.num_negatives = kwargs.get('num_negatives', 5)
        self.tau = kwargs.get('tau', 0.2)
        self.K = kwargs.get('K', 20)
        self.h = kwargs.get('h', 1e-5)
        self.rtol = kwargs.get('rtol', 1e-4)
        self.seed = kwargs.get('seed', 0)

#=====================================#
#|   Flat key/value configuration    |#
#=====================================#
def _intlist(s):
    if isinstance(s, (list, tuple)): return [int(x) for x in s]
    return [int(x) for x in str(s).replace(',', ' ').split()]

def _optfloat(s):
    if s is None or str(s).lower() in ('none', 'null', ''): return None
    return float(s)

# Key -> (type, default, description)
CONFIG_SCHEMA = OrderedDict([
    # Dataset
    ('mode', (str, 'iid', 'Split mode: iid or temporal')),
    ('train_fraction', (float, 0.8, 'Fraction of positives outside the test split')),
    ('validation_fraction', (float, 0.1, 'Fraction of the train pool used for validation')),
    ('min_rating', (_optfloat, 3.0, 'Drop interactions rated below this; none keeps all')),
    ('core', (int, 10, 'k-core threshold')),
    # Shared
    ('seed', (int, 0, 'Random seed of every stochastic step')),
    ('workers', (int, 1, 'Worker threads for evaluation and simulation')),
    # Model and loss
    ('dim', (int, 64, 'Embedding dimension')),
    ('loss', (str, 'talos', 'Loss family: %s' % ', '.join(FAMILIES))),
    ('tau', (float, 0.1, 'Temperature')),
    ('K', (int, 20, 'Top-K position of the learned threshold and the simulation cutoff')),
    ('num_negatives', (int, 1024, 'Sampled negatives per example')),
    ('epsilon_log', (float, 1e-6, 'log(0) := log(epsilon) in the bound check')),
    # Training
    ('epochs', (int, 500, 'Maximum number of epochs')),
    ('batch_size', (int, 1024, 'Examples per mini-batch')),
    ('lr', (float, 1e-2, 'Adam learning rate; tuning grid 1e-1, 1e-2, 1e-3')),
    ('weight_decay', (float, 0.0, 'Decoupled weight decay')),
    ('threshold_lr', (float, 1e-3, 'SGD learning rate of the thresholds')),
    ('patience', (int, 25, 'Early stopping patience in epochs')),
    ('eval_cutoffs', (_intlist, [20], 'Comma-separated metric cutoffs')),
    ('eval_metric', (str, 'precision@20', 'Validation metric for early stopping')),
    ('llpauc_alpha', (float, 0.3, 'LLPAUC positive level')),
    ('llpauc_beta', (float, 0.1, 'LLPAUC negative level')),
    # Simulation
    ('trials', (int, 10000, 'Simulation trials')),
    ('total_items', (int, 2000, 'Items per simulated ranking list')),
    ('m_range', (_intlist, [5, 50], 'Inclusive range of simulated positive counts')),
    ('rank_cap', (int, 200, 'Largest rank of a simulated positive')),
    ('sim_llpauc_beta', (float, 0.01, 'LLPAUC negative level of the simulation')),
    # Verification
    ('verify_trials', (int, 1000, 'Random instances of the bound and identity checks')),
    ('verify_K', (int, 10, 'Cutoff of the bound check')),
    ('verify_items', (int, 100, 'Items per bound-check instance')),
    ('dro_eta', (float, 0.1, 'KL radius of the worst-case search')),
    ('dro_directions', (int, 2000, 'Simplex directions of the worst-case search')),
    ('unbiased_draws', (int, 10000, 'Monte-Carlo draws of the sampled quantile objective')),
])

def read_config(path):
    """
    Read a flat configuration file into a dict of typed values.

    One "key value" pair per line; blank lines and text after '#' are ignored.
    Unknown keys raise ConfigError naming the key.
    """
    values = OrderedDict()
    if path is None:
        return values
    if not os.path.exists(path):
        raise ConfigError("Configuration file %s does not exist" % path)
    with open(path, encoding='utf-8') as f:
        for lineno, line in enumerate(f, start=1):
            s = line.split('#', 1)[0].strip()
            if not s:
                continue
            fields = s.split(None, 1)
            if len(fields) != 2:
                raise ConfigError("%s line %i: expected 'key value', got %r" % (path, lineno, s))
            values[fields[0]] = fields[1].strip()
    return cast_values(values)

def cast_values(values):
    """ Validate keys against CONFIG_SCHEMA and cast values to their schema types. """
    out = OrderedDict()
    for key, val in values.items():
        if key not in CONFIG_SCHEMA:
            raise ConfigError("Unknown configuration key: %s" % key)
        typ = CONFIG_SCHEMA[key][0]
        try:
            out[key] = typ(val)
        except (TypeError, ValueError):
            raise ConfigError("Configuration key %s: cannot interpret %r" % (key, val))
    return out

class RunConfig(object):
    """
    Flat configuration shared by all subcommands.
    Precedence: schema defaults < configuration file < --set pairs < dedicated flags.
    """
    def __init__(self, values=None):
        self.values = OrderedDict((k, v[1]) for k, v in CONFIG_SCHEMA.items())
        if values:
            self.values.update(cast_values(values))

    @classmethod
    def from_args(cls, args):
        values = read_config(getattr(args, 'config', None))
        pairs = getattr(args, 'set', None) or []
        if len(pairs) % 2 != 0:
            raise ConfigError('Please pass an even number of options to --set')
        for i in range(len(pairs) // 2):
            values.update(cast_values({pairs[2*i]: pairs[2*i+1]}))
        for flag in ('seed', 'workers'):
            if getattr(args, flag, None) is not None:
                values[flag] = getattr(args, flag)
        return cls(values)

    def __getitem__(self, key):
        return self.values[key]

    def non_default(self):
        return OrderedDict((k, v) for k, v in self.values.items() if v != CONFIG_SCHEMA[k][1])

    def printInfo(self):
        options = self.non_default()
        if options:
            printcool_dictionary(options, title="Non-default options")

    def split_config(self):
        v = self.values
        return SplitConfig(mode=v['mode'], train_fraction=v['train_fraction'],
                           validation_fraction=v['validation_fraction'], min_rating=v['min_rating'],
                           core=v['core'], seed=v['seed'])

    def loss_spec(self):
        v = self.values
        return LossSpec(family=v['loss'], tau=v['tau'], K=v['K'], num_negatives=v['num_negatives'],
                        epsilon_log=v['epsilon_log'])

    def train_config(self):
        v = self.values
        return TrainConfig(loss=self.loss_spec(), epochs=v['epochs'], batch_size=v['batch_size'], lr=v['lr'],
                           weight_decay=v['weight_decay'], threshold_lr=v['threshold_lr'],
                           eval_cutoffs=v['eval_cutoffs'], patience=v['patience'], eval_metric=v['eval_metric'],
                           llpauc_alpha=v['llpauc_alpha'], llpauc_beta=v['llpauc_beta'], seed=v['seed'],
                           workers=v['workers'])

    def simulation_config(self):
        v = self.values
        return SimulationConfig(trials=v['trials'], total_items=v['total_items'], m_range=v['m_range'],
                                rank_cap=v['rank_cap'], K=v['K'], llpauc_alpha=v['llpauc_alpha'],
                                llpauc_beta=v['sim_llpauc_beta'], seed=v['seed'], workers=v['workers'])

    def bound_config(self):
        v = self.values
        return BoundCheckConfig(epsilon_log=v['epsilon_log'], trials=v['verify_trials'], K=v['verify_K'],
                                num_items=v['verify_items'], seed=v['seed'])

    def dro_config(self):
        v = self.values
        return DroCheckConfig(trials=v['verify_trials'], eta=v['dro_eta'], directions=v['dro_directions'], seed=v['seed'])

    def unbiasedness_config(self):
        v = self.values
        return UnbiasednessConfig(draws=v['unbiased_draws'], seed=v['seed'])

    def gradient_config(self):
        return GradientCheckConfig(seed=self.values['seed'])

#=====================================#
#|       Command line options        |#
#=====================================#
def parse_args(*args):

    """ Read user input. Designed to be called by cli.main() passing in sys.argv[1:] """

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None, help='Flat "key value" configuration file.')
    common.add_argument('--set', type=str, nargs='+', default=[], metavar='KEY VALUE',
                        help='Override configuration keys as key/value pairs, e.g. "--set tau 0.2 lr 1e-3".')
    common.add_argument('--seed', type=int, default=None, help='Random seed; overrides the configuration file.')
    common.add_argument('--workers', type=int, default=None, help='Number of worker threads.')
    common.add_argument('--logINI', type=str, dest='logIni', help='ini file for logging')

    parser = argparse.ArgumentParser(prog='topkrec', formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                                     description='Top-K recommendation training, evaluation and verification.')
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    p = sub.add_parser('prepare', parents=[common], help='Filter an interaction log and write a split file.')
    p.add_argument('data_path', type=str, help='Interaction log: user item [rating] [timestamp] per line')
    p.add_argument('out_path', type=str, help='Split file to write')

    p = sub.add_parser('train', parents=[common], help='Train a factor model on a split file.')
    p.add_argument('split_path', type=str, help='Split file written by "prepare"')
    p.add_argument('out_dir', type=str, help='Folder for checkpoint.npz, train_log.jsonl and train.log')

    p = sub.add_parser('eval', parents=[common], help='Evaluate a checkpoint on a split.')
    p.add_argument('checkpoint', type=str, help='Checkpoint written by "train"')
    p.add_argument('split_path', type=str, help='Split file written by "prepare"')
    p.add_argument('--cutoffs', type=str, default=None, help='Comma-separated cutoffs; default eval_cutoffs')
    p.add_argument('--split', type=str, default='test', choices=['validation', 'test'], help='Split to evaluate')

    p = sub.add_parser('quantile-error', parents=[common], help='Compare learned thresholds with exact quantiles.')
    p.add_argument('checkpoint', type=str, help='Checkpoint written by "train"')
    p.add_argument('split_path', type=str, help='Split file written by "prepare"')
    p.add_argument('--samples', type=int, default=None,
                   help='Also report the error of a Monte-Carlo quantile estimate from this many sampled items')

    p = sub.add_parser('simulate', parents=[common], help='Metric-inconsistency simulation.')
    p.add_argument('--tsv', type=str, default=None, help='Write per-trial metric tuples to this TSV file')

    p = sub.add_parser('verify', parents=[common], help='Numerical checks of the loss properties.')
    p.add_argument('--check', type=str, default=None, choices=['theorem1', 'dro', 'unbiasedness', 'gradients'],
                   help='Run only this check')

    args = parser.parse_args(*args)
    return args
