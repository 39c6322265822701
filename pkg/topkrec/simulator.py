"""
simulator.py: Monte-Carlo estimate of how often full-ranking metrics disagree with Top-K metrics

Each trial draws two random ranking lists whose positives sit within the top `rank_cap`
positions, evaluates both with the metrics module, and counts the metric pairs that
order the two lists in opposite directions.
"""

from collections import OrderedDict

import numpy as np

from .errors import ArgumentError
from .metrics import RankedEval, precision_recall_at_k, ndcg_at_k, ndcg, auc, llpauc, metric_key
from .nifty import logger, concurrent_map

class SyntheticRanking(object):
    """
    A ranking of `total_items` items where the positives hold the given ranks (1-based).
    """
    def __init__(self, total_items, positive_ranks, rank_cap=200):
        self.total_items = int(total_items)
        self.positive_ranks = np.sort(np.asarray(positive_ranks, dtype=np.int64))
        if not 1 <= len(self.positive_ranks) <= rank_cap:
            raise ArgumentError("A ranking needs between 1 and %i positives" % rank_cap)
        if len(np.unique(self.positive_ranks)) != len(self.positive_ranks):
            raise ArgumentError("Positive ranks must be distinct")
        if self.positive_ranks[0] < 1 or self.positive_ranks[-1] > min(rank_cap, self.total_items):
            raise ArgumentError("Positive ranks must lie in [1, %i]" % min(rank_cap, self.total_items))

    @property
    def m(self):
        return len(self.positive_ranks)

    def scores(self):
        """ Implied scores: the item at rank r scores N - r. """
        return (self.total_items - np.arange(1, self.total_items + 1)).astype(float)

    def positives(self):
        return self.positive_ranks - 1

def sample_ranking(rng, N, m, rank_cap=200):
    """ m distinct ranks drawn uniformly without replacement from 1..rank_cap. """
    if not (1 <= m <= rank_cap <= N):
        raise ArgumentError("Need 1 <= m <= rank_cap <= N (m=%s, rank_cap=%s, N=%s)" % (m, rank_cap, N))
    return SyntheticRanking(N, np.sort(rng.choice(rank_cap, size=m, replace=False) + 1), rank_cap)

def rank_auc(r):
    """ Closed-form AUC: positive i (1-based, ascending rank) beats N - m - (rank_i - i) negatives. """
    i = np.arange(1, r.m + 1)
    beaten = r.total_items - r.m - (r.positive_ranks - i)
    return float(np.sum(beaten)) / (r.m * (r.total_items - r.m))

def metrics_from_ranking(r, K, alpha=0.3, beta=0.01):
    """ Top-K and full-ranking metrics of a synthetic ranking, evaluated by the metrics module. """
    ev = RankedEval(r.scores(), r.positives())
    p, rec = precision_recall_at_k(ev, K)
    out = OrderedDict()
    out[metric_key('precision', K)] = float(p)
    out[metric_key('recall', K)] = float(rec)
    out[metric_key('ndcg', K)] = ndcg_at_k(ev, K)
    out['ndcg'] = ndcg(ev)
    out['auc'] = float(auc(ev))
    out['llpauc'] = float(llpauc(ev, alpha, beta))
    return out

def default_pairs(K):
    """ (comparison metric, Top-K metric) pairs. """
    return [(c, t) for c in ('auc', 'llpauc', 'ndcg', metric_key('ndcg', K))
            for t in (metric_key('precision', K), metric_key('recall', K))]

def compare(first, second, pair):
    """ 'tie', 'consistent' or 'inconsistent' for one metric pair on two lists. """
    c, t = pair
    dc = first[c] - second[c]
    dt = first[t] - second[t]
    if dc == 0 or dt == 0:
        return 'tie'
    return 'inconsistent' if (dc > 0) != (dt > 0) else 'consistent'

class InconsistencyReport(object):
    """ Inconsistency ratio per metric pair, over the trials where neither metric ties. """
    def __init__(self, pairs, config):
        self.pairs = list(pairs)
        self.config = config
        self.trials = 0
        self.inconsistent = OrderedDict((p, 0) for p in self.pairs)
        self.valid = OrderedDict((p, 0) for p in self.pairs)
        self.ties = OrderedDict((p, 0) for p in self.pairs)

    def add(self, first, second):
        self.trials += 1
        for p in self.pairs:
            outcome = compare(first, second, p)
            if outcome == 'tie':
                self.ties[p] += 1
            else:
                self.valid[p] += 1
                if outcome == 'inconsistent':
                    self.inconsistent[p] += 1

    def ratio(self, comparison, topk):
        p = (comparison, topk)
        return self.inconsistent[p] / self.valid[p] if self.valid[p] else 0.0

    def to_dict(self):
        c = self.config
        pairs = []
        for p in self.pairs:
            pairs.append(OrderedDict([('comparison', p[0]), ('topk', p[1]), ('ratio', self.ratio(*p)),
                                      ('inconsistent', self.inconsistent[p]), ('valid', self.valid[p]),
                                      ('ties', self.ties[p])]))
        config = OrderedDict([('trials', c.trials), ('total_items', c.total_items), ('m_range', list(c.m_range)),
                              ('rank_cap', c.rank_cap), ('K', c.K), ('llpauc_alpha', c.llpauc_alpha),
                              ('llpauc_beta', c.llpauc_beta), ('seed', c.seed)])
        return OrderedDict([('trials', self.trials), ('pairs', pairs), ('config', config)])

def simulate_trial(config, trial):
    """ Metrics of the two rankings of one trial; the stream depends only on (seed, trial). """
    rng = np.random.default_rng([config.seed, trial])
    lo, hi = config.m_range
    out = []
    for side in range(2):
        m = int(rng.integers(lo, hi + 1))
        r = sample_ranking(rng, config.total_items, m, config.rank_cap)
        out.append(metrics_from_ranking(r, config.K, config.llpauc_alpha, config.llpauc_beta))
    return out

def run_inconsistency(config, pairs=None, tsv=None):
    """
    Run config.trials independent trials and count, per metric pair, the trials where
    the two metrics strictly order the lists in opposite directions.

    Parameters
    ----------
    config : SimulationConfig
    pairs : list of (comparison, topk) metric names, optional
    tsv : str, optional
        Write the per-trial metric values of both lists to this file

    Returns
    -------
    InconsistencyReport
    """
    pairs = default_pairs(config.K) if pairs is None else pairs
    report = InconsistencyReport(pairs, config)
    results = concurrent_map(lambda t: simulate_trial(config, t), list(range(config.trials)), config.workers)
    for first, second in results:
        report.add(first, second)
    if tsv is not None:
        keys = list(results[0][0].keys())
        with open(tsv, 'w') as f:
            f.write('\t'.join(['trial'] + ['a_' + k for k in keys] + ['b_' + k for k in keys]) + '\n')
            for t, (first, second) in enumerate(results):
                f.write('\t'.join([str(t)] + ['%.10g' % first[k] for k in keys] + ['%.10g' % second[k] for k in keys]) + '\n')
    for p in pairs:
        logger.info("%-12s vs %-14s : %7.4f (%i valid, %i ties)\n" % (p[0], p[1], report.ratio(*p), report.valid[p], report.ties[p]))
    return report
