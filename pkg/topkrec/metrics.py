"""
metrics.py: Ranking metrics over one user's scored candidate list

The rank of a test positive i is pi_i = #{j : s_j >= s_i} over the candidates, so
tied items share the largest rank of their tie group. Candidates scored -inf
(masked training positives) never outrank anything.
"""

from collections import OrderedDict

import numpy as np

from .errors import ArgumentError

CUTOFF_METRICS = ('precision', 'recall', 'ndcg', 'mrr')
FULL_METRICS = ('auc', 'llpauc')

def ceil_count(fraction, n):
    """ ceil(fraction * n), robust to binary rounding (0.3 * 10 is 3), at least 1. """
    return max(1, int(np.ceil(fraction * n - 1e-9)))

def metric_key(name, K=None):
    return name if K is None else "%s@%i" % (name, K)

class RankedEval(object):
    """
    Scores of one user's candidates together with its test positives.

    Parameters
    ----------
    scores : array-like
        Score of every item; excluded candidates carry -inf
    positives : array-like of int
        Indices of the test positives
    """
    def __init__(self, scores, positives):
        self.scores = np.asarray(scores, dtype=float)
        self.positives = np.unique(np.asarray(positives, dtype=np.int64))
        candidate = np.isfinite(self.scores)
        is_pos = np.zeros(len(self.scores), dtype=bool)
        is_pos[self.positives] = True
        self.pos_scores = self.scores[self.positives]
        self.neg_scores = self.scores[candidate & ~is_pos]
        self._sorted = np.sort(self.scores[candidate])
        self._ranks = None

    @property
    def num_positives(self):
        return len(self.positives)

    @property
    def num_negatives(self):
        return len(self.neg_scores)

    @property
    def num_candidates(self):
        return len(self._sorted)

    def ranks(self):
        """ pi for every test positive, in the order of self.positives. """
        if self._ranks is None:
            self._ranks = len(self._sorted) - np.searchsorted(self._sorted, self.pos_scores, side='left')
        return self._ranks

def _need_positives(ev):
    if ev.num_positives < 1:
        raise ArgumentError("User has no test positives")

def ranks(ev):
    return ev.ranks()

def precision_recall_at_k(ev, K):
    """ (hits/K, hits/|P|) where hits counts test positives with pi <= K. """
    _need_positives(ev)
    if K < 1:
        raise ArgumentError("K must be at least 1")
    hits = np.sum(ev.ranks() <= K)
    return hits / K, hits / ev.num_positives

def ndcg_at_k(ev, K):
    """ Binary-relevance NDCG truncated at K. """
    _need_positives(ev)
    if K < 1:
        raise ArgumentError("K must be at least 1")
    r = ev.ranks()
    dcg = np.sum(1.0 / np.log2(1.0 + r[r <= K]))
    idcg = np.sum(1.0 / np.log2(1.0 + np.arange(1, min(ev.num_positives, K) + 1)))
    return float(dcg / idcg)

def ndcg(ev):
    """ NDCG over the whole candidate list. """
    return ndcg_at_k(ev, max(ev.num_candidates, 1))

def mrr_at_k(ev, K):
    """ Reciprocal rank of the best-ranked test positive, or 0 when it falls below K. """
    _need_positives(ev)
    if K < 1:
        raise ArgumentError("K must be at least 1")
    best = np.min(ev.ranks())
    return 1.0 / best if best <= K else 0.0

def _pair_count(pos, neg):
    """ Number of pairs with pos >= neg. """
    neg_sorted = np.sort(neg)
    return int(np.sum(np.searchsorted(neg_sorted, pos, side='right')))

def auc(ev):
    """ Fraction of (positive, negative) pairs with s_pos >= s_neg. """
    _need_positives(ev)
    if ev.num_negatives < 1:
        raise ArgumentError("User has no negative candidates")
    return _pair_count(ev.pos_scores, ev.neg_scores) / (ev.num_positives * ev.num_negatives)

def llpauc(ev, alpha, beta_frac):
    """
    Lower-left partial AUC: pairs with s_pos >= s_neg where the positive is among the
    top ceil(alpha |P|) positives and the negative among the top ceil(beta |N|) negatives,
    normalized by |P||N|.
    """
    _need_positives(ev)
    if ev.num_negatives < 1:
        raise ArgumentError("User has no negative candidates")
    if not (0 < alpha <= 1 and 0 < beta_frac <= 1):
        raise ArgumentError("alpha and beta must lie in (0,1]")
    pos, neg = ev.pos_scores, ev.neg_scores
    eta_alpha = -np.partition(-pos, ceil_count(alpha, len(pos)) - 1)[ceil_count(alpha, len(pos)) - 1]
    eta_beta = -np.partition(-neg, ceil_count(beta_frac, len(neg)) - 1)[ceil_count(beta_frac, len(neg)) - 1]
    count = _pair_count(pos[pos >= eta_alpha], neg[neg >= eta_beta])
    return count / (len(pos) * len(neg))

def evaluate_user(ev, cutoffs, alpha=0.3, beta_frac=0.1):
    """ All report metrics of one user; full-list metrics are None without negatives. """
    out = OrderedDict()
    for K in cutoffs:
        p, r = precision_recall_at_k(ev, K)
        out[metric_key('precision', K)] = float(p)
        out[metric_key('recall', K)] = float(r)
        out[metric_key('ndcg', K)] = ndcg_at_k(ev, K)
        out[metric_key('mrr', K)] = float(mrr_at_k(ev, K))
    if ev.num_negatives:
        out['auc'] = float(auc(ev))
        out['llpauc'] = float(llpauc(ev, alpha, beta_frac))
    else:
        out['auc'] = out['llpauc'] = None
    return out

def report_keys(cutoffs):
    return [metric_key(name, K) for K in cutoffs for name in CUTOFF_METRICS] + list(FULL_METRICS)

class MetricReport(object):
    """
    User-averaged metrics of one evaluation pass.

    Attributes
    ----------
    values : OrderedDict
        "precision@20" style keys for every cutoff, plus "auc" and "llpauc"
    num_users : int
        Users with at least one positive in the evaluated split
    metadata : OrderedDict
        Loss family, tau, seed, epoch, split
    """
    def __init__(self, values, num_users, metadata=None):
        self.values = OrderedDict(values)
        self.num_users = int(num_users)
        self.metadata = OrderedDict(metadata if metadata is not None else [])

    @classmethod
    def from_users(cls, user_results, cutoffs, metadata=None):
        """ Average per-user results in the given order; None entries are left out of their mean. """
        values = OrderedDict()
        for key in report_keys(cutoffs):
            vals = [r[key] for r in user_results if r[key] is not None]
            values[key] = float(np.mean(vals)) if vals else 0.0
        return cls(values, len(user_results), metadata)

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self):
        out = OrderedDict(self.values)
        out['num_users'] = self.num_users
        out['metadata'] = self.metadata
        return out

    @classmethod
    def from_dict(cls, d):
        d = OrderedDict(d)
        metadata = d.pop('metadata', None)
        num_users = d.pop('num_users', 0)
        return cls(d, num_users, metadata)

    def __repr__(self):
        return "MetricReport(%s; %i users)" % (', '.join('%s=%.4f' % kv for kv in self.values.items()), self.num_users)
