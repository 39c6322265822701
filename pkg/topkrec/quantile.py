"""
quantile.py: Per-user Top-K score thresholds learned by sampled quantile regression

The threshold of user u tracks the score of the item at position K in u's ranking.
It is learned with plain SGD on the pinball loss evaluated on the positive of each
training example and on that example's sampled negatives, importance-weighted so
that the estimate is unbiased for the full item-space objective.
"""

from collections import OrderedDict

import numpy as np

from .errors import ArgumentError, NumericalError

class ThresholdTable(object):
    """
    Learned thresholds, one per user.

    Attributes
    ----------
    beta : np.ndarray, shape (num_users,)
        Current estimates, initialized to zero
    total_items : int
        |I|, the size of the item space the quantile refers to
    K : int
        Top-K position
    learning_rate : float
        Plain SGD step size
    """
    def __init__(self, num_users, total_items, K, learning_rate=1e-3, beta=None):
        if not 0 < K < total_items:
            raise ArgumentError("K must satisfy 0 < K < total_items (K=%i, total_items=%i)" % (K, total_items))
        self.total_items = int(total_items)
        self.K = int(K)
        self.learning_rate = float(learning_rate)
        self.beta = np.zeros(num_users) if beta is None else np.array(beta, dtype=float)
        if self.beta.shape != (num_users,):
            raise ArgumentError("beta must have shape (%i,)" % num_users)
        if not np.all(np.isfinite(self.beta)):
            raise NumericalError("Thresholds must be finite")

    @classmethod
    def from_arrays(cls, arrays):
        return cls(len(arrays['beta']), int(arrays['total_items']), int(arrays['K']),
                   float(arrays['learning_rate']), beta=arrays['beta'])

    def as_arrays(self):
        return {'beta': self.beta.copy(), 'total_items': np.int64(self.total_items), 'K': np.int64(self.K),
                'learning_rate': np.float64(self.learning_rate)}

    def copy(self):
        return ThresholdTable(len(self.beta), self.total_items, self.K, self.learning_rate, beta=self.beta)

class NegativeSample(object):
    """
    Negatives G_u drawn uniformly without replacement from the non-positives of a user,
    with importance weight w_u = (|I| - |P_u^train|) / |G_u|. Scores are attached once computed.
    """
    def __init__(self, user, items, weight, scores=None):
        self.user = int(user)
        self.items = np.asarray(items, dtype=np.int64)
        self.weight = float(weight)
        self.scores = None if scores is None else np.asarray(scores, dtype=float)
        if len(self.items) < 1:
            raise ArgumentError("A negative sample needs at least one item")
        if not self.weight > 0:
            raise ArgumentError("Importance weight must be positive")

    def __len__(self):
        return len(self.items)

def _check_K(K, total_items):
    if not 0 < K < total_items:
        raise ArgumentError("rho_K requires 0 < K < total_items (K=%s, total_items=%s)" % (K, total_items))

def rho_K(x, K, total_items):
    """ Pinball loss (1 - K/|I|)(x)_+ + (K/|I|)(-x)_+. """
    _check_K(K, total_items)
    q = K / total_items
    x = np.asarray(x, dtype=float)
    return (1.0 - q) * np.maximum(x, 0.0) + q * np.maximum(-x, 0.0)

def rho_K_derivative(x, K, total_items):
    """ Subgradient of rho_K with the convention d(x)_+/dx = 1 for x > 0 and 0 for x <= 0. """
    _check_K(K, total_items)
    q = K / total_items
    x = np.asarray(x, dtype=float)
    return (1.0 - q) * (x > 0) - q * (x < 0)

def exact_quantile(scores, K):
    """ The K-th largest value of scores. """
    scores = np.asarray(scores, dtype=float)
    if not 1 <= K <= len(scores):
        raise ArgumentError("K=%s out of range for %i scores" % (K, len(scores)))
    return float(-np.partition(-scores, K - 1)[K - 1])

def sampled_quantile(scores, K, num_samples, rng):
    """
    Monte-Carlo estimate of the K-th largest score: the ceil(K n / |I|)-th largest
    of n uniformly sampled scores.
    """
    scores = np.asarray(scores, dtype=float)
    n = min(int(num_samples), len(scores))
    if n < 1:
        raise ArgumentError("num_samples must be at least 1")
    picks = scores[rng.choice(len(scores), size=n, replace=False)]
    position = int(np.clip(np.ceil(K * n / len(scores)), 1, n))
    return exact_quantile(picks, position)

def full_qr_loss(scores, beta, K):
    """ (1/|I|) sum over all items of rho_K(s - beta); its minimizer over beta is the K-th largest score. """
    scores = np.asarray(scores, dtype=float)
    return float(np.mean(rho_K(scores - beta, K, len(scores))))

def _negative_scores(negative, negative_scores):
    s = negative.scores if negative_scores is None else np.asarray(negative_scores, dtype=float)
    if s is None or len(s) != len(negative):
        raise ArgumentError("Scores of the negative sample are missing or of the wrong length")
    return s

def stochastic_qr_loss(positive_score, num_positives, negative, beta, K, total_items, negative_scores=None):
    """
    (1/|I|) ( |P_u| rho_K(s_ui - beta) + w_u sum_{j in G_u} rho_K(s_uj - beta) ).

    Over a uniformly drawn positive and a uniform G_u, the expectation equals full_qr_loss.
    """
    s = _negative_scores(negative, negative_scores)
    total = num_positives * rho_K(positive_score - beta, K, total_items) + \
        negative.weight * np.sum(rho_K(s - beta, K, total_items))
    return float(total / total_items)

def qr_gradient(positive_score, num_positives, negative, beta, K, total_items, negative_scores=None):
    """ Derivative of stochastic_qr_loss with respect to beta. """
    s = _negative_scores(negative, negative_scores)
    total = num_positives * rho_K_derivative(positive_score - beta, K, total_items) + \
        negative.weight * np.sum(rho_K_derivative(s - beta, K, total_items))
    return float(-total / total_items)

def update_threshold(table, user, positive_score, num_positives, negative):
    """ One SGD step on the threshold of `user`; returns the new value. """
    g = qr_gradient(positive_score, num_positives, negative, table.beta[user], table.K, table.total_items)
    table.beta[user] -= table.learning_rate * g
    return table.beta[user]

def estimation_error_report(model, table, dataset, K=None, num_samples=None, seed=0, chunk=256):
    """
    Compare every user's learned threshold with the exact K-th largest of all its scores.

    Parameters
    ----------
    model : FactorModel
    table : ThresholdTable
    dataset : InteractionDataset
    K : int, optional
        Defaults to table.K
    num_samples : int, optional
        If given, also report the error of sampled_quantile with this many items per user

    Returns
    -------
    OrderedDict
        mean_abs_error, max_abs_error, K, num_users (and monte_carlo_mean_abs_error)
    """
    K = table.K if K is None else K
    errors = np.zeros(dataset.num_users)
    mc_errors = np.zeros(dataset.num_users)
    rng = np.random.default_rng(seed)
    for start in range(0, dataset.num_users, chunk):
        users = np.arange(start, min(start + chunk, dataset.num_users))
        S = model.score_users(users)
        exact = -np.partition(-S, K - 1, axis=1)[:, K - 1]
        errors[users] = np.abs(table.beta[users] - exact)
        if num_samples is not None:
            for row, u in enumerate(users):
                mc_errors[u] = abs(sampled_quantile(S[row], K, num_samples, rng) - exact[row])
    report = OrderedDict([('mean_abs_error', float(np.mean(errors)) if len(errors) else 0.0),
                          ('max_abs_error', float(np.max(errors)) if len(errors) else 0.0),
                          ('K', int(K)), ('num_users', int(dataset.num_users))])
    if num_samples is not None:
        report['monte_carlo_samples'] = int(num_samples)
        report['monte_carlo_mean_abs_error'] = float(np.mean(mc_errors)) if len(mc_errors) else 0.0
    return report
