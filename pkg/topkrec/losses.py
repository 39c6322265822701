"""
losses.py: Talos, sampled softmax, BPR and the Talos ablations, with analytic score gradients

Every loss works on a LossBatchInput holding one positive score and a row of sampled
negative scores per example, and returns per-example values together with gradients
with respect to every score. The threshold beta is a constant here: it never receives
a gradient from these losses.
"""

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .errors import ArgumentError, ConfigError, NumericalError

FAMILIES = ('talos', 'softmax', 'bpr', 'talos_wo_quantile', 'talos_wo_outside', 'talos_wo_denominator')
ABLATIONS = ('talos_wo_quantile', 'talos_wo_outside', 'talos_wo_denominator')

class LossSpec(object):
    """ Loss family selector with temperature, Top-K position and negative count. """
    def __init__(self, **kwargs):
        # One of FAMILIES
        self.family = kwargs.get('family', 'talos')
        # Temperature of sigmoid(x)^(1/tau) or of the softmax
        self.tau = kwargs.get('tau', 0.1)
        # Top-K position tracked by the threshold; also the constant denominator of talos_wo_denominator
        self.K = kwargs.get('K', 20)
        # Sampled negatives per positive example
        self.num_negatives = kwargs.get('num_negatives', 1024)
        # log(0) := log(epsilon_log), used only by the bound check
        self.epsilon_log = kwargs.get('epsilon_log', 1e-6)
        if self.family not in FAMILIES:
            raise ConfigError("Unknown loss family %r, choose from %s" % (self.family, ', '.join(FAMILIES)))
        if not self.tau > 0:
            raise ConfigError("tau must be positive, got %s" % self.tau)
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.num_negatives < 1:
            raise ConfigError("num_negatives must be at least 1")
        if not 0 < self.epsilon_log < 1:
            raise ConfigError("epsilon_log must lie in (0,1)")

    @property
    def uses_quantile(self):
        return self.family in ('talos', 'talos_wo_outside', 'talos_wo_denominator')

    def negatives_per_example(self):
        return 1 if self.family == 'bpr' else self.num_negatives

    def as_dict(self):
        return {'family': self.family, 'tau': self.tau, 'K': self.K, 'num_negatives': self.num_negatives}

class LossBatchInput(object):
    """
    Scores of one mini-batch.

    Attributes
    ----------
    pos_scores : np.ndarray, shape (B,)
    neg_scores : np.ndarray, shape (B, n)
        Scores of the sampled negatives; never includes training positives
    beta : np.ndarray, shape (B,)
        Threshold of each example's user, treated as a constant
    num_positives : np.ndarray, shape (B,)
        |P_u| of each example's user
    users, pos_items : np.ndarray or None
        Indices, carried along for bookkeeping
    """
    def __init__(self, pos_scores, neg_scores, beta=None, num_positives=None, users=None, pos_items=None):
        self.pos_scores = np.atleast_1d(np.asarray(pos_scores, dtype=float))
        self.neg_scores = np.asarray(neg_scores, dtype=float)
        if self.neg_scores.ndim == 1:
            self.neg_scores = self.neg_scores[np.newaxis, :]
        B = len(self.pos_scores)
        if self.neg_scores.shape[0] != B or self.neg_scores.shape[1] < 1:
            raise ArgumentError("neg_scores must have shape (%i, n >= 1), got %s" % (B, str(self.neg_scores.shape)))
        self.beta = np.zeros(B) if beta is None else np.broadcast_to(np.asarray(beta, dtype=float), (B,)).copy()
        self.num_positives = np.ones(B, dtype=np.int64) if num_positives is None else \
            np.broadcast_to(np.asarray(num_positives, dtype=np.int64), (B,)).copy()
        self.users = users
        self.pos_items = pos_items

    def __len__(self):
        return len(self.pos_scores)

    def with_scores(self, pos_scores, neg_scores):
        return LossBatchInput(pos_scores, neg_scores, self.beta, self.num_positives, self.users, self.pos_items)

def sigma_tau(x, tau):
    """ sigmoid(x)^(1/tau), evaluated as exp(log_sigmoid(x)/tau). """
    if not tau > 0:
        raise ArgumentError("tau must be positive")
    return np.exp(log_expit(x) / tau)

def _log_activation(x, tau, outside=True):
    """ Log of the activation and the derivative of that log with respect to x. """
    if outside:
        return log_expit(x) / tau, expit(-x) / tau
    return log_expit(x / tau), expit(-x / tau) / tau

def _talos_terms(batch, tau, beta, outside=True):
    xp = batch.pos_scores - beta
    xn = batch.neg_scores - beta[:, np.newaxis]
    ap, dp = _log_activation(xp, tau, outside)
    an, dn = _log_activation(xn, tau, outside)
    lse = logsumexp(an, axis=1)
    losses = lse - ap
    # Softmax weight of each negative inside the denominator
    weights = np.exp(an - lse[:, np.newaxis])
    return losses, -dp, weights * dn

def _finite(losses, *grads):
    if not np.all(np.isfinite(losses)) or not all(np.all(np.isfinite(g)) for g in grads):
        raise NumericalError("Non-finite loss or gradient encountered")

def talos_loss(batch, spec):
    """
    Per-positive Talos loss -log( sigma_tau(s_ui - beta) / sum_j sigma_tau(s_uj - beta) ).

    Returns
    -------
    losses : np.ndarray, shape (B,)
    mean : float
    """
    losses, gp, gn = _talos_terms(batch, spec.tau, batch.beta)
    _finite(losses)
    return losses, float(np.mean(losses))

def talos_grad(batch, spec):
    """
    Gradients of the per-example Talos loss.

    Returns
    -------
    grad_pos : np.ndarray, shape (B,)
        -(1/tau) sigmoid(beta - s_ui), never positive
    grad_neg : np.ndarray, shape (B, n)
        (1/tau) w_j sigmoid(beta - s_uj) with softmax weights w_j, never negative
    """
    losses, gp, gn = _talos_terms(batch, spec.tau, batch.beta)
    _finite(losses, gp, gn)
    return gp, gn

def talos_full_form(pos_scores, cand_scores, beta, tau):
    """ -log( sum_P sigma_tau(s - beta) / sum_candidates sigma_tau(s - beta) ), the sum-inside-log form. """
    pos_scores = np.atleast_1d(np.asarray(pos_scores, dtype=float))
    cand_scores = np.atleast_1d(np.asarray(cand_scores, dtype=float))
    if len(pos_scores) == 0:
        raise ArgumentError("At least one positive score is required")
    return float(logsumexp(log_expit(cand_scores - beta) / tau) - logsumexp(log_expit(pos_scores - beta) / tau))

def softmax_loss(batch, spec):
    """ Sampled softmax with the positive included in the denominator. """
    z = np.hstack([batch.pos_scores[:, np.newaxis], batch.neg_scores]) / spec.tau
    lse = logsumexp(z, axis=1)
    losses = lse - z[:, 0]
    p = np.exp(z - lse[:, np.newaxis])
    gp = (p[:, 0] - 1.0) / spec.tau
    gn = p[:, 1:] / spec.tau
    _finite(losses, gp, gn)
    return losses, gp, gn

def bpr_loss(positive_score, negative_score):
    """ -log sigmoid(s_ui - s_uj) and its gradients with respect to both scores. """
    d = np.asarray(positive_score, dtype=float) - np.asarray(negative_score, dtype=float)
    loss = -log_expit(d)
    g = expit(-d)
    return loss, -g, g

def ablation_losses(batch, spec):
    """
    Talos variants: talos_wo_quantile (beta fixed at 0), talos_wo_outside
    (sigmoid(x/tau) in place of sigmoid(x)^(1/tau)) and talos_wo_denominator
    (the denominator replaced by the constant K).
    """
    if spec.family == 'talos_wo_quantile':
        losses, gp, gn = _talos_terms(batch, spec.tau, np.zeros(len(batch)))
    elif spec.family == 'talos_wo_outside':
        losses, gp, gn = _talos_terms(batch, spec.tau, batch.beta, outside=False)
    elif spec.family == 'talos_wo_denominator':
        ap, dp = _log_activation(batch.pos_scores - batch.beta, spec.tau)
        losses = np.log(spec.K) - ap
        gp = -dp
        gn = np.zeros_like(batch.neg_scores)
    else:
        raise ArgumentError("%s is not an ablation family" % spec.family)
    _finite(losses, gp, gn)
    return losses, gp, gn

def loss_and_grad(batch, spec):
    """ Per-example losses and score gradients for any family; BPR uses the first negative of each row. """
    if spec.family == 'talos':
        losses, gp, gn = _talos_terms(batch, spec.tau, batch.beta)
        _finite(losses, gp, gn)
    elif spec.family == 'softmax':
        losses, gp, gn = softmax_loss(batch, spec)
    elif spec.family == 'bpr':
        losses, gp, g0 = bpr_loss(batch.pos_scores, batch.neg_scores[:, 0])
        gn = np.zeros_like(batch.neg_scores)
        gn[:, 0] = g0
        _finite(losses, gp, gn)
    else:
        losses, gp, gn = ablation_losses(batch, spec)
    return losses, gp, gn

def finite_difference_grad(batch, spec, h=1e-5):
    """
    Central finite-difference gradient of the per-example losses with respect to every score.
    Examples are independent, so one score column is displaced at a time for the whole batch.
    """
    def f(pos, neg):
        return loss_and_grad(batch.with_scores(pos, neg), spec)[0]
    fd_pos = (f(batch.pos_scores + h, batch.neg_scores) - f(batch.pos_scores - h, batch.neg_scores)) / (2 * h)
    fd_neg = np.zeros_like(batch.neg_scores)
    for j in range(batch.neg_scores.shape[1]):
        plus = batch.neg_scores.copy()
        minus = batch.neg_scores.copy()
        plus[:, j] += h
        minus[:, j] -= h
        fd_neg[:, j] = (f(batch.pos_scores, plus) - f(batch.pos_scores, minus)) / (2 * h)
    return fd_pos, fd_neg
