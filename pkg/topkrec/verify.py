"""
verify.py: Numerical checks of the Top-K surrogate bound, the KL-robust identity,
the unbiasedness of the sampled quantile objective and the analytic loss gradients

Every check returns a CheckResult with a pass flag, a margin (positive is good unless
noted) and, on failure, the offending instance.
"""

from collections import OrderedDict

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import expit, log_expit, logsumexp, rel_entr

from .errors import ConfigError
from .info import colorString
from .losses import FAMILIES, LossSpec, LossBatchInput, talos_full_form, talos_loss, loss_and_grad, finite_difference_grad
from .metrics import RankedEval, precision_recall_at_k
from .nifty import logger, mean_stderr
from .quantile import NegativeSample, exact_quantile, full_qr_loss, stochastic_qr_loss

class CheckResult(object):
    def __init__(self, name, passed, margin, detail=None, counterexample=None):
        self.name = name
        self.passed = bool(passed)
        self.margin = float(margin)
        self.detail = OrderedDict(detail if detail is not None else [])
        self.counterexample = counterexample

    def to_dict(self):
        return OrderedDict([('name', self.name), ('passed', self.passed), ('margin', self.margin),
                            ('detail', self.detail), ('counterexample', self.counterexample)])

#=====================================#
#|     Top-K surrogate bound check   |#
#=====================================#
def tau_bounds(epsilon_log):
    """
    Temperature range in which the bound holds for a given epsilon:
    tau_min = log((e^2 + 2) sigmoid(-2) / 2) / log(eps), tau_max = log(1/2) / log(eps).
    """
    if not 0 < epsilon_log < 1:
        raise ConfigError("epsilon_log = %g gives no valid temperature range; it must lie in (0,1)" % epsilon_log)
    le = np.log(epsilon_log)
    tau_min = np.log((np.e ** 2 + 2) * expit(-2.0) / 2) / le
    tau_max = np.log(0.5) / le
    if not 0 < tau_min < tau_max:
        raise ConfigError("Empty temperature range [%g, %g] for epsilon_log = %g" % (tau_min, tau_max, epsilon_log))
    return float(tau_min), float(tau_max)

def bound_constant(tau):
    """ C = (1/tau) log(1 + e^2/2). """
    return float(np.log(1 + np.e ** 2 / 2) / tau)

def theorem1_slack(scores, positives, beta, tau, K, epsilon_log):
    """
    Slack of -log Precision@K <= L + C on one instance, with log(0) := log(epsilon_log).

    Returns
    -------
    slack, neg_log_precision, loss, C
    """
    precision = precision_recall_at_k(RankedEval(scores, positives), K)[0]
    neg_log_p = -np.log(precision) if precision > 0 else -np.log(epsilon_log)
    loss = talos_full_form(scores[positives], scores, beta, tau)
    C = bound_constant(tau)
    return loss + C - neg_log_p, neg_log_p, loss, C

def _bound_instance(rng, config):
    scores = rng.uniform(-1, 1, config.num_items)
    m = int(rng.integers(1, config.num_items))
    positives = rng.choice(config.num_items, size=m, replace=False)
    return scores, positives, exact_quantile(scores, config.K)

def check_theorem1(config):
    """ The bound over config.trials random instances with tau drawn from the admissible range. """
    tau_min, tau_max = tau_bounds(config.epsilon_log)
    rng = np.random.default_rng(config.seed)
    worst = np.inf
    violations = 0
    counterexample = None
    for trial in range(config.trials):
        scores, positives, beta = _bound_instance(rng, config)
        tau = rng.uniform(tau_min, tau_max)
        slack = theorem1_slack(scores, positives, beta, tau, config.K, config.epsilon_log)[0]
        if slack < 0:
            violations += 1
            if counterexample is None:
                counterexample = OrderedDict([('trial', trial), ('tau', tau), ('beta', beta), ('slack', slack),
                                              ('scores', scores.tolist()), ('positives', sorted(positives.tolist()))])
        worst = min(worst, slack)
    detail = OrderedDict([('tau_min', tau_min), ('tau_max', tau_max), ('trials', config.trials),
                          ('violations', violations)])
    return CheckResult('theorem1', violations == 0, worst, detail, counterexample)

def tightness_trend(config, num_tau=None):
    """ Mean slack on one fixed instance stream for evenly spaced temperatures of the admissible range. """
    tau_min, tau_max = tau_bounds(config.epsilon_log)
    taus = np.linspace(tau_min, tau_max, num_tau if num_tau is not None else config.tau_grid)
    rng = np.random.default_rng(config.seed)
    instances = [_bound_instance(rng, config) for trial in range(config.trials)]
    means = [float(np.mean([theorem1_slack(s, p, b, tau, config.K, config.epsilon_log)[0] for s, p, b in instances]))
             for tau in taus]
    diffs = np.diff(means)
    if np.all(diffs <= 0): direction = 'non-increasing'
    elif np.all(diffs >= 0): direction = 'non-decreasing'
    else: direction = 'mixed'
    return OrderedDict([('tau', taus.tolist()), ('mean_slack', means), ('direction', direction)])

#=====================================#
#|      KL-robust identity check     |#
#=====================================#
def dual_value(g, eta, tau):
    """ tau eta + tau log mean exp(g / tau), an upper bound of the KL-ball supremum for every tau > 0. """
    g = np.asarray(g, dtype=float)
    return float(tau * eta + tau * (logsumexp(g / tau) - np.log(len(g))))

def dual_minimum(g, eta):
    """ Minimize dual_value over tau (searched in log tau); returns (value, tau). """
    res = minimize_scalar(lambda t: dual_value(g, eta, np.exp(t)), bounds=(-14.0, 7.0), method='bounded',
                          options={'xatol': 1e-10})
    return float(res.fun), float(np.exp(res.x))

def simplex_directions(n, count):
    """ Unit directions in the tangent space of the probability simplex (n = 2 or 3). """
    if n == 2:
        d = np.array([1.0, -1.0]) / np.sqrt(2)
        return np.array([d, -d])
    if n == 3:
        e1 = np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
        e2 = np.array([1.0, 1.0, -2.0]) / np.sqrt(6)
        theta = 2 * np.pi * np.arange(count) / count
        return np.cos(theta)[:, np.newaxis] * e1 + np.sin(theta)[:, np.newaxis] * e2
    raise ConfigError("The worst-case search supports 2 or 3 negatives, not %i" % n)

def kl_ball_sup(g, eta, count=2000):
    """
    Largest E_Q[g] over distributions Q with KL(Q || uniform) <= eta, found by locating
    the boundary of the ball along `count` directions from the uniform distribution.
    """
    g = np.asarray(g, dtype=float)
    n = len(g)
    q0 = np.full(n, 1.0 / n)
    kl = lambda q: float(np.sum(rel_entr(q, q0)))
    best = float(np.dot(q0, g))
    for d in simplex_directions(n, count):
        neg = d < 0
        t_max = float(np.min(q0[neg] / -d[neg]))
        if kl(q0 + t_max * d) <= eta:
            t = t_max
        else:
            t = brentq(lambda s: kl(q0 + s * d) - eta, 0.0, t_max, xtol=1e-14)
        q = np.clip(q0 + t * d, 0.0, None)
        best = max(best, float(np.dot(q, g)))
    return best

def check_dro_identity(config):
    """
    (1) tau times the mean-denominator Talos loss equals
        -log sigmoid(s_ui - beta) + tau log mean_j sigmoid(s_uj - beta)^(1/tau);
    (2) on small instances the KL-ball supremum of E_Q[log sigmoid(s - beta)] never exceeds
        the dual value at any tau and matches its minimum within config.sup_tolerance.
    """
    rng = np.random.default_rng(config.seed)
    max_rel = 0.0
    counterexample = None
    for trial in range(config.trials):
        pos = rng.uniform(-1, 1)
        neg = rng.uniform(-1, 1, config.num_negatives)
        beta = rng.uniform(-1, 1)
        tau = rng.uniform(*config.tau_range)
        spec = LossSpec(family='talos', tau=tau, K=1, num_negatives=config.num_negatives)
        summed = talos_loss(LossBatchInput([pos], [neg], [beta]), spec)[1]
        lhs = tau * (summed - np.log(config.num_negatives))
        rhs = -np.log(expit(pos - beta)) + tau * np.log(np.mean(expit(neg - beta) ** (1.0 / tau)))
        rel = abs(lhs - rhs) / max(abs(rhs), 1.0)
        if rel > max_rel:
            max_rel = rel
            if rel > config.tolerance and counterexample is None:
                counterexample = OrderedDict([('trial', trial), ('pos', pos), ('neg', neg.tolist()), ('beta', beta),
                                              ('tau', tau), ('lhs', lhs), ('rhs', rhs)])
    max_gap = 0.0
    max_excess = -np.inf
    for inst in range(config.sup_instances):
        neg = rng.uniform(-1, 1, config.sup_negatives)
        beta = rng.uniform(-1, 1)
        g = log_expit(neg - beta)
        sup = kl_ball_sup(g, config.eta, config.directions)
        closed, tau_star = dual_minimum(g, config.eta)
        excess = max(sup - dual_value(g, config.eta, tau) for tau in np.geomspace(1e-3, 1e2, 11))
        excess = max(excess, sup - closed)
        max_excess = max(max_excess, excess)
        max_gap = max(max_gap, closed - sup)
        if (excess > 1e-12 or closed - sup > config.sup_tolerance) and counterexample is None:
            counterexample = OrderedDict([('instance', inst), ('neg', neg.tolist()), ('beta', beta), ('sup', sup),
                                          ('dual', closed), ('tau', tau_star)])
    passed = max_rel <= config.tolerance and max_excess <= 1e-12 and max_gap <= config.sup_tolerance
    detail = OrderedDict([('trials', config.trials), ('max_relative_error', max_rel), ('eta', config.eta),
                          ('max_sup_excess', max_excess), ('max_dual_gap', max_gap)])
    return CheckResult('dro', passed, config.tolerance - max_rel, detail, counterexample)

#=====================================#
#|  Sampled quantile objective check |#
#=====================================#
def within_stderr(mean, se, target, limit=3.0):
    """ Return (|mean - target| / se, whether it is at most limit); a zero standard error needs an exact mean. """
    if se > 0:
        z = abs(mean - target) / se
    else:
        z = 0.0 if mean == target else np.inf
    return z, bool(z <= limit)

def check_unbiasedness(config):
    """ Monte-Carlo mean of stochastic_qr_loss against full_qr_loss on one synthetic user. """
    rng = np.random.default_rng(config.seed)
    I = config.num_items
    scores = rng.uniform(-1, 1, I)
    perm = rng.permutation(I)
    positives, negatives = perm[:config.num_positives], perm[config.num_positives:]
    beta = exact_quantile(scores, config.K)
    full = full_qr_loss(scores, beta, config.K)
    weight = len(negatives) / config.num_negatives
    values = np.zeros(config.draws)
    for d in range(config.draws):
        pos = positives[rng.integers(len(positives))]
        G = rng.choice(negatives, size=config.num_negatives, replace=False)
        sample = NegativeSample(0, G, weight, scores[G])
        values[d] = stochastic_qr_loss(scores[pos], len(positives), sample, beta, config.K, I)
    mean, se = mean_stderr(values)
    z, unbiased = within_stderr(mean, se, full, config.max_stderr)
    rel = abs(mean - full) / abs(full)
    # With one positive and every negative sampled the estimate is exact
    single = NegativeSample(0, np.arange(1, I), 1.0, scores[1:])
    exact_ok = np.isclose(stochastic_qr_loss(scores[0], 1, single, beta, config.K, I), full, rtol=1e-12, atol=1e-15)
    flat = NegativeSample(0, np.arange(1, I), 1.0, np.zeros(I - 1))
    zero_ok = stochastic_qr_loss(0.0, 1, flat, 0.0, config.K, I) == 0.0
    passed = unbiased and exact_ok and zero_ok
    detail = OrderedDict([('full', full), ('mean', mean), ('stderr', se), ('z', z), ('relative_error', rel),
                          ('within_relative_tolerance', bool(rel <= config.rel_tolerance)),
                          ('draws', config.draws), ('exact_case', bool(exact_ok)), ('zero_case', bool(zero_ok))])
    return CheckResult('unbiasedness', passed, config.max_stderr - z, detail,
                       None if passed else OrderedDict([('beta', beta), ('scores', scores.tolist())]))

#=====================================#
#|     Finite-difference gradients   |#
#=====================================#
def check_gradients(config, atol=1e-7):
    """ Analytic score gradients of every loss family against central finite differences. """
    rng = np.random.default_rng(config.seed)
    worst = 0.0
    per_family = OrderedDict()
    counterexample = None
    for family in FAMILIES:
        spec = LossSpec(family=family, tau=config.tau, K=config.K, num_negatives=config.num_negatives)
        batch = LossBatchInput(rng.uniform(-1, 1, config.instances),
                               rng.uniform(-1, 1, (config.instances, config.num_negatives)),
                               rng.uniform(-1, 1, config.instances))
        losses, gp, gn = loss_and_grad(batch, spec)
        fp, fn = finite_difference_grad(batch, spec, config.h)
        analytic = np.hstack([gp[:, np.newaxis], gn])
        numeric = np.hstack([fp[:, np.newaxis], fn])
        ratio = float(np.max(np.abs(analytic - numeric) / (config.rtol * np.abs(numeric) + atol)))
        per_family[family] = ratio
        if ratio > worst:
            worst = ratio
        if ratio > 1 and counterexample is None:
            row = int(np.argmax(np.max(np.abs(analytic - numeric), axis=1)))
            counterexample = OrderedDict([('family', family), ('pos', float(batch.pos_scores[row])),
                                          ('neg', batch.neg_scores[row].tolist()), ('beta', float(batch.beta[row]))])
    return CheckResult('gradients', worst <= 1, 1 - worst, per_family, counterexample)

#=====================================#
#|             Reporting             |#
#=====================================#
CHECKS = OrderedDict([('theorem1', check_theorem1), ('dro', check_dro_identity),
                      ('unbiasedness', check_unbiasedness), ('gradients', check_gradients)])

def print_results(results):
    """ Pass/fail table with margins, written through the logger. """
    logger.info("%-16s %-6s %14s\n" % ("Check", "Result", "Margin"))
    logger.info("-" * 38 + "\n")
    for r in results:
        status = colorString("PASS", 'green') if r.passed else colorString("FAIL", 'red')
        # Colour codes do not count towards the field width
        logger.info("%-16s %s   %14.6e\n" % (r.name, status, r.margin))

def run_checks(run_config, names=None):
    """
    Run the named checks (default: all) with settings taken from a RunConfig.

    Returns
    -------
    list of CheckResult, in the order of CHECKS
    """
    builders = OrderedDict([('theorem1', run_config.bound_config), ('dro', run_config.dro_config),
                            ('unbiasedness', run_config.unbiasedness_config), ('gradients', run_config.gradient_config)])
    names = list(CHECKS.keys()) if names is None else list(names)
    results = []
    for name in CHECKS:
        if name not in names:
            continue
        config = builders[name]()
        logger.info("Running check %s\n" % name)
        results.append(CHECKS[name](config))
        if name == 'theorem1':
            trend = tightness_trend(config)
            results[-1].detail['tightness'] = trend
            logger.info("Mean slack is %s in tau over [%.4f, %.4f]\n" % (trend['direction'], trend['tau'][0], trend['tau'][-1]))
    print_results(results)
    return results
