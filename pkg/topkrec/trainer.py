"""
trainer.py: Alternating optimization of the factor model and the per-user thresholds

Every mini-batch of (user, positive item) examples takes two steps:
1) the model step: sample negatives, compute the loss and its score gradients with the
   thresholds held constant, backpropagate through cosine scoring, apply Adam;
2) the threshold step: rescore the same examples and negatives with the updated model
   and take one SGD step on each example's threshold, in batch order.
"""

import json
import time
from collections import OrderedDict

import numpy as np

from .errors import ArgumentError, NumericalError, TrainingDivergedError
from .losses import LossBatchInput, loss_and_grad
from .metrics import RankedEval, MetricReport, evaluate_user
from .model import AdamState, SparseGradient, apply_gradients, cosine_gradients
from .nifty import logger, concurrent_map, summary_stats
from .quantile import NegativeSample, update_threshold

# Dense score blocks are limited to this many entries
BLOCK_ENTRIES = 2 ** 21

class TRAIN_STATE(object):
    """ This describes the state of a Trainer during the training process
    """
    RUNNING       = 0
    EARLY_STOPPED = 1  # validation metric did not improve for `patience` epochs
    FINISHED      = 2  # reached the maximum number of epochs

def sample_negatives(dataset, user, count, rng):
    """
    Draw `count` items uniformly without replacement from the items that are not
    training positives of `user`.

    Returns
    -------
    NegativeSample
        With importance weight (|I| - |P_u^train|) / count
    """
    positives = dataset.train_positives(user)
    num_neg = dataset.num_items - len(positives)
    if count < 1 or count > num_neg:
        raise ArgumentError("Cannot sample %i negatives for user %i with %i non-positive items" % (count, user, num_neg))
    picks = rng.choice(num_neg, size=count, replace=False)
    # The p-th non-positive item is p plus the number of positives at or below it
    shifted = positives - np.arange(len(positives))
    items = picks + np.searchsorted(shifted, picks, side='right')
    return NegativeSample(user, items, num_neg / count)

def _blocks(n, width):
    step = max(1, BLOCK_ENTRIES // max(width, 1))
    for start in range(0, n, step):
        yield np.arange(start, min(start + step, n))

def evaluate_scores(scores, dataset, split, cutoffs, alpha=0.3, beta=0.1, workers=1, metadata=None, users=None):
    """
    Evaluate a dense score matrix (rows follow `users`, default all users) on a split.
    Training positives are masked; in temporal mode validation positives are masked too
    when evaluating test. Users without positives in the split or without training
    positives are skipped.
    """
    if users is None:
        users = np.arange(dataset.num_users)
    rows = []
    for row, u in enumerate(users):
        if len(dataset.split_positives(split, u)) and len(dataset.train_positives(u)):
            rows.append(row)

    def one_user(row):
        u = users[row]
        s = np.array(scores[row], dtype=float)
        s[dataset.train_positives(u)] = -np.inf
        if dataset.mode == 'temporal' and split == 'test':
            s[dataset.split_positives('validation', u)] = -np.inf
        return evaluate_user(RankedEval(s, dataset.split_positives(split, u)), cutoffs, alpha, beta)

    results = concurrent_map(one_user, rows, workers)
    return MetricReport.from_users(results, cutoffs, metadata)

def evaluate(model, dataset, split, cutoffs, alpha=0.3, beta=0.1, workers=1, metadata=None):
    """ Per-user metrics of the model on `split`, averaged over users with at least one positive there. """
    results = []
    for block in _blocks(dataset.num_users, dataset.num_items):
        report = evaluate_scores(model.score_users(block), dataset, split, cutoffs, alpha, beta, workers, users=block)
        results.append(report)
    # Recombine block means weighted by their user counts
    total = sum(r.num_users for r in results)
    values = OrderedDict()
    for key in results[0].values:
        values[key] = sum(r.values[key] * r.num_users for r in results) / total if total else 0.0
    metadata = OrderedDict(metadata if metadata is not None else [])
    metadata['split'] = split
    return MetricReport(values, total, metadata)

class TrainLog(object):
    """ Per-epoch training records, written as JSON lines. """
    def __init__(self, records=None):
        self.records = list(records) if records is not None else []

    def append(self, record):
        if self.records and record['epoch'] != self.records[-1]['epoch'] + 1:
            raise ArgumentError("Epochs must be recorded contiguously")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def column(self, key):
        return [r[key] for r in self.records]

    @property
    def losses(self):
        return self.column('loss')

    def to_jsonl(self, fnm):
        with open(fnm, 'w') as f:
            for r in self.records:
                f.write(json.dumps(r) + '\n')

    @classmethod
    def from_jsonl(cls, fnm):
        with open(fnm) as f:
            return cls([json.loads(line, object_pairs_hook=OrderedDict) for line in f if line.strip()])

def gradient_norm_ratio(log, fraction=0.1):
    """ Mean squared gradient norm over the last `fraction` of epochs divided by that of the first. """
    sq = np.array(log.column('grad_norm_sq'))
    n = max(1, int(np.ceil(fraction * len(sq))))
    return float(np.mean(sq[-n:]) / np.mean(sq[:n]))

def joint_inflation(log, level=0.95):
    """ Epochs where the mean positive score and the mean threshold both exceed `level`. """
    return [r['epoch'] for r in log.records if r['mean_positive_score'] > level and r['beta_mean'] > level]

class Trainer(object):
    """
    Holds the model, optimizer state, thresholds and data of one training run.
    The model and threshold table are updated in place.
    """
    def __init__(self, dataset, model, thresholds, config):
        if not dataset.is_split:
            raise ArgumentError("Training requires a split dataset")
        self.dataset = dataset
        self.model = model
        self.thresholds = thresholds
        self.config = config
        self.spec = config.loss
        self.adam = AdamState(model, config.lr, config.weight_decay)
        self.pair_users, self.pair_items = dataset.train_pairs()
        if len(self.pair_users) == 0:
            raise ArgumentError("The training split is empty")
        if self.spec.uses_quantile and thresholds is None:
            raise ArgumentError("Loss family %s needs a threshold table" % self.spec.family)
        self.num_positives = np.array([len(dataset.train_positives(u)) for u in range(dataset.num_users)])
        self.log = TrainLog()
        self.state = TRAIN_STATE.RUNNING
        self.best = None
        self.last_batch = None
        if thresholds is not None:
            thresholds.learning_rate = config.threshold_lr

    def example_rng(self, epoch, example):
        return np.random.default_rng([self.config.seed, epoch, example])

    def score_examples(self, users, pos_items, neg_items):
        """ Scores of the positives and the sampled negatives under the current model. """
        Vn = self.model.unit_items()
        Un = self.model.unit_users(users)
        pos_scores = np.sum(Un * Vn[pos_items], axis=1)
        neg_scores = np.zeros(neg_items.shape)
        for block in _blocks(len(users), neg_items.shape[1] * self.model.dim):
            neg_scores[block] = np.einsum('bd,bnd->bn', Un[block], Vn[neg_items[block]])
        return pos_scores, neg_scores

    def train_batch(self, epoch, batch_no, examples):
        """ Model step then threshold step on one mini-batch; returns (mean loss, gradient norm, mean positive score). """
        users = self.pair_users[examples]
        pos_items = self.pair_items[examples]
        count = self.spec.negatives_per_example()
        negatives = [sample_negatives(self.dataset, u, count, self.example_rng(epoch, e)) for u, e in zip(users, examples)]
        neg_items = np.vstack([n.items for n in negatives])
        beta = self.thresholds.beta[users].copy() if self.spec.uses_quantile else np.zeros(len(users))

        # Model step with the thresholds held constant
        pos_scores, neg_scores = self.score_examples(users, pos_items, neg_items)
        batch = LossBatchInput(pos_scores, neg_scores, beta, self.num_positives[users], users, pos_items)
        try:
            losses, gp, gn = loss_and_grad(batch, self.spec)
        except NumericalError:
            raise TrainingDivergedError("Non-finite %s loss at epoch %i, batch %i" % (self.spec.family, epoch, batch_no))
        B = len(examples)
        grads = SparseGradient()
        for block in _blocks(B, self.model.num_items):
            dS = np.zeros((len(block), self.model.num_items))
            rows = np.arange(len(block))
            dS[rows[:, np.newaxis], neg_items[block]] = gn[block] / B
            dS[rows, pos_items[block]] = gp[block] / B
            grads.merge(cosine_gradients(self.model, users[block], dS))
        gnorm = grads.norm()
        try:
            apply_gradients(self.model, self.adam, grads)
        except NumericalError as e:
            raise TrainingDivergedError("%s at epoch %i, batch %i" % (e, epoch, batch_no))

        # Threshold step on the rescored examples, serialized in batch order
        record = OrderedDict([('users', users), ('beta_model_step', beta)])
        if self.spec.uses_quantile:
            record['beta_before'] = self.thresholds.beta[users].copy()
            new_pos, new_neg = self.score_examples(users, pos_items, neg_items)
            for b, neg in enumerate(negatives):
                neg.scores = new_neg[b]
                update_threshold(self.thresholds, users[b], new_pos[b], self.num_positives[users[b]], neg)
            record['threshold_pos_scores'] = new_pos
            record['threshold_neg_scores'] = new_neg
            if not np.all(np.isfinite(self.thresholds.beta[users])):
                raise TrainingDivergedError("Non-finite threshold at epoch %i, batch %i" % (epoch, batch_no))
        record['pos_items'] = pos_items
        record['neg_items'] = neg_items
        self.last_batch = record
        return float(np.mean(losses)), gnorm, float(np.mean(pos_scores))

    def run_epoch(self, epoch):
        t0 = time.time()
        order = np.random.default_rng([self.config.seed, epoch]).permutation(len(self.pair_users))
        bs = self.config.batch_size
        losses, norms, pscores, sizes = [], [], [], []
        for batch_no, start in enumerate(range(0, len(order), bs)):
            examples = order[start:start + bs]
            loss, gnorm, pscore = self.train_batch(epoch, batch_no, examples)
            losses.append(loss)
            norms.append(gnorm)
            pscores.append(pscore)
            sizes.append(len(examples))
        report = evaluate(self.model, self.dataset, 'validation', self.config.eval_cutoffs, self.config.llpauc_alpha,
                          self.config.llpauc_beta, self.config.workers,
                          metadata=OrderedDict([('loss', self.spec.family), ('tau', self.spec.tau),
                                                ('seed', self.config.seed), ('epoch', epoch)]))
        stats = summary_stats(self.thresholds.beta if self.thresholds is not None else [])
        norms = np.array(norms)
        record = OrderedDict([('epoch', epoch), ('loss', float(np.average(losses, weights=sizes))),
                              ('grad_norm', float(np.mean(norms))), ('grad_norm_sq', float(np.mean(norms ** 2))),
                              ('mean_positive_score', float(np.average(pscores, weights=sizes))),
                              ('beta_mean', stats['mean']), ('beta_min', stats['min']), ('beta_max', stats['max']),
                              ('beta_std', stats['std']), ('validation', report.to_dict()),
                              ('time', time.time() - t0), ('threshold_update', 'per_batch')])
        self.log.append(record)
        return record, report

    def snapshot(self, epoch):
        self.best = OrderedDict([('epoch', epoch), ('model', self.model.copy()), ('adam', self.adam.copy()),
                                 ('thresholds', self.thresholds.copy() if self.thresholds is not None else None)])

    def restore_best(self):
        if self.best is None:
            return
        self.model.user_embeddings[:] = self.best['model'].user_embeddings
        self.model.item_embeddings[:] = self.best['model'].item_embeddings
        self.adam = self.best['adam']
        if self.thresholds is not None:
            self.thresholds.beta[:] = self.best['thresholds'].beta

    def train(self):
        """
        High-level training loop with early stopping on the validation metric.
        On exit the model, its Adam state and the thresholds hold the best epoch's values.
        """
        self.config.printInfo()
        metric = self.config.eval_metric
        best_value = -np.inf
        stale = 0
        early_stopping = True
        for epoch in range(1, self.config.epochs + 1):
            record, report = self.run_epoch(epoch)
            value = report[metric]
            if epoch == 1 and report.num_users == 0:
                logger.warning("No validation users; early stopping disabled, the last epoch is kept\n")
                early_stopping = False
            logger.info("Epoch %4i : loss = % .6f |g| = %.3e pos = % .4f beta = % .4f %s = %.4f (%.2f s)\n"
                        % (epoch, record['loss'], record['grad_norm'], record['mean_positive_score'],
                           record['beta_mean'], metric, value, record['time']))
            if not early_stopping or value > best_value:
                best_value = value
                stale = 0
                self.snapshot(epoch)
            else:
                stale += 1
                if stale >= self.config.patience:
                    self.state = TRAIN_STATE.EARLY_STOPPED
                    logger.info("No improvement of %s for %i epochs; stopping\n" % (metric, stale))
                    break
        if self.state == TRAIN_STATE.RUNNING:
            self.state = TRAIN_STATE.FINISHED
        self.restore_best()
        logger.info("Best epoch %i with validation %s = %.4f\n" % (self.best['epoch'], metric, best_value))
        return self.model, self.log

def train(dataset, model, thresholds, config):
    """
    Train `model` and `thresholds` in place; returns (best model, TrainLog).
    Only families that use a threshold update `thresholds`, which may then be None.
    """
    trainer = Trainer(dataset, model, thresholds, config)
    return trainer.train()
