"""
Tests for negative sampling, evaluation and the alternating trainer
"""

import numpy as np
import pytest

from topkrec.dataset import planted_dataset
from topkrec.losses import LossSpec
from topkrec.metrics import report_keys
from topkrec.model import init
from topkrec.params import TrainConfig
from topkrec.quantile import ThresholdTable
from topkrec.trainer import Trainer, TrainLog, TRAIN_STATE, sample_negatives, evaluate, evaluate_scores, train, \
    gradient_norm_ratio, joint_inflation
from topkrec.errors import ArgumentError, TrainingDivergedError

from . import addons
localizer = addons.in_folder

def toy_config(family='talos', **kwargs):
    options = dict(loss=LossSpec(family=family, tau=0.1, K=3, num_negatives=17), epochs=200, batch_size=12, lr=0.01,
                   eval_cutoffs=[3], eval_metric='precision@3', seed=0)
    options.update(kwargs)
    return TrainConfig(**options)

def toy_run(family='talos', **kwargs):
    D = planted_dataset(num_users=4, num_items=20, num_positives=3, seed=0)
    M = init(4, 20, d=8, seed=0)
    spec = toy_config(family).loss
    T = ThresholdTable(4, 20, spec.K) if spec.uses_quantile else None
    model, log = train(D, M, T, toy_config(family, **kwargs))
    return D, model, T, log

def mean_negative_score(D, model):
    S = model.score_users(np.arange(D.num_users))
    return np.mean([np.mean(np.delete(S[u], D.train_positives(u))) for u in range(D.num_users)])

def train_precision(D, model, K=3):
    """ Precision@K of the planted training positives, every item a candidate. """
    S = model.score_users(np.arange(D.num_users))
    return np.mean([len(np.intersect1d(np.argsort(-S[u])[:K], D.train_positives(u))) / K for u in range(D.num_users)])

def test_sample_negatives():
    """ Negatives avoid training positives and carry the importance weight """
    D = planted_dataset(num_users=2, num_items=12, num_positives=4, seed=3)
    rng = np.random.default_rng(0)
    complement = np.setdiff1d(np.arange(12), D.train_positives(0))
    full = sample_negatives(D, 0, 8, rng)
    assert np.array_equal(np.sort(full.items), complement)
    assert full.weight == 1.0
    for trial in range(1000):
        neg = sample_negatives(D, 1, 3, rng)
        assert not np.intersect1d(neg.items, D.train_positives(1)).size
        assert len(np.unique(neg.items)) == 3
        assert neg.weight == pytest.approx(8 / 3)
    with pytest.raises(ArgumentError):
        sample_negatives(D, 0, 9, rng)

def test_sample_negatives_uniform():
    """ Every negative is included with probability count / |N_u| """
    D = planted_dataset(num_users=1, num_items=30, num_positives=5, seed=1)
    rng = np.random.default_rng(7)
    trials, count, n = 10000, 5, 25
    hits = np.zeros(30)
    for trial in range(trials):
        hits[sample_negatives(D, 0, count, rng).items] += 1
    p = count / n
    sigma = np.sqrt(trials * p * (1 - p))
    negatives = np.setdiff1d(np.arange(30), D.train_positives(0))
    assert np.all(np.abs(hits[negatives] - trials * p) <= 3.5 * sigma)
    assert np.all(hits[D.train_positives(0)] == 0)

def test_evaluate_oracle_scores():
    """ Oracle scores with distinct values give Recall@K = min(K, |P|) / |P| """
    D = planted_dataset(num_users=5, num_items=20, num_positives=3, seed=2, num_test=2)
    S = np.zeros((5, 20))
    for u in range(5):
        S[u, D.split_positives('test', u)] = [2.0, 1.0]
    report = evaluate_scores(S, D, 'test', [1, 5])
    assert report.num_users == 5
    assert report['recall@1'] == pytest.approx(0.5)
    assert report['recall@5'] == pytest.approx(1.0)
    assert report['precision@1'] == pytest.approx(1.0)
    assert report['mrr@1'] == pytest.approx(1.0)
    assert list(report.values.keys()) == report_keys([1, 5])

def test_evaluate_tied_positives():
    """ Tied positives share the rank of the last of them """
    D = planted_dataset(num_users=5, num_items=20, num_positives=3, seed=2, num_test=2)
    S = np.zeros((5, 20))
    for u in range(5):
        S[u, D.split_positives('test', u)] = 1.0
    report = evaluate_scores(S, D, 'test', [1, 2])
    assert report['recall@1'] == 0.0
    assert report['precision@1'] == 0.0
    assert report['mrr@1'] == 0.0
    assert report['recall@2'] == pytest.approx(1.0)
    assert report['precision@2'] == pytest.approx(1.0)
    assert report['mrr@2'] == pytest.approx(0.5)

def test_evaluate_masks_and_workers():
    """ Training positives never count, and threads do not change the result """
    D = planted_dataset(num_users=6, num_items=25, num_positives=4, seed=4, num_validation=2)
    S = np.zeros((6, 25))
    for u in range(6):
        S[u, D.train_positives(u)] = 10.0
        S[u, D.split_positives('validation', u)] = 1.0
    assert evaluate_scores(S, D, 'validation', [2])['precision@2'] == pytest.approx(1.0)
    M = init(6, 25, d=4, seed=1)
    one = evaluate(M, D, 'validation', [2, 5], workers=1)
    many = evaluate(M, D, 'validation', [2, 5], workers=3)
    assert one.values == many.values
    assert one.metadata['split'] == 'validation'

def test_evaluate_untrained_near_random():
    """ A random model ranks test positives close to chance """
    D = planted_dataset(num_users=50, num_items=200, num_positives=10, seed=5, num_test=3)
    report = evaluate(init(50, 200, d=16, seed=5), D, 'test', [20])
    assert report['precision@20'] < 0.05

def test_train_log_round_trip(localizer):
    """ JSON-lines logs load back unchanged and epochs stay contiguous """
    log = TrainLog()
    for epoch in (1, 2, 3):
        log.append({'epoch': epoch, 'loss': 1.0 / epoch, 'grad_norm_sq': 4.0 / epoch ** 2})
    log.to_jsonl('log.jsonl')
    again = TrainLog.from_jsonl('log.jsonl')
    assert again.losses == log.losses
    assert len(again) == 3
    with pytest.raises(ArgumentError):
        log.append({'epoch': 5, 'loss': 0.0})
    assert gradient_norm_ratio(log, 0.3) == pytest.approx((4.0 / 9) / 4.0)

def test_trainer_needs_thresholds():
    """ Families with a threshold need a threshold table """
    D = planted_dataset()
    with pytest.raises(ArgumentError):
        Trainer(D, init(4, 20, d=8), None, toy_config())

def test_alternation_contract():
    """ The model step sees the thresholds from before the batch and the threshold step sees updated scores """
    D = planted_dataset(num_users=4, num_items=20, num_positives=3, seed=0)
    T = ThresholdTable(4, 20, 3, beta=[0.1, -0.1, 0.2, 0.0])
    trainer = Trainer(D, init(4, 20, d=8, seed=0), T, toy_config(lr=0.05))
    before = T.beta.copy()
    examples = np.arange(12)
    trainer.train_batch(1, 0, examples)
    record = trainer.last_batch
    users = record['users']
    assert np.array_equal(record['beta_model_step'], before[users])
    pos_after, neg_after = trainer.score_examples(users, record['pos_items'], record['neg_items'])
    assert np.allclose(record['threshold_pos_scores'], pos_after)
    assert np.allclose(record['threshold_neg_scores'], neg_after)
    assert not np.array_equal(T.beta, before)
    # A positive is never among the negatives of its own example
    for b in range(len(users)):
        assert record['pos_items'][b] not in record['neg_items'][b]
    assert T.learning_rate == 1e-3

def test_early_stopping_patience():
    """ A metric that never improves stops the run after patience epochs """
    D = planted_dataset(num_users=4, num_items=20, num_positives=3, seed=0, num_validation=1)
    trainer = Trainer(D, init(4, 20, d=8), ThresholdTable(4, 20, 3), toy_config(lr=0.0, patience=1, epochs=10))
    model, log = trainer.train()
    assert len(log) == 2
    assert trainer.state == TRAIN_STATE.EARLY_STOPPED
    assert trainer.best['epoch'] == 1

def test_training_deterministic():
    """ Identical configuration and seed give identical loss sequences """
    first = toy_run(epochs=5)[3]
    second = toy_run(epochs=5)[3]
    assert first.losses == second.losses
    assert first.column('beta_mean') == second.column('beta_mean')

def test_toy_talos_recovers_planted_items():
    """ Talos training places planted positives in every user's top three """
    D, model, T, log = toy_run()
    assert len(log) == 200
    S = model.score_users(np.arange(4))
    for u in range(4):
        top = np.argsort(-S[u])[:3]
        assert len(np.intersect1d(top, D.train_positives(u))) >= 2
    assert gradient_norm_ratio(log) < 0.2
    assert joint_inflation(log) == []
    assert np.all(np.isfinite(T.beta))
    assert log.records[0]['threshold_update'] == 'per_batch'

def test_toy_ablation_without_denominator():
    """ Without the denominator nothing pushes negatives down and Precision@3 drops """
    D, talos_model, T, log = toy_run(epochs=100)
    D, plain_model, T2, log2 = toy_run('talos_wo_denominator', epochs=100)
    assert train_precision(D, talos_model) > train_precision(D, plain_model)
    assert train_precision(D, talos_model) == pytest.approx(1.0)
    assert mean_negative_score(D, plain_model) > mean_negative_score(D, talos_model)

def test_softmax_and_bpr_run():
    """ Baselines train without thresholds """
    for family in ('softmax', 'bpr', 'talos_wo_quantile'):
        D, model, T, log = toy_run(family, epochs=3)
        assert T is None
        assert len(log) == 3
        assert np.all(np.isfinite(log.losses))

def test_divergence_reported():
    """ Exploding parameters abort with the epoch and batch """
    D = planted_dataset(num_users=4, num_items=20, num_positives=3, seed=0)
    config = toy_config(lr=1e6, weight_decay=1.0, batch_size=1, epochs=100)
    with pytest.raises(TrainingDivergedError) as excinfo:
        train(D, init(4, 20, d=8), ThresholdTable(4, 20, 3), config)
    assert 'epoch' in str(excinfo.value)
