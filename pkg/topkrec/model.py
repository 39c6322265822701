"""
model.py: Matrix-factorization backbone with cosine scoring, sparse Adam updates and checkpoints
"""

import json
from collections import OrderedDict

import numpy as np

from .errors import ArgumentError, CheckpointError, NumericalError
from .quantile import ThresholdTable

CHECKPOINT_VERSION = 1
PARAMETERS = ('user_embeddings', 'item_embeddings')

def normalize_rows(X):
    """
    Return unit-length rows of X and the original row norms.
    Rows of zero norm stay zero, so every score they take part in is 0.
    """
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=-1)
    safe = np.where(norms == 0, 1.0, norms)
    unit = X / safe[..., np.newaxis]
    unit[norms == 0] = 0.0
    return unit, norms

def normalize_backward(unit, norms, dunit):
    """ Chain rule through x -> x/|x|: (g - (g.n) n) / |x|, zero for zero-norm rows. """
    proj = np.sum(dunit * unit, axis=-1)
    safe = np.where(norms == 0, 1.0, norms)
    dx = (dunit - proj[..., np.newaxis] * unit) / safe[..., np.newaxis]
    dx[norms == 0] = 0.0
    return dx

class FactorModel(object):
    """
    User and item embedding matrices; s_ui is the cosine of the two rows, in [-1, 1].
    """
    def __init__(self, user_embeddings, item_embeddings, seed=None):
        self.user_embeddings = np.array(user_embeddings, dtype=float)
        self.item_embeddings = np.array(item_embeddings, dtype=float)
        self.seed = seed
        if self.user_embeddings.ndim != 2 or self.item_embeddings.ndim != 2 or \
           self.user_embeddings.shape[1] != self.item_embeddings.shape[1] or self.user_embeddings.shape[1] < 1:
            raise ArgumentError("Embedding matrices must be 2-D with a common dimension >= 1")

    @property
    def dim(self):
        return self.user_embeddings.shape[1]

    @property
    def num_users(self):
        return self.user_embeddings.shape[0]

    @property
    def num_items(self):
        return self.item_embeddings.shape[0]

    def copy(self):
        return FactorModel(self.user_embeddings, self.item_embeddings, self.seed)

    def unit_users(self, users=None):
        return normalize_rows(self.user_embeddings if users is None else self.user_embeddings[users])[0]

    def unit_items(self, items=None):
        return normalize_rows(self.item_embeddings if items is None else self.item_embeddings[items])[0]

    def score(self, u, i):
        """ Cosine similarity of user u and item i. """
        return float(np.clip(np.dot(self.unit_users([u])[0], self.unit_items([i])[0]), -1.0, 1.0))

    def score_block(self, u, items):
        """ Scores of user u against a list of items. """
        items = np.asarray(items, dtype=np.int64)
        if len(items) == 0:
            return np.zeros(0)
        return np.clip(self.unit_items(items).dot(self.unit_users([u])[0]), -1.0, 1.0)

    def score_users(self, users):
        """ Dense score matrix of shape (len(users), num_items). """
        return np.clip(self.unit_users(users).dot(self.unit_items().T), -1.0, 1.0)

def score(model, u, i):
    return model.score(u, i)

def score_block(model, u, items):
    return model.score_block(u, items)

def init(num_users, num_items, d=64, seed=0, std=0.1):
    """ Embeddings drawn from normal(0, std) with a seeded generator. """
    if num_users < 1 or num_items < 1 or d < 1:
        raise ArgumentError("num_users, num_items and d must be at least 1")
    rng = np.random.default_rng(seed)
    U = rng.normal(0.0, std, size=(num_users, d))
    V = rng.normal(0.0, std, size=(num_items, d))
    return FactorModel(U, V, seed=seed)

class SparseGradient(object):
    """ Gradient rows keyed by parameter name; duplicate rows are summed. """
    def __init__(self):
        self._parts = OrderedDict((name, []) for name in PARAMETERS)

    def add(self, name, rows, values):
        rows = np.asarray(rows, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        if len(rows):
            self._parts[name].append((rows, values))

    def merge(self, other):
        for name, parts in other._parts.items():
            self._parts[name].extend(parts)
        return self

    def items(self):
        """ Yield (name, (sorted unique rows, summed gradient rows)). """
        for name, parts in self._parts.items():
            if not parts:
                continue
            rows = np.concatenate([p[0] for p in parts])
            vals = np.concatenate([p[1] for p in parts])
            uniq, inv = np.unique(rows, return_inverse=True)
            out = np.zeros((len(uniq), vals.shape[1]))
            np.add.at(out, inv, vals)
            yield name, (uniq, out)

    def norm(self):
        return float(np.sqrt(sum(np.sum(g ** 2) for name, (rows, g) in self.items())))

def cosine_gradients(model, users, dscores, items=None):
    """
    Backpropagate dL/ds through cosine scoring.

    Parameters
    ----------
    model : FactorModel
    users : np.ndarray, shape (B,)
        User of every row of dscores; rows may repeat
    dscores : np.ndarray, shape (B, n)
        Gradient of the loss with respect to s[users[b], items[c]]
    items : np.ndarray, shape (n,), optional
        Item of every column; defaults to all items

    Returns
    -------
    SparseGradient
        Rows of every user in `users` and of every item with a nonzero column
    """
    users = np.asarray(users, dtype=np.int64)
    item_rows = np.arange(model.num_items) if items is None else np.asarray(items, dtype=np.int64)
    Un, un = normalize_rows(model.user_embeddings[users])
    Vn, vn = normalize_rows(model.item_embeddings[item_rows])
    dU = normalize_backward(Un, un, dscores.dot(Vn))
    dV = normalize_backward(Vn, vn, dscores.T.dot(Un))
    touched = np.any(dscores != 0, axis=0)
    grads = SparseGradient()
    grads.add('user_embeddings', users, dU)
    grads.add('item_embeddings', item_rows[touched], dV[touched])
    return grads

class AdamState(object):
    """ Adam moments of both embedding matrices with decoupled weight decay. """
    def __init__(self, model, learning_rate=1e-2, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = OrderedDict((name, np.zeros_like(getattr(model, name))) for name in PARAMETERS)
        self.v = OrderedDict((name, np.zeros_like(getattr(model, name))) for name in PARAMETERS)

    def copy(self):
        other = AdamState.__new__(AdamState)
        other.__dict__.update(self.__dict__)
        other.m = OrderedDict((k, v.copy()) for k, v in self.m.items())
        other.v = OrderedDict((k, v.copy()) for k, v in self.v.items())
        return other

def apply_gradients(model, state, grads):
    """
    One Adam step on the rows present in `grads`. Weight decay and moment updates touch
    only those rows; bias correction uses the global step count.
    """
    coalesced = list(grads.items())
    for name, (rows, g) in coalesced:
        if not np.all(np.isfinite(g)):
            raise NumericalError("Non-finite gradient in %s" % name)
    state.step += 1
    t = state.step
    lr = state.learning_rate
    for name, (rows, g) in coalesced:
        P = getattr(model, name)
        m = state.m[name]
        v = state.v[name]
        if state.weight_decay:
            P[rows] -= lr * state.weight_decay * P[rows]
        m[rows] = state.beta1 * m[rows] + (1.0 - state.beta1) * g
        v[rows] = state.beta2 * v[rows] + (1.0 - state.beta2) * g * g
        mhat = m[rows] / (1.0 - state.beta1 ** t)
        vhat = v[rows] / (1.0 - state.beta2 ** t)
        P[rows] -= lr * mhat / (np.sqrt(vhat) + state.eps)
    return model

#=========================#
#|      Checkpoints      |#
#=========================#
def save_checkpoint(fnm, model, state=None, thresholds=None, metadata=None):
    """ Write model, optimizer state and thresholds to a versioned .npz archive. """
    arrays = OrderedDict()
    arrays['format_version'] = np.int64(CHECKPOINT_VERSION)
    arrays['dim'] = np.int64(model.dim)
    arrays['seed'] = np.int64(-1 if model.seed is None else model.seed)
    arrays['user_embeddings'] = model.user_embeddings
    arrays['item_embeddings'] = model.item_embeddings
    if state is not None:
        arrays['adam_hyper'] = np.array([state.learning_rate, state.weight_decay, state.beta1, state.beta2, state.eps])
        arrays['adam_step'] = np.int64(state.step)
        for name in PARAMETERS:
            arrays['adam_m_' + name] = state.m[name]
            arrays['adam_v_' + name] = state.v[name]
    if thresholds is not None:
        for key, val in thresholds.as_arrays().items():
            arrays['threshold_' + key] = val
    arrays['metadata'] = np.array(json.dumps(metadata if metadata is not None else {}, sort_keys=True))
    with open(fnm, 'wb') as f:
        np.savez(f, **arrays)

def load_checkpoint(fnm):
    """
    Read a checkpoint written by save_checkpoint.

    Returns
    -------
    model : FactorModel
    state : AdamState or None
    thresholds : ThresholdTable or None
    metadata : dict
    """
    try:
        data = np.load(fnm, allow_pickle=False)
    except (IOError, ValueError) as e:
        raise CheckpointError("Cannot read checkpoint %s: %s" % (fnm, e))
    with data:
        if 'format_version' not in data.files or int(data['format_version']) != CHECKPOINT_VERSION:
            raise CheckpointError("%s is not a version %i checkpoint" % (fnm, CHECKPOINT_VERSION))
        seed = int(data['seed'])
        model = FactorModel(data['user_embeddings'], data['item_embeddings'], seed=None if seed < 0 else seed)
        state = None
        if 'adam_step' in data.files:
            lr, wd, b1, b2, eps = data['adam_hyper']
            state = AdamState(model, float(lr), float(wd), float(b1), float(b2), float(eps))
            state.step = int(data['adam_step'])
            for name in PARAMETERS:
                state.m[name] = data['adam_m_' + name].copy()
                state.v[name] = data['adam_v_' + name].copy()
        thresholds = None
        if 'threshold_beta' in data.files:
            thresholds = ThresholdTable.from_arrays(dict((key[len('threshold_'):], data[key]) for key in data.files
                                                         if key.startswith('threshold_')))
        metadata = json.loads(str(data['metadata']))
    return model, state, thresholds, metadata
