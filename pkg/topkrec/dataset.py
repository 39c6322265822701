"""
dataset.py: Interaction logs, k-core filtering and reproducible train/validation/test splits

An InteractionDataset maps external user and item ids onto dense indices and stores,
for every user, sorted positive-item index arrays for each of the three splits.
"""

import json
from collections import namedtuple, OrderedDict

import networkx as nx
import numpy as np

from .errors import DatasetFormatError, EmptyDatasetError, MissingTimestampError, SplitFormatError, ArgumentError
from .nifty import logger, natural_sort

SPLIT_FORMAT_VERSION = 1
SPLIT_HEADER = "# topkrec-split"
SPLITS = ('train', 'validation', 'test')

RawInteraction = namedtuple('RawInteraction', ['user', 'item', 'rating', 'timestamp'])

def floor_count(n, fraction):
    """ Number of items taken by floor(n * fraction), robust to binary rounding (0.2 * 10 is 2). """
    return int(np.floor(n * fraction + 1e-9))

def parse_line(line, lineno):
    """
    Parse one line of an interaction log into a RawInteraction.

    Fields are whitespace- or tab-separated: user item [rating] [timestamp].
    Blank lines and lines starting with '#' return None.
    """
    s = line.strip()
    if not s or s.startswith('#'):
        return None
    fields = s.split()
    if len(fields) < 2 or len(fields) > 4:
        raise DatasetFormatError("Line %i: expected 2 to 4 fields (user item [rating] [timestamp]), found %i"
                                 % (lineno, len(fields)), lineno=lineno)
    rating = None
    timestamp = None
    if len(fields) >= 3:
        try:
            rating = float(fields[2])
        except ValueError:
            raise DatasetFormatError("Line %i: rating %r is not a number" % (lineno, fields[2]), lineno=lineno)
        if not np.isfinite(rating):
            raise DatasetFormatError("Line %i: rating %r is not finite" % (lineno, fields[2]), lineno=lineno)
    if len(fields) == 4:
        try:
            timestamp = int(fields[3])
        except ValueError:
            raise DatasetFormatError("Line %i: timestamp %r is not an integer" % (lineno, fields[3]), lineno=lineno)
        if timestamp < 0:
            raise DatasetFormatError("Line %i: timestamp %i is negative" % (lineno, timestamp), lineno=lineno)
    return RawInteraction(fields[0], fields[1], rating, timestamp)

def read_interactions(path):
    """ Read all interactions of a text file; raises DatasetFormatError with the line number. """
    records = []
    with open(path, encoding='utf-8') as f:
        for lineno, line in enumerate(f, start=1):
            rec = parse_line(line, lineno)
            if rec is not None:
                records.append(rec)
    return records

def kcore_filter(pairs, core):
    """
    Iteratively remove users and items with fewer than `core` interactions until a fixpoint.

    Parameters
    ----------
    pairs : list of (user, item) tuples
        Duplicate-free external-id pairs
    core : int
        Minimum degree of every remaining user and item

    Returns
    -------
    list of (user, item) tuples
        The surviving pairs, in input order
    """
    if core <= 1 or not pairs:
        return list(pairs)
    G = nx.Graph()
    G.add_edges_from((('u', u), ('i', i)) for u, i in pairs)
    kept = set(nx.k_core(G, k=core).nodes())
    return [(u, i) for u, i in pairs if ('u', u) in kept and ('i', i) in kept]


class InteractionDataset(object):
    """
    Immutable store of user/item interactions.

    Attributes
    ----------
    user_ids, item_ids : list of str
        External ids; the position in the list is the dense index.
    interactions : dict of np.ndarray
        'users', 'items', 'timestamps' (-1 when absent) for every post-filter interaction,
        sorted by (user, item).
    splits : dict
        Split name -> list (one entry per user) of sorted item index arrays. Empty lists
        before a split has been made.
    mode : str or None
        'iid', 'temporal', or None for an unsplit dataset.
    metadata : OrderedDict
        Filtering and splitting statistics.
    """
    def __init__(self, user_ids, item_ids, interactions, splits=None, mode=None, metadata=None):
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_index = dict((u, n) for n, u in enumerate(self.user_ids))
        self.item_index = dict((i, n) for n, i in enumerate(self.item_ids))
        if len(self.user_index) != len(self.user_ids) or len(self.item_index) != len(self.item_ids):
            raise ArgumentError("External ids must be unique")
        self.interactions = {}
        for key in ('users', 'items', 'timestamps'):
            arr = np.array(interactions[key], dtype=np.int64)
            arr.setflags(write=False)
            self.interactions[key] = arr
        self.mode = mode
        self.metadata = OrderedDict(metadata if metadata is not None else [])
        self.splits = OrderedDict()
        for name in SPLITS:
            lists = []
            if splits is not None and name in splits:
                for u in range(self.num_users):
                    arr = np.unique(np.asarray(splits[name][u], dtype=np.int64))
                    arr.setflags(write=False)
                    lists.append(arr)
            self.splits[name] = lists
        self._check()

    def _check(self):
        if len(self.interactions['items']) and self.interactions['items'].max() >= self.num_items:
            raise ArgumentError("Item index out of range")
        if not self.is_split:
            return
        for u in range(self.num_users):
            tr, va, te = [self.splits[name][u] for name in SPLITS]
            if len(np.intersect1d(tr, va)) or len(np.intersect1d(tr, te)) or len(np.intersect1d(va, te)):
                raise ArgumentError("Splits of user %s are not disjoint" % self.user_ids[u])

    @classmethod
    def from_positives(cls, train, num_items, validation=None, test=None, mode='iid', user_ids=None, item_ids=None,
                       metadata=None):
        """ Build a split dataset directly from per-user index lists. """
        num_users = len(train)
        empty = [[] for u in range(num_users)]
        splits = {'train': train, 'validation': validation if validation is not None else empty,
                  'test': test if test is not None else empty}
        users, items = [], []
        for u in range(num_users):
            pos = np.unique(np.concatenate([np.asarray(splits[name][u], dtype=np.int64) for name in SPLITS]))
            users.extend([u] * len(pos))
            items.extend(pos.tolist())
        if user_ids is None: user_ids = [str(u) for u in range(num_users)]
        if item_ids is None: item_ids = [str(i) for i in range(num_items)]
        interactions = {'users': users, 'items': items, 'timestamps': [-1] * len(users)}
        return cls(user_ids, item_ids, interactions, splits=splits, mode=mode, metadata=metadata)

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_items(self):
        return len(self.item_ids)

    @property
    def num_interactions(self):
        return len(self.interactions['users'])

    @property
    def is_split(self):
        return len(self.splits['train']) == self.num_users and self.num_users > 0

    @property
    def has_timestamps(self):
        return bool(np.all(self.interactions['timestamps'] >= 0))

    def positives(self, user):
        """ All post-filter positives of a user. """
        sel = self.interactions['users'] == user
        return self.interactions['items'][sel]

    def split_positives(self, split, user):
        if split not in SPLITS:
            raise ArgumentError("Unknown split %r, choose from %s" % (split, ', '.join(SPLITS)))
        if not self.is_split:
            raise ArgumentError("Dataset has not been split")
        return self.splits[split][user]

    def train_positives(self, user):
        return self.split_positives('train', user)

    def train_pairs(self):
        """ Return (users, items) arrays of every training pair in (user, item) order. """
        users = np.concatenate([np.full(len(p), u, dtype=np.int64) for u, p in enumerate(self.splits['train'])] +
                               [np.zeros(0, dtype=np.int64)])
        items = np.concatenate(list(self.splits['train']) + [np.zeros(0, dtype=np.int64)])
        return users, items

    def split_size(self, split):
        return int(sum(len(p) for p in self.splits[split]))

    def summary(self):
        """ Counts of users, items and interactions per split. """
        out = OrderedDict([('users', self.num_users), ('items', self.num_items),
                           ('interactions', self.num_interactions), ('mode', self.mode)])
        if self.is_split:
            for name in SPLITS:
                out[name] = self.split_size(name)
        return out

    def __repr__(self):
        return "InteractionDataset(%s)" % ', '.join('%s=%s' % kv for kv in self.summary().items())


def load(path, config):
    """
    Read an interaction log, drop low ratings, apply iterative k-core filtering
    and build deterministic index maps.

    Parameters
    ----------
    path : str
        UTF-8 text file, one interaction per line
    config : SplitConfig
        Supplies min_rating and core

    Returns
    -------
    InteractionDataset
        Unsplit dataset (mode None)
    """
    records = read_interactions(path)
    nraw = len(records)
    if config.min_rating is not None:
        records = [r for r in records if r.rating is None or r.rating >= config.min_rating]
    nrated = len(records)
    # Duplicate (user, item) rows collapse, keeping the earliest timestamp
    earliest = OrderedDict()
    for r in records:
        key = (r.user, r.item)
        ts = -1 if r.timestamp is None else r.timestamp
        if key not in earliest:
            earliest[key] = ts
        elif ts >= 0 and (earliest[key] < 0 or ts < earliest[key]):
            earliest[key] = ts
    pairs = kcore_filter(list(earliest.keys()), config.core)
    if not pairs:
        raise EmptyDatasetError("No interactions left in %s after filtering (min_rating=%s, core=%i)"
                                % (path, config.min_rating, config.core))
    user_ids = natural_sort(set(u for u, i in pairs))
    item_ids = natural_sort(set(i for u, i in pairs))
    uidx = dict((u, n) for n, u in enumerate(user_ids))
    iidx = dict((i, n) for n, i in enumerate(item_ids))
    rows = sorted((uidx[u], iidx[i], earliest[(u, i)]) for u, i in pairs)
    interactions = {'users': [r[0] for r in rows], 'items': [r[1] for r in rows], 'timestamps': [r[2] for r in rows]}
    metadata = OrderedDict([('source', str(path)), ('raw_interactions', nraw), ('rating_filtered', nraw - nrated),
                            ('duplicates', nrated - len(earliest)), ('kcore_removed', len(earliest) - len(pairs)),
                            ('min_rating', config.min_rating), ('core', config.core)])
    logger.info("Loaded %i interactions from %s; %i users, %i items after filtering\n"
                % (len(rows), path, len(user_ids), len(item_ids)))
    return InteractionDataset(user_ids, item_ids, interactions, metadata=metadata)

def split_iid(dataset, config):
    """
    Per-user random split: a (1 - train_fraction) share of each user's positives goes to test
    (floor), and a validation_fraction share of the remaining train pool goes to validation (floor).
    Users with a single positive are dropped.
    """
    rng = np.random.default_rng(config.seed)
    keep = []
    lists = {name: [] for name in SPLITS}
    dropped = 0
    for u in range(dataset.num_users):
        pos = dataset.positives(u)
        if len(pos) < 2:
            dropped += 1
            continue
        perm = pos[rng.permutation(len(pos))]
        ntest = floor_count(len(pos), 1.0 - config.train_fraction)
        pool = perm[ntest:]
        nval = floor_count(len(pool), config.validation_fraction)
        lists['test'].append(perm[:ntest])
        lists['validation'].append(pool[:nval])
        lists['train'].append(pool[nval:])
        keep.append(u)
    if not keep:
        raise EmptyDatasetError("No user has at least two positives; nothing to split")
    if dropped:
        logger.warning("Dropped %i users with a single positive\n" % dropped)
    keep = np.array(keep, dtype=np.int64)
    remap = -np.ones(dataset.num_users, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    sel = remap[dataset.interactions['users']] >= 0
    interactions = {'users': remap[dataset.interactions['users'][sel]], 'items': dataset.interactions['items'][sel],
                    'timestamps': dataset.interactions['timestamps'][sel]}
    metadata = OrderedDict(dataset.metadata)
    metadata.update([('split', 'iid'), ('seed', int(config.seed)), ('train_fraction', config.train_fraction),
                     ('validation_fraction', config.validation_fraction), ('dropped_users', dropped)])
    return InteractionDataset([dataset.user_ids[u] for u in keep], dataset.item_ids, interactions,
                              splits=lists, mode='iid', metadata=metadata)

def split_temporal(dataset, config):
    """
    Global temporal split: interactions sorted by (timestamp, user, item); the earliest
    train_fraction form the train pool and the rest the test set. A seeded random
    validation_fraction of the train pool becomes validation.
    """
    ts = dataset.interactions['timestamps']
    missing = int(np.sum(ts < 0))
    if missing:
        raise MissingTimestampError("Temporal split requires timestamps; %i interaction lines have none" % missing,
                                    count=missing)
    users = dataset.interactions['users']
    items = dataset.interactions['items']
    order = np.lexsort((items, users, ts))
    n = len(order)
    npool = n - floor_count(n, 1.0 - config.train_fraction)
    pool, test = order[:npool], order[npool:]
    rng = np.random.default_rng(config.seed)
    nval = floor_count(npool, config.validation_fraction)
    shuffled = pool[rng.permutation(npool)]
    validation, train = shuffled[:nval], shuffled[nval:]
    lists = {}
    for name, rows in (('train', train), ('validation', validation), ('test', test)):
        lists[name] = [[] for u in range(dataset.num_users)]
        for r in rows:
            lists[name][users[r]].append(items[r])
    cold = sum(1 for u in range(dataset.num_users) if not lists['train'][u])
    metadata = OrderedDict(dataset.metadata)
    metadata.update([('split', 'temporal'), ('seed', int(config.seed)), ('train_fraction', config.train_fraction),
                     ('validation_fraction', config.validation_fraction), ('cold_start_users', cold)])
    if cold:
        logger.info("%i users have no training interactions and are skipped at evaluation\n" % cold)
    return InteractionDataset(dataset.user_ids, dataset.item_ids, dataset.interactions, splits=lists,
                              mode='temporal', metadata=metadata)

def split(dataset, config):
    """ Dispatch on config.mode. """
    if config.mode == 'iid':
        return split_iid(dataset, config)
    elif config.mode == 'temporal':
        return split_temporal(dataset, config)
    raise ArgumentError("Unknown split mode %r" % config.mode)

def save(dataset, path):
    """ Write a split dataset as versioned line-delimited text; identical datasets give identical bytes. """
    if not dataset.is_split:
        raise ArgumentError("Only split datasets can be saved")
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write("%s %i\n" % (SPLIT_HEADER, SPLIT_FORMAT_VERSION))
        f.write("mode %s\n" % dataset.mode)
        f.write("users %i\n" % dataset.num_users)
        f.write("items %i\n" % dataset.num_items)
        f.write("meta %s\n" % json.dumps(dataset.metadata, sort_keys=True))
        for n, u in enumerate(dataset.user_ids):
            f.write("user %i %s\n" % (n, u))
        for n, i in enumerate(dataset.item_ids):
            f.write("item %i %s\n" % (n, i))
        for name in SPLITS:
            for u, pos in enumerate(dataset.splits[name]):
                for i in pos:
                    f.write("%s %i %i\n" % (name, u, i))

def load_split(path):
    """ Read a file written by save(). """
    with open(path, encoding='utf-8') as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith(SPLIT_HEADER):
        raise SplitFormatError("%s is not a topkrec split file" % path)
    try:
        version = int(lines[0].split()[-1])
    except ValueError:
        raise SplitFormatError("%s has an unreadable header %r" % (path, lines[0]))
    if version != SPLIT_FORMAT_VERSION:
        raise SplitFormatError("%s has split format version %i, expected %i" % (path, version, SPLIT_FORMAT_VERSION))
    header = {}
    user_ids, item_ids = [], []
    lists = None
    for lineno, line in enumerate(lines[1:], start=2):
        key, _, rest = line.partition(' ')
        if key in ('mode', 'users', 'items'):
            header[key] = rest
        elif key == 'meta':
            header['meta'] = json.loads(rest, object_pairs_hook=OrderedDict)
        elif key == 'user':
            user_ids.append(rest.split(' ', 1)[1])
        elif key == 'item':
            item_ids.append(rest.split(' ', 1)[1])
        elif key in SPLITS:
            if lists is None:
                lists = {name: [[] for u in range(int(header['users']))] for name in SPLITS}
            u, i = rest.split()
            lists[key][int(u)].append(int(i))
        else:
            raise SplitFormatError("%s line %i: unknown record %r" % (path, lineno, key))
    if len(user_ids) != int(header.get('users', -1)) or len(item_ids) != int(header.get('items', -1)):
        raise SplitFormatError("%s: user or item count does not match the header" % path)
    if lists is None:
        lists = {name: [[] for u in range(len(user_ids))] for name in SPLITS}
    return InteractionDataset.from_positives(lists['train'], len(item_ids), validation=lists['validation'],
                                             test=lists['test'], mode=header['mode'], user_ids=user_ids,
                                             item_ids=item_ids, metadata=header.get('meta'))

def planted_dataset(num_users=4, num_items=20, num_positives=3, seed=0, num_validation=0, num_test=0):
    """
    Synthetic dataset where every user has `num_positives` planted training items drawn
    at random, plus optional planted validation and test items.
    """
    rng = np.random.default_rng(seed)
    total = num_positives + num_validation + num_test
    if total >= num_items:
        raise ArgumentError("Cannot plant %i positives among %i items" % (total, num_items))
    train, validation, test = [], [], []
    for u in range(num_users):
        picks = rng.choice(num_items, size=total, replace=False)
        train.append(np.sort(picks[:num_positives]))
        validation.append(np.sort(picks[num_positives:num_positives + num_validation]))
        test.append(np.sort(picks[num_positives + num_validation:]))
    metadata = OrderedDict([('source', 'planted'), ('seed', int(seed))])
    return InteractionDataset.from_positives(train, num_items, validation=validation, test=test, mode='iid',
                                             metadata=metadata)
