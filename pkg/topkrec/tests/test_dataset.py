"""
Tests for loading, filtering, splitting and serializing interaction data
"""

import os

import numpy as np
import pytest

import topkrec
from topkrec.dataset import load, split, split_iid, split_temporal, save, load_split, planted_dataset, \
    floor_count, parse_line, InteractionDataset
from topkrec.errors import DatasetFormatError, EmptyDatasetError, MissingTimestampError, SplitFormatError, \
    ArgumentError
from topkrec.params import SplitConfig

from . import addons
localizer = addons.in_folder

def test_floor_count():
    """ Floor rule with binary rounding guard """
    assert floor_count(10, 0.2) == 2
    assert floor_count(10, 1 - 0.8) == 2
    assert floor_count(8, 0.1) == 0
    assert floor_count(30, 0.1) == 3

def test_parse_line():
    """ Parse the optional rating and timestamp fields """
    assert parse_line("   ", 1) is None
    assert parse_line("# comment", 1) is None
    r = parse_line("u1\ti2", 3)
    assert (r.user, r.item, r.rating, r.timestamp) == ('u1', 'i2', None, None)
    r = parse_line("u1 i2 4.5 100", 3)
    assert (r.rating, r.timestamp) == (4.5, 100)
    for bad in ("u1 i2 nan", "u1 i2 4 -3", "u1 i2 4 1.5", "u1 i2 4 1 extra"):
        with pytest.raises(DatasetFormatError):
            parse_line(bad, 9)

def test_load_no_filtering(localizer):
    """ Four lines without ratings and no k-core keep all four interactions """
    addons.write_interactions('four.txt', [('a', 'x'), ('a', 'y'), ('b', 'x'), ('c', 'z')])
    D = load('four.txt', SplitConfig(core=0, min_rating=None))
    assert D.num_interactions == 4
    assert D.num_users == 3
    assert D.num_items == 3
    assert not D.is_split

def test_kcore_fixpoint(localizer):
    """ Removing a degree-1 item pushes its user below the core, which is removed too """
    rows = [('u1', 'i1'), ('u1', 'i2'), ('u2', 'i1'), ('u2', 'i2'), ('u3', 'i1'), ('u3', 'i9')]
    addons.write_interactions('core.txt', rows)
    D = load('core.txt', SplitConfig(core=2, min_rating=None))
    assert D.user_ids == ['u1', 'u2']
    assert D.item_ids == ['i1', 'i2']
    assert D.num_interactions == 4

def test_kcore_degrees():
    """ Every remaining user and item has at least `core` interactions """
    D = load(addons.ratings_small, SplitConfig(core=4))
    assert D.num_users == 12
    assert D.num_items == 15
    assert D.num_interactions == 84
    assert np.bincount(D.interactions['users']).min() >= 4
    assert np.bincount(D.interactions['items']).min() >= 4
    D5 = load(addons.ratings_small, SplitConfig(core=5))
    assert np.bincount(D5.interactions['users']).min() >= 5
    assert np.bincount(D5.interactions['items']).min() >= 5
    assert D5.num_interactions < 84

def test_empty_after_filtering():
    """ A core larger than any degree leaves nothing """
    with pytest.raises(EmptyDatasetError):
        load(addons.ratings_small, SplitConfig(core=10))

def test_rating_filter_and_duplicates(localizer):
    """ Low ratings are dropped and duplicates keep the earliest timestamp """
    addons.write_interactions('dup.txt', [('u1', 'i1', 5, 50), ('u1', 'i1', 4, 20), ('u1', 'i2', 1, 5),
                                          ('u2', 'i1', 3, 7)])
    D = load('dup.txt', SplitConfig(core=0))
    assert D.num_interactions == 2
    assert D.item_ids == ['i1']
    assert list(D.interactions['timestamps']) == [20, 7]
    assert D.metadata['duplicates'] == 1
    assert D.metadata['rating_filtered'] == 1

def test_natural_sort_ids(localizer):
    """ External ids are indexed in natural order regardless of file order """
    addons.write_interactions('ids.txt', [('u10', 'i1'), ('u2', 'i1'), ('u1', 'i1')])
    D = load('ids.txt', SplitConfig(core=0, min_rating=None))
    assert D.user_ids == ['u1', 'u2', 'u10']

def test_split_iid_counts(localizer):
    """ Ten positives give two test items and eight train items """
    addons.write_interactions('ten.txt', [('u1', 'i%i' % i) for i in range(10)] + [('u2', 'i0'), ('u2', 'i1')])
    D = split_iid(load('ten.txt', SplitConfig(core=0, min_rating=None)), SplitConfig(core=0, seed=3))
    u = D.user_index['u1']
    assert len(D.splits['test'][u]) == 2
    assert len(D.splits['validation'][u]) == 0
    assert len(D.splits['train'][u]) == 8

def test_split_iid_partition_and_determinism():
    """ Splits partition each user's positives and depend only on the seed """
    config = SplitConfig(core=4, seed=11)
    D = load(addons.ratings_small, config)
    S1 = split_iid(D, config)
    S2 = split_iid(D, config)
    for u in range(S1.num_users):
        parts = [S1.splits[name][u] for name in ('train', 'validation', 'test')]
        union = np.sort(np.concatenate(parts))
        assert np.array_equal(union, np.sort(D.positives(D.user_index[S1.user_ids[u]])))
        assert len(union) == len(np.unique(union))
        for name in ('train', 'validation', 'test'):
            assert np.array_equal(S1.splits[name][u], S2.splits[name][u])

def test_split_iid_drops_single_positive(localizer):
    """ A user with one positive is dropped and counted """
    addons.write_interactions('single.txt', [('u1', 'i1'), ('u1', 'i2'), ('u2', 'i1')])
    D = split_iid(load('single.txt', SplitConfig(core=0, min_rating=None)), SplitConfig(core=0))
    assert D.user_ids == ['u1']
    assert D.metadata['dropped_users'] == 1

def test_split_temporal_cut(localizer):
    """ Ten interactions with distinct timestamps: earliest eight form the train pool """
    rows = [('u%i' % (n // 2), 'i%i' % n, 5, 100 + n) for n in range(10)]
    addons.write_interactions('time.txt', rows)
    config = SplitConfig(mode='temporal', core=0)
    D = split_temporal(load('time.txt', config), config)
    assert D.split_size('test') == 2
    assert D.split_size('train') + D.split_size('validation') == 8
    # The last user only appears in the test split
    last = D.user_index['u4']
    assert len(D.splits['train'][last]) == 0
    assert D.metadata['cold_start_users'] == 1

def test_split_temporal_ties(localizer):
    """ Equal timestamps are cut by (user, item) index """
    rows = [('u%i' % (n % 5), 'i%i' % n, 5, 42) for n in range(10)]
    addons.write_interactions('ties.txt', rows)
    config = SplitConfig(mode='temporal', core=0, validation_fraction=0.01)
    D = split(load('ties.txt', config), config)
    assert D.split_size('test') == 2
    # The two largest (user, item) pairs belong to user u4
    u4 = D.user_index['u4']
    assert len(D.splits['test'][u4]) == 2

def test_split_temporal_missing_timestamp(localizer):
    """ Temporal splits need a timestamp on every line """
    addons.write_interactions('partial.txt', [('u1', 'i1', 5, 1), ('u1', 'i2', 5), ('u2', 'i1', 5)])
    config = SplitConfig(mode='temporal', core=0)
    with pytest.raises(MissingTimestampError) as excinfo:
        split(load('partial.txt', config), config)
    assert excinfo.value.count == 2

def test_save_load_split(localizer):
    """ Serialized splits are byte-identical for identical inputs and load back unchanged """
    config = SplitConfig(core=4, seed=5)
    D = split(load(addons.ratings_small, config), config)
    save(D, 'a.split')
    save(split(load(addons.ratings_small, config), config), 'b.split')
    with open('a.split', 'rb') as fa, open('b.split', 'rb') as fb:
        assert fa.read() == fb.read()
    L = load_split('a.split')
    assert L.user_ids == D.user_ids
    assert L.item_ids == D.item_ids
    assert L.mode == 'iid'
    for name in ('train', 'validation', 'test'):
        for u in range(D.num_users):
            assert np.array_equal(L.splits[name][u], D.splits[name][u])
    assert L.summary() == D.summary()

def test_load_split_bad_version(localizer):
    """ Unknown format versions are rejected """
    with open('old.split', 'w') as f:
        f.write("# topkrec-split 99\nmode iid\n")
    with pytest.raises(SplitFormatError):
        load_split('old.split')

def test_immutable_arrays():
    """ Stored positives cannot be modified in place """
    D = planted_dataset(num_users=3, num_items=10, num_positives=2, num_test=1)
    with pytest.raises(ValueError):
        D.splits['train'][0][0] = 5

def test_from_positives_disjoint():
    """ Overlapping split lists are rejected """
    with pytest.raises(ArgumentError):
        InteractionDataset.from_positives([[0, 1]], 5, test=[[1]])

def test_planted_dataset():
    """ Planted positives are disjoint across splits """
    D = planted_dataset(num_users=4, num_items=20, num_positives=3, seed=1, num_validation=1, num_test=2)
    assert D.is_split
    assert D.split_size('train') == 12
    assert D.split_size('validation') == 4
    assert D.split_size('test') == 8
    with pytest.raises(ArgumentError):
        planted_dataset(num_items=5, num_positives=5)
