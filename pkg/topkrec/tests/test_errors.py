"""
Unit and regression tests for topkrec.errors module
"""

import pytest

import topkrec
from topkrec.errors import Error, DatasetError, DatasetFormatError, EmptyDatasetError, MissingTimestampError, \
    SplitFormatError, ArgumentError, ConfigError, NumericalError, TrainingDivergedError, CheckpointError, \
    VerificationError

from . import addons
localizer = addons.in_folder

def test_error_types():
    """ Test the exception tree """
    with pytest.raises(Exception):
        raise Error
    for exc in (DatasetFormatError, EmptyDatasetError, MissingTimestampError, SplitFormatError):
        with pytest.raises(DatasetError):
            raise exc("bad data")
    for exc in (DatasetError, ArgumentError, ConfigError, NumericalError, CheckpointError, VerificationError):
        with pytest.raises(Error):
            raise exc("failure")
    with pytest.raises(NumericalError):
        raise TrainingDivergedError("nan")
    with pytest.raises(ValueError):
        raise ArgumentError("bad argument")

def test_error_payloads():
    """ Test the extra fields carried by some errors """
    e = DatasetFormatError("Line 7: bad", lineno=7)
    assert e.lineno == 7
    e = MissingTimestampError("missing", count=3)
    assert e.count == 3
    e = VerificationError("failed", results=['a'])
    assert e.results == ['a']

def test_format_error_line_number(localizer):
    """ A malformed line is reported with its line number """
    addons.write_interactions('bad.txt', [('u1', 'i1', 5), ('u1',), ('u2', 'i2', 4)])
    with pytest.raises(DatasetFormatError) as excinfo:
        topkrec.dataset.read_interactions('bad.txt')
    assert excinfo.value.lineno == 2
