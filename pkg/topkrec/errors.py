"""
errors.py : errors module with definition of customized errors

The classes and subclasses in this module define a "tree" relation of exceptions,
that can be used throughout the code for a consistent error handling pattern.
The command line interface maps the branches of this tree onto exit codes.
"""

class Error(Exception):
    pass

class DatasetError(Error):
    pass

class DatasetFormatError(DatasetError):
    def __init__(self, message, lineno=None):
        super(DatasetFormatError, self).__init__(message)
        self.lineno = lineno

class EmptyDatasetError(DatasetError):
    pass

class MissingTimestampError(DatasetError):
    def __init__(self, message, count=0):
        super(MissingTimestampError, self).__init__(message)
        self.count = count

class SplitFormatError(DatasetError):
    pass

class ArgumentError(Error, ValueError):
    pass

class ConfigError(Error):
    pass

class NumericalError(Error):
    pass

class TrainingDivergedError(NumericalError):
    pass

class CheckpointError(Error):
    pass

class VerificationError(Error):
    def __init__(self, message, results=None):
        super(VerificationError, self).__init__(message)
        self.results = results if results is not None else []
