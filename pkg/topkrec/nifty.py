"""@package topkrec.nifty Nifty functions shared by every module of topkrec.

Table of Contents:
- Logger with newline-free handlers
- I/O formatting
- Math: Simple statistics
- File and thread management
"""

import os
import re
import shutil
import sys
import threading
from collections import OrderedDict

import numpy as np

#================================#
#       Set up the logger        #
#================================#
from logging import *

# Define two handlers that don't print newline characters at the end of each line
class RawStreamHandler(StreamHandler):
    """
    Exactly like StreamHandler, except no newline character is printed at the end of each message.
    Callers terminate their own lines, which lets tables be assembled over several calls.
    """
    def __init__(self, stream = sys.stderr):
        super(RawStreamHandler, self).__init__(stream)

    def emit(self, record):
        message = record.getMessage()
        self.stream.write(message)
        self.flush()

class RawFileHandler(FileHandler):
    """
    Exactly like FileHandler, except no newline character is printed at the end of each message.
    """
    def __init__(self, *args, **kwargs):
        super(RawFileHandler, self).__init__(*args, **kwargs)

    def emit(self, record):
        if self.stream is None:
            self.stream = self._open()
        message = record.getMessage()
        self.stream.write(message)
        self.flush()

logger = getLogger(__name__)
logger.setLevel(INFO)

def config_path(name):
    """ Return the installed path of a logging ini file in topkrec/config. """
    try:
        import pkg_resources
        return pkg_resources.resource_filename(__name__, 'config/%s' % name)
    except ImportError:
        return os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config', name)

#=========================#
#     I/O formatting      #
#=========================#
def natural_sort(l):
    """ Return a natural sorted list. """
    # Convert a character to a digit or a lowercase character
    convert = lambda text: int(text) if text.isdigit() else text.lower()
    # Split string into "integer" and "noninteger" fields and convert each one
    alphanum_key = lambda key: [(0, c, '') if isinstance(c, int) else (1, 0, c)
                                for c in map(convert, re.split('([0-9]+)', key)) if c != '']
    # Ties under the key (e.g. "a" and "A") fall back to the raw string
    return sorted(l, key = lambda key: (alphanum_key(key), key))

def printcool(text, sym="#", bold=False, color=2, bottom='-', minwidth=50, center=True, sym2="="):
    """Cool-looking printout for slick formatting of output.

    Parameters
    ----------
    text : str
        The string that the printout is based upon; may contain newlines.
    sym : str
        The surrounding symbol
    bold : bool
        Whether to use bold print
    color : int
        ANSI color code, 1 red, 2 green, 3 yellow, 4 blue, 5 magenta, 6 cyan, 7 white
    bottom : str
        The symbol for the bottom bar
    minwidth : int
        The minimum width for the box

    Returns
    -------
    bar : str
        The bottom bar, for the caller to print later to mark off a section
    """
    def newlen(l):
        return len(re.sub(r"\x1b\[[0-9;]*m", "", l))
    text = text.split('\n')
    width = max(minwidth, max([newlen(line) for line in text]))
    bar = ''.join([sym2 for i in range(width + 6)])
    bar = sym + bar + sym
    logger.info('\n' + bar + '\n')
    for ln, line in enumerate(text):
        if type(center) is list: c1 = center[ln]
        else: c1 = center
        if c1:
            padleft = ' ' * (int((width - newlen(line)) / 2))
        else:
            padleft = ''
        padright = ' ' * (width - newlen(line) - len(padleft))
        if bold:
            logger.info("%s| \x1b[1;%im%s%s%s\x1b[0m |%s\n" % (sym, 90 + color, padleft, line, padright, sym))
        else:
            logger.info("%s| %s%s%s |%s\n" % (sym, padleft, line, padright, sym))
    bar = ''.join([bottom for i in range(width + 8)])
    return bar

def printcool_dictionary(Dict, title="Dictionary Keys : Values", bold=False, color=2, keywidth=25, topwidth=50, center=True, leftpad=0):
    """See documentation for printcool; this is a nice way to print out keys/values in a dictionary.

    The keys in the dictionary are sorted before printing out, unless it is an OrderedDict.
    """
    if Dict is None: return
    bar = printcool(title, bold=bold, color=color, minwidth=topwidth, center=center)
    keys = list(Dict.keys()) if isinstance(Dict, OrderedDict) else sorted(Dict.keys())
    logger.info('\n'.join([' '*leftpad + "%-*s %s " % (keywidth, str(key), str(Dict[key]))
                           for key in keys if Dict[key] is not None]))
    logger.info("\n%s\n" % bar)

#===============================#
#|   Math: Simple statistics   |#
#===============================#
def mean_stderr(ts):
    """Return mean and standard error of the mean of independent samples ts."""
    ts = np.asarray(ts, dtype=float)
    if len(ts) < 2:
        return float(np.mean(ts)), 0.0
    return float(np.mean(ts)), float(np.std(ts, ddof=1) / np.sqrt(len(ts)))

def summary_stats(x):
    """ Return an OrderedDict with mean, min, max and std of a vector. """
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return OrderedDict([('mean', 0.0), ('min', 0.0), ('max', 0.0), ('std', 0.0)])
    return OrderedDict([('mean', float(np.mean(x))), ('min', float(np.min(x))),
                        ('max', float(np.max(x))), ('std', float(np.std(x)))])

#==============================#
#|  File and thread handling  |#
#==============================#
def bak(path, dest=None, start=1):
    """ Move an existing file out of the way as <base>_<n><ext>; return the new path or None. """
    oldf = path
    newf = None
    if os.path.exists(path):
        dnm, fnm = os.path.split(path)
        if dnm == '' : dnm = '.'
        base, ext = os.path.splitext(fnm)
        if dest is None:
            dest = dnm
        if not os.path.isdir(dest): os.makedirs(dest)
        i = start
        while True:
            fnm = "%s_%i%s" % (base, i, ext)
            newf = os.path.join(dest, fnm)
            if not os.path.exists(newf): break
            i += 1
        logger.info("Backing up %s -> %s\n" % (oldf, newf))
        shutil.move(oldf, newf)
    return newf

def concurrent_map(func, data, workers=1):
    """
    Similar to the builtin function map(), but applies `func` over `workers` threads.
    Results are returned in the order of `data` regardless of completion order.

    Note: unlike map(), we cannot take an iterable argument. `data` should be an
    indexable sequence.
    """
    N = len(data)
    if workers <= 1 or N <= 1:
        return [func(d) for d in data]
    result = [None] * N
    errors = []

    # Each thread takes a strided share of the indices
    def task_wrapper(start):
        try:
            for i in range(start, N, workers):
                result[i] = func(data[i])
        except Exception as e:
            errors.append(e)

    threads = [threading.Thread(target=task_wrapper, args=(w,)) for w in range(min(workers, N))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return result
