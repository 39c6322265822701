"""
__init__.py : The base import for the topkrec package.

Top-K recommendation with a learned per-user quantile threshold: data preparation,
factor-model training under the Talos loss and its baselines, evaluation, the
metric-inconsistency simulation and numerical verification of the loss properties.
"""

from . import dataset
from . import model
from . import quantile
from . import losses
from . import metrics
from . import trainer
from . import simulator
from . import verify

__version__ = '0.1.0'
