"""Geological facies volumes, sparse conditioning, baselines, geophysics and
conditional generative models.

Volumes are numpy arrays indexed ``[x, y, z]`` with ``z = 0`` at the bottom.
Facies volumes are ``uint8`` in 1..9 (1 = air); condition grids are ``int8``
with -1 marking unsampled voxels.
"""

import json
import os

from . import _geoflow
from ._geoflow import (  # noqa: F401
    AIR,
    NUM_CATEGORIES,
    UNSAMPLED,
    ConfigError,
    DataError,
    Error,
    GeometryError,
    NumericalError,
    ShapeError,
    UsageError,
    baseline_depthwise,
    baseline_polygonal,
    baseline,
    compute_metrics,
    facies_name,
    forward_maps,
    generate_volume,
    read_condition,
    read_volume,
    report,
    sample,
    sample_sparse,
    train,
    write_volume,
)


def default_config():
    """Default run configuration as a dict."""
    return json.loads(_geoflow.default_config_json())


def normalize_config(config):
    """Validates ``config`` and returns it with every default filled in."""
    return json.loads(_geoflow.normalize_config_json(json.dumps(config)))


def gen_dataset(config, directory):
    """Generates a dataset run directory; returns the number of cases."""
    return _geoflow.gen_dataset(json.dumps(config), os.fspath(directory))


def evaluate(directory, pred_dir, split="ood"):
    """Pooled metrics of the predictions in ``pred_dir`` as a dict."""
    return json.loads(_geoflow.evaluate_json(os.fspath(directory), os.fspath(pred_dir), split))
