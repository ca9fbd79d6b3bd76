"""Cloud and cloud-shadow masking for multispectral scenes."""

import json

from ._cloudmask import (
    CLEAR,
    CLOUD_SHADOW,
    NODATA,
    BandStack,
    ConfigError,
    ContractViolation,
    DataError,
    FormatError,
    MaskRaster,
    NetworkConfig,
    ParameterSet,
    apply_threshold,
    auroc,
    average_precision,
    build,
    enumerate_valid,
    evaluate_json,
    forward,
    infer,
    read_bandstack,
    read_checkpoint,
    read_mask,
    subsample,
    synth,
    write_bandstack,
    write_checkpoint,
    write_mask,
)


def evaluate(pred, truth):
    """Metrics of a predicted mask against the reference as a dict."""
    return json.loads(evaluate_json(pred, truth))
