"""Interval neural networks and instability detection for image reconstruction."""

from ._instab import (  # noqa: F401
    ConfigError,
    ContractError,
    DegenerateSampleError,
    Error,
    IntervalNetwork,
    Network,
    NumericalError,
    ShapeError,
    advdetect_score,
    artdetect_score,
    backproject,
    code_version,
    default_config,
    fbp,
    load_tensor,
    make_phantom,
    pearson,
    radon,
    render_heatmap,
    save_tensor,
    validate_config,
)

__version__ = code_version()
