"""IRS-assisted THz massive MIMO: hierarchical beam training and hybrid beamforming."""

from .channel import (ArrayGeometry, ChannelRealization, IrsPhaseConfig, PathParams, arv,
                      assemble_channel, compensation_factor, los_channel, path_loss,
                      sample_scenario)
from .codebooks import (Beam, BeamKind, HierarchicalCodebook, build_codebook, build_psd, build_td,
                        build_uniform, edge_gain, narrow_directions, omp_decompose,
                        uniform_directions)
from .config import ConfigError, ScenarioConfig, load_scenario
from .training import MeasurementModel, TrainingOutcome, search_count, train

__version__ = "0.1.0"

__all__ = [
    "ArrayGeometry", "ChannelRealization", "IrsPhaseConfig", "PathParams", "arv",
    "assemble_channel", "compensation_factor", "los_channel", "path_loss", "sample_scenario",
    "Beam", "BeamKind", "HierarchicalCodebook", "build_codebook", "build_psd", "build_td", "build_uniform",
    "edge_gain", "narrow_directions", "omp_decompose", "uniform_directions",
    "ConfigError", "ScenarioConfig", "load_scenario",
    "MeasurementModel", "TrainingOutcome", "search_count", "train",
]
