"""Continuous tracking of weighted heavy hitters and matrix approximations across distributed sites."""
from .data import ElementStream, RowStream, StreamTuple, ZipfConfig, gen_zipfian, load_matrix_csv, synth_matrix
from .evaluation import ExactHHOracle, HHQualityReport, hh_quality, matrix_quality
from .freq_sketch import WeightedMG
from .hh_protocols import classify_heavy, hh_query, make_hh_protocol
from .matrix_protocols import m_query, make_matrix_protocol
from .matrix_sketch import CovarianceAccumulator, FrequentDirections, covariance_error
from .simulator import RunReport, SimConfig, run_sim, sweep

__all__ = [
    "CovarianceAccumulator",
    "ElementStream",
    "ExactHHOracle",
    "FrequentDirections",
    "HHQualityReport",
    "RowStream",
    "RunReport",
    "SimConfig",
    "StreamTuple",
    "WeightedMG",
    "ZipfConfig",
    "classify_heavy",
    "covariance_error",
    "gen_zipfian",
    "hh_quality",
    "hh_query",
    "load_matrix_csv",
    "m_query",
    "make_hh_protocol",
    "make_matrix_protocol",
    "matrix_quality",
    "run_sim",
    "sweep",
    "synth_matrix",
]
