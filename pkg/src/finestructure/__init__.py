"""Lorentzian fine-structure analysis of intraday price series.

A session is split into gross, intermediate and fine bands by a cascade of
moving averages; each band is fitted with a sum of Lorentzian states whose
widths and adjacent spacings are then compared with random-matrix
distributions. The ratio of mean width to mean spacing, estimated early in
a session, is scored as a forecast for the rest of it.
"""

from .errors import AnalysisError, ConfigError, DataError, FineStructureError
from .fitting import (
    Detection,
    FitOptions,
    FitResult,
    PeakSeed,
    detect_peaks,
    fit_band,
    fit_multi_lorentzian,
    fit_series,
    objective_and_gradient,
    predict_band,
)
from .lorentz import LorentzianPeak, ModelMean, MultiLorentzianModel, area, eval_model, eval_peak, model_mean
from .predictor import RatioTrack, WindowRatio, hourly_ratios, predict_and_score
from .stats import (
    DistributionFit,
    Histogram,
    StateStatistics,
    chi2_family_cdf,
    chi2_family_pdf,
    estimate_chi2_dof,
    extract_statistics,
    fit_distribution,
    histogram,
    ks_statistic,
    porter_thomas_pdf,
    wigner_cdf,
    wigner_pdf,
)
from .synth import SynthConfig, SynthSession, generate_session, sample_chi2_width, sample_wigner
from .timeseries import (
    BandDecomposition,
    BandResponse,
    DecompositionConfig,
    TimeSeries,
    decompose,
    load_csv,
    moving_average,
    resample,
    write_csv,
)

__version__ = "0.1.0"
