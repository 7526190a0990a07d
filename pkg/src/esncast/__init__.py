"""Echo state network forecasting toolkit.

Rolling-window one-step-ahead price forecasting with a leaky-reservoir ESN,
naive and gradient-boosted baselines, TPE hyperparameter search, fractional
differentiation + ADF stationarity analysis, and chaos quantification via
the maximal Lyapunov exponent.
"""

__version__ = "0.1.0"

from .baselines import GbdtParams, add_lag_features, fit_gbdt, naive_forecast, predict_gbdt
from .chaos import EmbeddingParams, LyapunovEstimate, delay_embed, rosenstein_mle, window_mle
from .data import OhlcBar, OhlcSeries, fetch_klines, interpolate_missing, parse_csv, write_csv
from .errors import ChaosError, DataError, EsnError, FetchError, NumericError
from .esn import (EsnHyperParams, EsnModel, StateMatrix, collect_states, fit_readout,
                  fit_series, init_reservoir, load_model, predict_one_step, save_model,
                  update_state)
from .features import FeatureMatrix, build_feature_matrix
from .hpo import (Dimension, SearchSpace, Trial, esn_search_space, gbdt_search_space,
                  optimize, sample_uniform_prior, suggest_tpe)
from .stationarity import AdfReport, FracDiffResult, adf_test, fracdiff, min_stationary_order
from .backtest import (BacktestReport, WindowSplit, chaos_stratified_test, make_windows,
                       mann_whitney_u, normality_check, rmse, run_backtest)

__all__ = [name for name in dir() if not name.startswith("_")]
