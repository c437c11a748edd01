"""Survival-analysis engine for email time-to-open and send-time choice.

Ingests send/open logs, censors time-to-open at a configurable window,
fits classical survival baselines and an LSTM hazard-ratio model on the
Efron-approximated Cox partial likelihood, and ranks weekly send-time
bins per recipient by predicted hazard ratio.
"""

__version__ = "0.1.0"

from .event_log import (CensoredOutcome, FilterConfig, PurchaseRecord,
                        RawRecord, RecipientHistory, censor, filter_histories,
                        ingest)
from .survival import (PartialLikTerms, SurvivalBatch, c_index, efron_nll,
                       efron_nll_gradient, weibull_hazard, weibull_survival)
from .virtual_time import BinScheme, bin_of, fit_bins, one_hot
from .features import (FeatureExtractor, MessageFeatures, MessageObservation,
                       SequenceExample, average_features, make_sequences)
from .baselines import (CoxLinear, CoxMixture, CoxNonlinear, WeibullPH,
                        fit_cox_linear, fit_cox_mixture, fit_cox_nonlinear,
                        fit_weibull)
from .rnn import RnnConfig, RnnSurvival
from .ranking import (BinRanking, DecileReport, decile_report, evaluate_topk,
                      rank_bins)
from .synth import GeneratorSpec, generate, true_cindex_ceiling

__all__ = [
    "BinRanking", "BinScheme", "CensoredOutcome", "CoxLinear", "CoxMixture",
    "CoxNonlinear", "DecileReport", "FeatureExtractor", "FilterConfig",
    "GeneratorSpec", "MessageFeatures", "MessageObservation",
    "PartialLikTerms", "PurchaseRecord", "RawRecord", "RecipientHistory",
    "RnnConfig", "RnnSurvival", "SequenceExample", "SurvivalBatch",
    "WeibullPH", "average_features", "bin_of", "c_index", "censor",
    "decile_report", "efron_nll", "efron_nll_gradient", "evaluate_topk",
    "filter_histories", "fit_bins", "fit_cox_linear", "fit_cox_mixture",
    "fit_cox_nonlinear", "fit_weibull", "generate", "ingest",
    "make_sequences", "one_hot", "rank_bins", "true_cindex_ceiling",
    "weibull_hazard", "weibull_survival",
]
