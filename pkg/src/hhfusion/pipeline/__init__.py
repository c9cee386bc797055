"""The four-step speaker adaptation pipeline on a synthetic corpus."""
from .corpus import CorpusSpec, SyntheticSpeaker, generate_canonical, generate_corpus, read_corpus, write_corpus
from .metrics import corpus_error_rate, levenshtein, token_error_rate
from .splits import SplitPlan, plan_from_corpus, target_fold
from .training import EpochRecord, TrainConfig, early_stop_and_average, fit
