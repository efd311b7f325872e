from .enums import Label, Provenance
from .triplet import Corpus, LabeledTriplet
from .generator import DEFAULT_STYLE, PhantomStyle, boundary_band, generate_corpus, generate_phantom
from .folds import assign_folds, fold_split, holdout_split, split_folds
from .storage import load_dataset, manifest_hash, save_dataset
