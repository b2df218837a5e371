"""Value screening of expiring domain names with composite descriptors and an RBF SVM."""

__version__ = "0.1.0"

from .errors import ConfigurationError, DomscreenError, ModelFormatError, ProviderError, ValidationError
from .features import DescriptorVector, DomainRecord, ScalingParams, compute_descriptors, fit_scaling, apply_scaling
from .svm import KernelSpec, SvmModel, TrainConfig, grid_search, load_model, predict, save_model, smo_train
from .dataset import LabeledSet, diversity_split, parse_csv
from .synth import synth_generate

__all__ = [
    "ConfigurationError", "DomscreenError", "ModelFormatError", "ProviderError", "ValidationError",
    "DescriptorVector", "DomainRecord", "ScalingParams", "compute_descriptors", "fit_scaling", "apply_scaling",
    "KernelSpec", "SvmModel", "TrainConfig", "grid_search", "load_model", "predict", "save_model", "smo_train",
    "LabeledSet", "diversity_split", "parse_csv", "synth_generate",
]
