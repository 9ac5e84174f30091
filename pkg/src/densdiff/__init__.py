"""Unsupervised binary labeling of two datasets that differ only in class balance."""

__version__ = "0.1.0"

from .basis import GaussianBasis, build_basis, eval_basis, median_heuristic
from .data import Dataset, LabeledDataset, load_csv, sample_mixture, toy1_spec, toy2_spec
from .dsdd import CccpConfig, DsddModel, cccp_fit, predict_sign
from .evaluate import expected_random_ler, label_pair, ler, mcr, run_benchmark

__all__ = [
    "CccpConfig", "Dataset", "DsddModel", "GaussianBasis", "LabeledDataset", "build_basis", "cccp_fit",
    "eval_basis", "expected_random_ler", "label_pair", "ler", "load_csv", "mcr", "median_heuristic",
    "predict_sign", "run_benchmark", "sample_mixture", "toy1_spec", "toy2_spec",
]
