"""Venn-Abers calibrated explanations for binary scoring classifiers."""

from .data import Dataset, Feature, FeatureSchema, load_csv, stratified_kfold, synth_two_class, train_cal_split
from .discretizers import Discretizer, fit_discretizer
from .explainer import CalibratedExplainer, Explanation, export_json, export_lime_shape, export_shap_shape, load_json
from .models import ExternalScorer, ForestModel, ScoringModel, TreeModel, train_forest, train_tree
from .venn_abers import FastVennAbers, ProbabilityInterval, VennAbersCalibrator, pava_fit, regularize, va_interval

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Feature", "FeatureSchema", "load_csv", "stratified_kfold", "synth_two_class", "train_cal_split",
    "Discretizer", "fit_discretizer",
    "CalibratedExplainer", "Explanation", "export_json", "export_lime_shape", "export_shap_shape", "load_json",
    "ExternalScorer", "ForestModel", "ScoringModel", "TreeModel", "train_forest", "train_tree",
    "FastVennAbers", "ProbabilityInterval", "VennAbersCalibrator", "pava_fit", "regularize", "va_interval",
]
