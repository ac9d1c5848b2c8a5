from .binning import BinMapper, UnseenCategoryError, quantile_bin
from .bundling import FeatureBundle, bundle_matrix, efb_bundle, singleton_bundles, unbundle
from .goss import goss_sample
from .model import (
    GbdtModel,
    TrainConfig,
    TrainingError,
    importance_table,
    predict,
    predict_proba,
    split_importance,
    train,
)
from .objective import cross_entropy, softmax, softmax_gradients
from .tree import HistogramLayout, Tree, TreeNode, find_best_split, grow_tree

__all__ = [
    "BinMapper", "UnseenCategoryError", "quantile_bin",
    "FeatureBundle", "bundle_matrix", "efb_bundle", "singleton_bundles", "unbundle",
    "goss_sample",
    "GbdtModel", "TrainConfig", "TrainingError", "importance_table", "predict", "predict_proba",
    "split_importance", "train",
    "cross_entropy", "softmax", "softmax_gradients",
    "HistogramLayout", "Tree", "TreeNode", "find_best_split", "grow_tree",
]
