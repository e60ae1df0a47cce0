"""Graph knowledge distillation: a teacher MLP plus label propagation over a
population graph produces soft labels for a graph-free student MLP."""

from .data import Dataset, SplitSpec, Splits, generate_synthetic, load_csv_dataset, make_splits
from .graph import SparseGraph, row_normalize, sym_normalize, threshold_graph, union_graphs
from .lpa import LPAConfig, lpa_fixed_point_oracle, propagate
from .metrics import MetricsReport, accuracy, auc_binary, macro_f1
from .nn import MLPParams, TrainConfig, mlp_forward, softmax_rows, train_mlp
from .pipeline import GKDModel, gkd_train, predict

__version__ = "0.1.0"
