"""Certified robustness for point-cloud classifiers via spectral slicing."""
from .cloud_io import LabeledDataset, PointCloud, generate_shape, normalize, read_cloud, synthetic_dataset
from .graph_spectral import build_knn_graph, eigendecompose, gft, inverse_gft, laplacian
from .kernels import BACKEND
from .pipeline import PipelineConfig, analyze, run

__version__ = "0.1.0"
