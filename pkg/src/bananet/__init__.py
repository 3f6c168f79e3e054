"""bananet: a self-contained CNN engine and CLI for banana sub-family and
quality classification — depthwise-separable networks, transfer-learning
head training, data augmentation, Grad-CAM and evaluation arithmetic."""

from .data import AugmentSpec, LabeledDataset, generate_synthetic_corpus, \
    load_image, make_batches, scan_dataset, split_dataset
from .errors import (BananetError, ConfigError, DataError, FormatError,
                     NumericError, ShapeError, StateError, WeightLoadError)
from .gradcam import CamResult, compute_gradcam, render_heatmap
from .metrics import EvalReport, classification_report, confusion_matrix, \
    export_report, make_report
from .model import (LayerSpec, ModelGraph, attach_transfer_head, build_base_cnn,
                    build_mobilenet, set_trainable_boundary, summarize,
                    swap_output_layer)
from .ntw import load_weights, read_ntw, save_weights, write_ntw
from .tensor import Shape4, Tensor, map_elementwise, matmul
from .train import (AdamState, TrainConfig, TrainLog, adam_init, adam_step,
                    cross_entropy, evaluate, train)

__version__ = "0.1.0"
