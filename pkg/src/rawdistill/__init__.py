"""Train classifiers directly on simulated RAW sensor data by distilling an
RGB teacher (and, implicitly, the camera ISP) into a RAW student."""

from ._kernels import BACKEND
from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .data import DatasetConfig, SamplePair, build_dataset
from .distill import DistillConfig, ce_loss, combined_loss, feature_l2, kd_loss, segmentation_loss
from .models import ArchSpec, build_model, count_flops, forward_with_features, freeze_fraction
from .models import init_student_from_teacher
from .raw import BayerImage, BayerStats
from .tensor import Tensor, no_grad
from .train import MetricsReport, TrainConfig, distill_student, train_teacher

__version__ = "0.1.0"
