"""Multi-view reconstruction transformer with optional camera and depth conditioning, on numpy."""

from .backbone import Backbone, BackboneConfig, Predictions, ReconModel
from .bundle import FrameBundle
from .config import ConfigError, RunConfig, load_config, parse_config
from .fusion import ModalityAssignment, SamplerConfig, apply_assignment, fixed_assignment, sample_assignment
from .geoadapter import AdapterVariant, GeoAdapter, prepare_aux
from .losses import LossBreakdown, LossConfig, build_targets, camera_loss, dense_loss, total_loss
from .metrics import MetricsReport
from .synthscene import SceneSpec, generate

__version__ = "0.1.0"
