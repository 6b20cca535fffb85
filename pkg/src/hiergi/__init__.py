"""Hierarchical multi-task GI image classification and double encoder-decoder
polyp segmentation toolkit."""

from .hierarchy import (
    LabelHierarchy,
    AggregationMap,
    load_hierarchy,
    default_hierarchy,
    aggregate_probs,
    aggregate_logits,
)
from .losses import HierLossWeights, HierTarget, hier_loss, hier_loss_batch, seg_loss
from .metrics import (
    ConfusionMatrix,
    MetricReport,
    mcc,
    f1_micro,
    seg_scores,
    dataset_seg_report,
)
from .training import ScheduleConfig, lr_at, train_classifier, train_segmenter, run_cv
from .models import (
    DoubleEncoderDecoder,
    tta_classify,
    tta_segment,
    ensemble,
    build_model,
    register_model,
)

__version__ = "0.1.0"
