"""ROI-level saliency for binary CNN classifiers on registered images.

Train a small convolutional classifier, corrupt atlas-defined regions of
interest with frequency-normalized cross-sample substitution, and categorize
each region's importance with JSD bootstrap bounds, one-tailed Wilcoxon tests
and BH-FDR control.
"""

from .corruption import (
    SamplingConfig,
    bin_index,
    corrupted_distribution,
    corrupted_prediction,
    draw_sample_pool,
    frequency_weights,
    pearson,
)
from .data import (
    Atlas,
    ChannelImage,
    DataError,
    Dataset,
    RoiMask,
    atlas_rois,
    extract_roi,
    load_atlas,
    load_dataset,
    replace_roi,
    save_atlas,
    save_dataset,
)
from .interpret import InterpretConfig, RoiReport, interpret_dataset, interpret_rois
from .nifti import load_nifti
from .nn import (
    Network,
    TrainConfig,
    activation_maps,
    build_2cc3d,
    build_synth_cnn,
    load_model,
    save_model,
    train,
)
from .preprocess import WindowConfig, downsample, sliding_window_channels, window_count
from .stats import JsdInterval, bh_fdr, bootstrap_jsd, histogram, jsd, wilcoxon_one_tailed
from .synthgen import SynthConfig, generate_synthetic, run_table1, weighted_misclassification

__version__ = "0.1.0"
