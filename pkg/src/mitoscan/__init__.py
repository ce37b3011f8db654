"""Mitosis detection from H&E images: localize, balance, classify, evaluate."""

from .annotations import AnnotationPoint, AnnotationSet, ImageInfo, load_annotations, save_annotations
from .balancing import (ClusterAssignment, DefaultPatchEmbedder, difficulty_filter,
                        embed, kmeans, sample_balanced)
from .classify import (center_loss, child_focal_loss, child_weights, focal_loss,
                       generate_child_labels, joint_loss, update_centers)
from .config import Config, load_config, parse_config
from .evaluation import MatchReport, f1_from_pr, match_detections, prf1
from .localize import (LocalizeConfig, NucleusCandidate, Patch, crop_patches,
                       extract_candidates, localization_sensitivity)
from .mixing import efdmix
from .model import (CamResult, Checkpoint, PatchClassifier, cam, load_checkpoint,
                    save_checkpoint)
from .pipeline import detect, detect_all, evaluate_detections, run_ablation
from .stain import (StainEstimationError, StainMatrix, deconvolve, estimate_stain_matrix,
                    hed_jitter, hematoxylin_channel, od_to_rgb, recombine, restain,
                    rgb_to_od)
from .synthetic import PackingError, SyntheticConfig, generate_synthetic
from .training import PatchDataset, TrainResult, assemble_dataset, dgsb_select, train

__version__ = "0.1.0"

__all__ = [
    "AnnotationPoint", "AnnotationSet", "ImageInfo", "load_annotations",
    "save_annotations", "ClusterAssignment", "DefaultPatchEmbedder",
    "difficulty_filter", "embed", "kmeans", "sample_balanced", "center_loss",
    "child_focal_loss", "child_weights", "focal_loss", "generate_child_labels",
    "joint_loss", "update_centers", "Config", "load_config", "parse_config",
    "MatchReport", "f1_from_pr", "match_detections", "prf1", "LocalizeConfig",
    "NucleusCandidate", "Patch", "crop_patches", "extract_candidates",
    "localization_sensitivity", "efdmix", "CamResult", "Checkpoint",
    "PatchClassifier", "cam", "load_checkpoint", "save_checkpoint", "detect",
    "detect_all", "evaluate_detections", "run_ablation", "StainEstimationError",
    "StainMatrix", "deconvolve", "estimate_stain_matrix", "hed_jitter",
    "hematoxylin_channel", "od_to_rgb", "recombine", "restain", "rgb_to_od",
    "PackingError", "SyntheticConfig", "generate_synthetic", "PatchDataset",
    "TrainResult", "assemble_dataset", "dgsb_select", "train",
]
