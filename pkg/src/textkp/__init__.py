"""Keypoint-based arbitrary-shape text detection: labels, decoding, rectification, evaluation."""

from .annotations import AnnotationError, ImageRecord, TextAnnotation, load_annotations, save_annotations
from .associate import InstanceChain, build_instances, link_candidates
from .decode import DetectedKeypoint, find_peaks
from .evaluate import MatchReport, evaluate_dataset, match, polygon_iou
from .geometry import KeypointKind, build_label_bundle
from .labelmaps import HeatmapStack, read_stack, render_labels, write_stack
from .losses import LossConfig, keypoint_loss, link_loss, mask_loss, total_loss
from .rectify import DetectionPolygon, fit_tps, make_polygon, rectify_patch

__all__ = [
    "AnnotationError", "ImageRecord", "TextAnnotation", "load_annotations", "save_annotations",
    "InstanceChain", "build_instances", "link_candidates", "DetectedKeypoint", "find_peaks",
    "MatchReport", "evaluate_dataset", "match", "polygon_iou", "KeypointKind", "build_label_bundle",
    "HeatmapStack", "read_stack", "render_labels", "write_stack", "LossConfig", "keypoint_loss",
    "link_loss", "mask_loss", "total_loss", "DetectionPolygon", "fit_tps", "make_polygon", "rectify_patch",
]
