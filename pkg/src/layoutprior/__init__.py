"""Layout priors for DocTags page conversion."""

from .doctags import DocElement, DocTagsDoc, LayoutTag, parse, serialize, validate
from .errors import EmptyCorpus, LayoutPriorError
from .layout import BBox, Detection, PageDetections, PostprocessConfig, postprocess
from .prior import LayoutPrior, PerturbConfig, PromptSpec, build_prior, build_prompt, perturb

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Detection",
    "DocElement",
    "DocTagsDoc",
    "EmptyCorpus",
    "LayoutPrior",
    "LayoutPriorError",
    "LayoutTag",
    "PageDetections",
    "PerturbConfig",
    "PostprocessConfig",
    "PromptSpec",
    "build_prior",
    "build_prompt",
    "parse",
    "perturb",
    "postprocess",
    "serialize",
    "validate",
]
