"""Pipeline presets: descriptor parameters paired with their scoring measure.

Each preset resolves to exactly one extractor/measure pair so a whole
recognition pipeline is one flag away on the command line.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from . import descriptors as d
from .errors import DataError
from .imagecore import GrayImage, flip_horizontal, resize_bilinear

DEFAULT_WIDTH = 96    # tall working aspect suits cropped ears
DEFAULT_HEIGHT = 128


@dataclass(frozen=True)
class PipelinePreset:
    name: str
    measure: str
    extractor: Callable[[GrayImage, str], d.FeatureVector]


def _ulbp(img, image_id):
    return d.extract_ulbp(img, d.LbpParams(), image_id=image_id)


def _phog(img, image_id):
    return d.extract_phog(img, d.PhogParams(), image_id=image_id)


def _iflbp(img, image_id):
    return d.extract_iflbp(img, d.IflbpParams(), image_id=image_id)


def _bior(img, image_id):
    return d.extract_bior_energy(img, d.BiorParams(), image_id=image_id)


def _hog(img, image_id):
    return d.extract_hog(img, cell=8, block=2, bins=9, signed=False,
                         image_id=image_id)


PRESETS: dict[str, PipelinePreset] = {
    "lbp-base": PipelinePreset("lbp-base", "cosine", _ulbp),
    "phog": PipelinePreset("phog", "cosine", _phog),
    "iflbp": PipelinePreset("iflbp", "cosine", _iflbp),
    "bior": PipelinePreset("bior", "canberra", _bior),
    "hog": PipelinePreset("hog", "chi2", _hog),
}


def get_preset(name: str) -> PipelinePreset:
    if name not in PRESETS:
        raise DataError(f"unknown preset {name!r}; choose from "
                        f"{', '.join(sorted(PRESETS))}")
    return PRESETS[name]


def extract_with_preset(img: GrayImage, preset: PipelinePreset, image_id: str,
                        width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
                        flip: bool = False) -> d.FeatureVector:
    """Resize to the working size (optionally mirror), then run the extractor."""
    work = resize_bilinear(img, width, height)
    if flip:
        work = flip_horizontal(work)
    fv = preset.extractor(work, image_id)
    return d.FeatureVector(preset.name, image_id, fv.values)
