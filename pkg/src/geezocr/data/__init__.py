from .codec import LabelCodec, encode_labels, ethiopic_syllables
from .dataset import DatasetError, Sample, load_dataset, split_by_writer, stack_images, write_dataset
from .pgm import PGMError, read_pgm, write_pgm
from .synth import synth_generate
from .transforms import AugmentParams, affine_warp, augment, resize_bilinear

__all__ = [
    "AugmentParams",
    "DatasetError",
    "LabelCodec",
    "PGMError",
    "Sample",
    "affine_warp",
    "augment",
    "encode_labels",
    "ethiopic_syllables",
    "load_dataset",
    "read_pgm",
    "resize_bilinear",
    "split_by_writer",
    "stack_images",
    "synth_generate",
    "write_dataset",
    "write_pgm",
]
