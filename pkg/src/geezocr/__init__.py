"""Handwritten Ethiopic (Ge'ez) script recognition at desk scale.

Subpackages and modules:

* ``tensor``: define-by-run reverse-mode differentiation on numpy arrays
* ``nn``: layers, the character CNN and word CRNN models, optimizers, checkpoints
* ``ctc``: CTC loss and greedy / prefix-beam decoders
* ``metrics``: edit distance, CER, NED, word accuracy, confusion counts
* ``meta``: first- and second-order MAML over style tasks
* ``data``: PGM images, dataset directories, synthetic glyphs, augmentation
* ``cli``: the ``geezocr`` command
"""

__version__ = "0.1.0"
