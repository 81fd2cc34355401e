"""Drug-target binding affinity prediction: a character-level molecule
transformer pretrained on masked-token prediction, a convolutional protein
tower, and a dense interaction head, built on an in-package reverse-mode
autodiff core.
"""

__version__ = "0.1.0"
