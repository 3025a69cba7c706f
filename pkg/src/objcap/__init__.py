"""Object-only image captioning: data tooling, three encoder-decoder model
variants on a small float64 autodiff core, training, and BLEU scoring."""

__version__ = "0.1.0"
