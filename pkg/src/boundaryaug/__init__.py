"""Decision-boundary-aware text data augmentation.

Sentences are encoded to latent vectors, shifted toward the classifier's
decision boundary by iterated gradient steps, decoded back to text (mid-K
sampling by default), and paired with the classifier's score as a soft
label. The package also measures what training on such pairs does to
downstream accuracy and word-substitution robustness.
"""

__version__ = "0.1.0"
