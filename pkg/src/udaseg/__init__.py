"""Desk-scale unsupervised domain adaptation for semantic segmentation.

A numpy encoder-decoder trained by hybrid self-training: an EMA teacher
supplies pseudo-labels on the target domain, source images are fused with
their style-transferred versions, and superpixel boundaries up-weight the
pseudo-labels near object edges.
"""

__version__ = "0.1.0"
