"""Small-object detection blocks on a minimal tape-autodiff tensor core.

Layout:
  ``smalldet.tensor``  autodiff substrate (ops, FFT, grad checking)
  ``smalldet.padf``    partial-conv detail-focus backbone block
  ``smalldet.neck``    space-to-depth downsampling and frequency fusion
  ``smalldet.losses``  IoU-family box losses
  ``smalldet.metrics`` greedy matching, AP, mAP
  ``smalldet.harness`` synthetic data, toy detector, training, evaluation
  ``smalldet.cli``     command-line surface
"""

__version__ = "0.1.0"
