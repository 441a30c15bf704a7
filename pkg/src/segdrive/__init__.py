"""Speed and steering-angle regression from camera frames concatenated with
one-hot segmentation masks."""

__version__ = "0.1.0"

FRAME_H = 90
FRAME_W = 160
SEQ_LEN = 10
IGNORE = 255
