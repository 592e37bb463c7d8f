"""Contact anticipation maps, next-active-object ground truth and
contact-state graph forecasting on a synthetic egocentric scene."""

__version__ = "0.1.0"
