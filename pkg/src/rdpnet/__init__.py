"""Change detection on bi-temporal image pairs: region-division/ConvMixer
network, edge-weighted hybrid loss, and easy-to-hard curriculum training,
built on a from-scratch autodiff tensor core."""

__version__ = "0.1.0"
