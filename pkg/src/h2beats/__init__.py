"""Desk-scale simulator of entanglement-controlled vibrational quantum beats.

Pipeline: an XUV pulse pair ionizes H2, leaving the H2+ cation entangled with
its photoelectron; the reduced ionic density matrix sets the visibility of
vibrational quantum beats probed by a delayed NIR pulse; synthetic
velocity-map images are Abel-inverted and the beat spectra analyzed, closing
the loop from the two-pulse delay to spectroscopic level spacings.
"""

__version__ = "0.1.0"
