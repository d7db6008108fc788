"""Ball-walk Metropolis kernels on domains with cusps.

Modules: :mod:`geometry` (domains and cusp charts), :mod:`measure`
(densities), :mod:`kernel` (the walk and its discretized operator),
:mod:`spectral` (gaps, clusters, mixing), :mod:`torus` (Fourier multipliers),
:mod:`decomposition` (anisotropic Sobolev tools and the low-energy split) and
:mod:`cli` (the experiment runner).
"""

__version__ = "0.1.0"
