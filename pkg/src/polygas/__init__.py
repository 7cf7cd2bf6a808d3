"""polygas: block-spin kernels, polymer-gas expansions, and a certified
bound pipeline for lattice phi^4 magnetization estimates.

The package is organized bottom-up:

- lattice: nested torus geometry, block averaging, background kernels,
  large-field regions, paved-set combinatorial geometry
- combinatorics: Ursell/Mayer coefficients, tree counting, interpolation
  (forest) expansions, factorial-growth checks
- covariance: Fourier-multiplier covariances, operator square roots,
  dotted (block-mean + fluctuation) coordinates, operator norms,
  multiscale decompositions
- potential: quartic single-site potential analysis, stability infima,
  coupling flow, magnetization predictors
- polymer: Gaussian polymer-gas activities, reblocking, localization,
  Gaussian integration, cluster/Mayer expansion with brute-force checks
- boundpipe: the staged certificate pipeline assembling all norms into
  a certified magnetization error bound (or a refusal naming the
  binding condition)
- simulator: small-lattice Metropolis Monte Carlo for spot checks
- cli: command-line front end
"""

__version__ = "0.1.0"
