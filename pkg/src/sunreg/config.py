"""Engine-wide numerical settings.

Every public function that depends on one of these knobs accepts it as a
keyword argument; the module-level ``CONFIG`` only supplies defaults.
"""

from dataclasses import dataclass


@dataclass
class EngineConfig:
    # QMC estimator of Gaussian orthant probabilities
    accuracy: float = 1e-4          # target absolute standard error
    n_shifts: int = 12              # independent randomizations of the point set
    min_points: int = 2**8          # points per randomization on the first pass
    max_points: int = 2**20         # cap on the total number of integrand evaluations
    qmc_seed: int = 20240611

    # deterministic quadrature is used up to this dimension
    exact_cdf_dim: int = 3

    # jitter ladder, expressed relative to tr(S)/d
    jitter_min: float = 1e-12
    jitter_max: float = 1e-6

    # truncated normals
    moment_dim_cap: int = 8
    sun_dim_cap: int = 200
    accept_floor: float = 1e-4      # minimal acceptance rate of the tilting sampler
    gibbs_burn_in: int = 50
    gibbs_thin: int = 5

    # a standard normal upper limit above this is treated as +inf
    clamp_upper: float = 37.0


CONFIG = EngineConfig()
