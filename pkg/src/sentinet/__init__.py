"""Anomaly-aware Bayesian sensor-placement design.

Places sensors on spatial fields and river networks so that the data
they collect predict well at held-out locations and support reliable
anomaly screening. The expected utility of a candidate layout couples
kriging accuracy (inverse RMSE) with anomaly-detection specificity, and
is maximized by approximate coordinate exchange with Gaussian-process
emulators.
"""

__version__ = "0.1.0"

from .anomaly import (AnomalyGenParams, ConfusionMatrix, DetectionMetrics,
                      contaminate, detect_spatial_knn, generate_mask, metrics,
                      reduce_mask_to_windows, score)
from .covariance import (CovarianceSpec, ModelParams, Prior, PriorSpec,
                         SiteGeometry, SpatialParams, build_sigma, draw_params,
                         geometry_from_network, geometry_from_points,
                         kernel_euclidean, kernel_taildown, kernel_tailup,
                         simulate_spatial, simulate_spatiotemporal)
from .design import Design, NetworkPathSpace, RectangleSpace
from .kriging import (PartitionedCovariance, PredictionSet,
                      build_spacetime_cross_covariance, partition_covariance,
                      posterior_mean_spatial, posterior_mean_spatiotemporal)
from .network import (NetworkLocation, NetworkPath, RiverNetwork,
                      generate_network)
from .oddstream import (OddstreamModel, oddstream_detect, oddstream_train,
                        psi_transform)
from .utility import (DetectorConfig, NetworkModel, SpatialModel,
                      UtilityConfig, UtilityEstimate, UtilityEvaluator,
                      data_quality_report, estimate_utility, irmse)
from .ace import acceptance_test, emulate_coordinate, optimize

__all__ = [name for name in dir() if not name.startswith("_")]
