"""Binary binning, spatial smoothing, cosine clustering and DIPPS feature
extraction for imaging mass spectrometry peak lists."""

from .binning import (
    BinGrid,
    BinaryDataMatrix,
    bin_index,
    build_binary_matrix,
    merge_feature_intervals,
    tandem_grid,
)
from .clustering import ClusterResult, annotation_overlap, cosine_distance, kmeans
from .compare import JaccardMatrix, jaccard_distance, pairwise_jaccard
from .dipps import (
    DippsResult,
    FeatureSet,
    dipps_map_values,
    dipps_vector,
    extract_features,
    occurrence_proportions,
    optimal_cutoff,
    subset_centroid,
)
from .errors import (
    ContractError,
    DegenerateSubsetError,
    ParseError,
    RangeError,
    SchemaVersionError,
    ValidationError,
)
from .peaklist_io import (
    AnnotationSubset,
    Dataset,
    Peak,
    Spectrum,
    parse_annotation,
    parse_dataset,
    write_dataset,
    write_table,
)
from .smoothing import (
    NeighborIndex,
    SmoothingParams,
    SmoothResult,
    agreement_proportion,
    build_neighbor_index,
    smooth,
    smooth_step,
)

__version__ = "0.1.0"
