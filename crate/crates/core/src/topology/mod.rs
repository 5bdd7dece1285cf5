//! Cubical persistent homology per phase and persistence-image features.

pub mod complex;
pub mod featurize;
pub mod filtration;
pub mod image;
pub mod oracle;
pub mod persistence;

pub use complex::{build_complex, CubicalComplex};
pub use featurize::{
    channel_index, channel_of, featurize, featurize_diagrams, phase_diagrams, phase_persistence, read_diagram_csv,
    read_features, write_diagram_csv, write_features, ChannelRanges, FeatureHeader, FeatureSet, PhaseDiagrams,
    CHANNELS,
};
pub use filtration::{signed_distance_filtration, FiltrationField};
pub use image::{persistence_image, surface_value, weight, ChannelRange, PersistenceImage, PiParams};
pub use oracle::{brute_force_persistence, ORACLE_CELL_LIMIT};
pub use persistence::{compute_persistence, PersistenceDiagram, PersistencePair};
