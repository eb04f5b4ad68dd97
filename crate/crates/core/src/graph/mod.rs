//! Sparse graph storage, normalisation and dataset sources.

pub mod citation;
pub mod csr;
pub mod dataset;
pub mod sbm;

pub use citation::{
    load_citation_dataset, write_citation_dataset, CitationFiles, CitationOptions, LoadStats,
};
pub use csr::{normalize_adjacency, CsrMatrix, DegreeVector};
pub use dataset::{stratified_split, GraphDataset, Split};
pub use sbm::{generate_sbm, SbmParams};
