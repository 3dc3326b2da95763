//! Stage-1 global alignment from pairwise pointmaps.

pub mod focal;
pub mod global;
pub mod pairs;
pub mod procrustes;
pub mod tree;

pub use focal::{least_squares_focal, weiszfeld_focal, FocalError};
pub use global::{align_global, AlignError, AlignOptions, GlobalAlignment, TreeDump};
pub use pairs::{enumerate_pairs, pair_count, PairError, PairGraph, PairView, PairwisePrediction, PointView, WeightRule};
pub use procrustes::{procrustes_similarity, similarity_objective, ProcrustesError, Registration, Similarity};
pub use tree::{max_spanning_tree, TreeError, WeightedEdge};
