//! Rating ingestion, degree filtering, per-user splits, the user-item graph,
//! and negative sampling.

mod graph;
mod parse;
mod sampling;
mod split;
pub mod store;
mod toy;

pub use graph::{build_laplacian, BipartiteGraph};
pub use parse::{filter_min_degree, parse_ratings, subsample_users, Interaction, RatingFormat};
pub use sampling::{sample_bpr_epoch, sample_negative, sample_negatives_distinct, BprTriple};
pub use split::{split_per_user, train_count, SplitDataset};
pub use toy::planted_toy;

pub use crate::numerics::SparseMatrix;
