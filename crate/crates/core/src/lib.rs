//! Topology design and transaction selection for payment channel networks.

pub mod channel_alg;
pub mod cluster_alg;
pub mod clustering;
pub mod lightning;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod seed;

use thiserror::Error;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Lp(#[from] lp::LpError),
    #[error(transparent)]
    Channel(#[from] channel_alg::ChannelError),
    #[error(transparent)]
    Cluster(#[from] cluster_alg::ClusterError),
    #[error(transparent)]
    Clustering(#[from] clustering::ClusteringError),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
    #[error(transparent)]
    Lightning(#[from] lightning::LightningError),
}
