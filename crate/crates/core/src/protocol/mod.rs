//! End-to-end driver: owner setup, request handling, deployments and the
//! false-discovery simulation.

pub mod dataset;
pub mod deploy;
pub mod fdr;
pub mod request;
pub mod server;
pub mod setup;

pub use dataset::{Attribute, AttributeKind, DatasetHeader, DatasetMetadata, EncryptedDataset, Table};
pub use deploy::{quota_used, AttemptRecord, DeployError, LocalDeployment, ServerNode};
pub use fdr::{fdr_sim, FdrConfig, FdrReport};
pub use request::TestRequest;
pub use server::{serve_request, RequestError, ServerContext};
pub use setup::{owner_setup, write_setup, Layout, SetupError, SetupOutput, SetupParams};
