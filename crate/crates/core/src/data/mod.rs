//! Feature files, domain manifests and the synthetic cross-domain benchmark.

mod features;
mod generator;
mod manifest;

pub use features::{decode_features, encode_features, read_features, write_features};
pub use generator::{generate, write_domains, DomainPaths, DomainSide, Domains, ShiftSpec, World};
pub use manifest::{load_manifest, parse_manifest, write_manifest, DomainManifest, LabelPolicy, ManifestRecord};
