//! Feature manifests, category splits, few-shot sampling and the synthetic
//! feature world.

mod grouping;
mod manifest;
mod sampling;
mod synthetic;

pub use grouping::{CategorySplit, CoarseGrouping};
pub use manifest::{
    l2_normalize, Domain, FeatureRecord, Manifest, BLOB_FILE, HEADER_FILE, MANIFEST_VERSION,
};
pub use sampling::{average_features, sample_category, sample_few_shot, sample_records, FewShot};
pub use synthetic::{
    category_id, generate_synthetic, generate_world, group_id, CoarseStructure, DomainMap,
    SyntheticConfig, SyntheticWorld,
};
