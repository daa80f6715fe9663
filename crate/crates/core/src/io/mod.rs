//! Persistence: COCO documents, binary feature and gallery files, embedding
//! banks, region files and job configuration.

pub mod bank;
pub mod coco;
pub mod config;
pub mod features;
pub mod gallery;
pub mod regions;

pub use bank::{read_bank, write_bank};
pub use coco::{
    read_coco, read_results, write_coco, write_results, Annotation, AnnotationSet, CategoryInfo, Detection,
    DetectionSet, ImageInfo, Segmentation,
};
pub use config::JobConfig;
pub use features::{
    decode_feature_file, encode_feature_file, read_feature_file, write_feature_file, FeatureFile, FeatureMetadata,
};
pub use gallery::{read_gallery, write_gallery};
pub use regions::{read_regions, write_regions};
