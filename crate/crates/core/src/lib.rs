pub mod exec;
pub mod features;
pub mod glance;
pub mod models;
pub mod reports;
pub mod segmentation;
pub mod shap;
pub mod synthgen;
pub mod telemetry;
