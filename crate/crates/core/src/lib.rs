pub mod autograd;
pub mod dataset;
pub mod explain;
pub mod features;
pub mod labeler;
pub mod metrics;
pub mod models;
pub mod par;
pub mod seed;
pub mod trajdata;
pub mod training;
