pub mod dataio;
pub mod features;
pub mod geometry;
pub mod inference;
pub mod kinematics;
pub mod model;
pub mod rng;
pub mod training;

/// Sizes the global worker pool used for feature extraction and repeated
/// runs. Only the first call has an effect.
pub fn init_threads(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
}
