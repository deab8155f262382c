//! Cell-state statistics, the exploding-state demonstration, depth-wise
//! gradient flow and QRNN/LSTM throughput.

mod explode;
mod probe;
mod stats;
mod throughput;

pub use explode::{exploding_state_demo, rollout, MatrixFamily, NormTrajectory};
pub use probe::{compare_depth, gradient_depth_probe, probe_readout, DepthProfile};
pub use stats::{cell_state_stats, ActivationStats, StatsAccumulator};
pub use throughput::{throughput_bench, BenchPlan, BenchSubject, ThroughputReport};

impl ActivationStats {
    pub const TSV_HEADER: &'static str = "layer\tnear_zero\tnegative\tpositive\ttau\tsamples";

    pub fn tsv(&self, layer: usize) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            layer, self.near_zero, self.negative, self.positive, self.tau, self.samples
        )
    }
}
