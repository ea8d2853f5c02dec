//! Shared fixtures for the pipeline benchmarks.

use tq_core::model::{Network, SignalBatch};
use tq_core::toy::{Correlation, ToySpec};

/// Mid-size correlated toy network with a calibration batch.
pub fn bench_fixture() -> (Network, SignalBatch) {
    let spec = ToySpec::conv3(Correlation::Ar1Input { rho: 0.9 });
    let net = spec.build(0xBE).expect("toy spec is valid");
    let calib = spec.calibration(0xBE, 16);
    (net, calib)
}
