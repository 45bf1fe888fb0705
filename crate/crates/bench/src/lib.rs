//! Fixtures shared by the benchmarks.

use postvar::circuits::{build_ansatz, encode_data, AnsatzSpec};
use postvar::data::{synth_dataset, Dataset, SynthKind, SynthParams};
use postvar::sim::{run_circuit, StateVector};
use postvar::util::derived_rng;

/// Encoded and entangled state for a random input on `n` qubits.
pub fn prepared_state(n: usize, seed: u64) -> StateVector {
    let data = blobs(1, 4 * n, seed);
    let x = &data.features[0];
    let spec = AnsatzSpec::standard(n).unwrap();
    let theta: Vec<f64> = (0..spec.k()).map(|j| 0.1 * (j as f64 + 1.0)).collect();
    let circuit = encode_data(x, n)
        .unwrap()
        .then(&build_ansatz(&spec, &theta).unwrap())
        .unwrap();
    run_circuit(&StateVector::zero(n).unwrap(), &circuit).unwrap()
}

pub fn blobs(d: usize, dim: usize, seed: u64) -> Dataset {
    let params = SynthParams {
        d,
        dim,
        ..SynthParams::default()
    };
    synth_dataset(SynthKind::Blobs, &params, &mut derived_rng(seed, &[1])).unwrap()
}
