use roughquant::mckean::{mv_quantized_law, CoefficientSpec, Kuramoto};
use roughquant::quant::{quantize_measure, QuantOptions};
use roughquant::wasserstein::{wasserstein_paths, PathMetric};
use roughquant::wavelet::dyadic_grid;
use roughquant::{BmSampler, Codebook1D, SampledPath, WeightedPathMeasure};

fn opts() -> QuantOptions {
    QuantOptions { level_cap: 3, ..QuantOptions::default() }
}

#[test]
fn quantized_law_is_symmetric_and_normalised() {
    let sampler = BmSampler::new(2, 1.0, 8, 9).unwrap();
    let law = quantize_measure(&sampler, 5, 0.4, &opts()).unwrap();
    assert_eq!(law.len(), 25);
    assert!((law.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut mean = vec![0.0; law.atoms()[0].as_slice().len()];
    for (a, w) in law.iter() {
        for (m, v) in mean.iter_mut().zip(a.as_slice()) {
            *m += w * v;
        }
    }
    assert!(mean.iter().all(|m| m.abs() < 1e-14));
}

#[test]
fn mv_law_json_round_trip_and_self_distance() {
    let sampler = BmSampler::new(1, 1.0, 8, 4).unwrap();
    let coeffs = Kuramoto { dim: 1, noise_dim: 1, coupling: 0.7, frequency: vec![0.2], sigma: vec![0.4] };
    let grid = dyadic_grid(1.0, 6);
    let law = mv_quantized_law(&coeffs, &sampler, 6, 0.4, &[0.3], &grid, &opts()).unwrap();
    let text = serde_json::to_string(&law).unwrap();
    let back: WeightedPathMeasure = serde_json::from_str(&text).unwrap();
    assert_eq!(back, law);
    for metric in [PathMetric::Holder, PathMetric::Uniform, PathMetric::RhoAlpha] {
        assert_eq!(wasserstein_paths(&law, &back, 0.4, 1.0, metric).unwrap().value, 0.0);
    }
}

#[test]
fn runs_are_reproducible() {
    let sampler = BmSampler::new(1, 1.0, 8, 12).unwrap();
    let spec: CoefficientSpec =
        serde_json::from_str(r#"{"kind":"gradient-interaction","dim":1,"noise_dim":1,"confinement":0.5,"interaction":0.4,"sigma":[0.3]}"#)
            .unwrap();
    let coeffs = spec.build().unwrap();
    let grid = dyadic_grid(1.0, 5);
    let a = mv_quantized_law(coeffs.as_ref(), &sampler, 4, 0.4, &[0.0], &grid, &opts()).unwrap();
    let b = mv_quantized_law(coeffs.as_ref(), &sampler, 4, 0.4, &[0.0], &grid, &opts()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn codebook_and_path_files_round_trip() {
    let sampler = BmSampler::new(1, 1.0, 8, 1).unwrap();
    let (cb, _) = roughquant::quant::train_codebook(&sampler, 4, 0.4, &opts()).unwrap();
    let back: Codebook1D = serde_json::from_str(&serde_json::to_string(&cb).unwrap()).unwrap();
    assert_eq!(back, cb);

    let path = sampler.sample(3).sample_on(&dyadic_grid(1.0, 4)).unwrap();
    let mut buf = Vec::new();
    path.write_csv(&mut buf).unwrap();
    let read = SampledPath::read_csv(buf.as_slice()).unwrap();
    assert_eq!(read.grid(), path.grid());
    assert!(read.values().iter().zip(path.values()).all(|(a, b)| (a - b).abs() <= 1e-15 * b.abs().max(1.0)));
}
