use std::f64::consts::PI;

use onetfwi_core::geometry::{make_openfwi_geometry, AcquisitionGeometry, Raw, ShotGatherSet};
use onetfwi_core::preprocess::{
    add_filtered_noise, corrupt, denormalize, fit_normalization, gain_log1p, mask_receivers, normalize, CorruptionSpec,
    NoiseScale, NormalizationStats, DEFAULT_MASKED_RECEIVERS,
};
use proptest::prelude::*;

fn synthetic(seed: u64) -> ShotGatherSet<Raw> {
    let geo = make_openfwi_geometry();
    let n = 5 * 70 * 1000;
    let data = (0..n)
        .map(|i| {
            let t = (i % 1000) as f64 * 1e-3;
            let r = (i / 1000) as f64;
            ((t * (40.0 + r) + seed as f64).sin() * (1.0 + r / 10.0)) as f32
        })
        .collect();
    ShotGatherSet::new(geo, data).unwrap()
}

/// Power above `cutoff` of a real sequence, by direct DFT.
fn high_band_fraction(x: &[f64], dt: f64, cutoff: f64) -> f64 {
    let n = x.len();
    let (mut high, mut total) = (0.0, 0.0);
    for k in 0..n {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let ang = -2.0 * PI * (k * t % n) as f64 / n as f64;
            re += v * ang.cos();
            im += v * ang.sin();
        }
        let p = re * re + im * im;
        total += p;
        if (k.min(n - k) as f64) / (n as f64 * dt) > cutoff {
            high += p;
        }
    }
    high / total
}

#[test]
fn zero_sigma_is_identity() {
    let g = synthetic(1);
    let out = add_filtered_noise(g.clone(), &CorruptionSpec::noise(0.0, 9)).unwrap();
    assert_eq!(out.data(), g.data());
}

#[test]
fn noise_is_band_limited() {
    let g = synthetic(2);
    let out = add_filtered_noise(g.clone(), &CorruptionSpec::noise(0.1, 4)).unwrap();
    for (src, rec) in [(0usize, 0usize), (2, 33), (4, 69)] {
        let diff: Vec<f64> = out.trace(src, rec).iter().zip(g.trace(src, rec)).map(|(a, b)| (*a - *b) as f64).collect();
        assert!(diff.iter().any(|d| *d != 0.0));
        assert!(high_band_fraction(&diff, 1e-3, 100.0) < 0.01);
    }
}

#[test]
fn noise_scales_with_trace_maximum() {
    let g = synthetic(3);
    let spec = CorruptionSpec::noise(0.05, 11);
    let base = add_filtered_noise(g.clone(), &spec).unwrap();
    let doubled = ShotGatherSet::new(g.geometry().clone(), g.data().iter().map(|v| 2.0 * v).collect()).unwrap();
    let out = add_filtered_noise(doubled, &spec).unwrap();
    for i in (0..g.data().len()).step_by(997) {
        let n1 = base.data()[i] - g.data()[i];
        let n2 = out.data()[i] - 2.0 * g.data()[i];
        assert!((n2 - 2.0 * n1).abs() <= 1e-5 * (1.0 + n1.abs()));
    }
}

#[test]
fn signed_and_absolute_scaling_differ_for_negative_peaks() {
    let geo = AcquisitionGeometry::new(vec![0.0], vec![0.0], 1e-3, 64).unwrap();
    let data: Vec<f32> = (0..64).map(|i| if i == 10 { -5.0 } else { 1.0 }).collect();
    let g = ShotGatherSet::new(geo, data).unwrap();
    let signed = add_filtered_noise(g.clone(), &CorruptionSpec::noise(0.1, 1)).unwrap();
    let abs = add_filtered_noise(g.clone(), &CorruptionSpec { noise_scale: NoiseScale::AbsMax, ..CorruptionSpec::noise(0.1, 1) }).unwrap();
    let ratio = (abs.data()[3] - g.data()[3]) / (signed.data()[3] - g.data()[3]);
    assert!((ratio - 5.0).abs() < 1e-4);
}

#[test]
fn seeds_control_the_draw() {
    let g = synthetic(4);
    let a = add_filtered_noise(g.clone(), &CorruptionSpec::noise(0.05, 7)).unwrap();
    let b = add_filtered_noise(g.clone(), &CorruptionSpec::noise(0.05, 7)).unwrap();
    let c = add_filtered_noise(g, &CorruptionSpec::noise(0.05, 8)).unwrap();
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), c.data());
}

#[test]
fn cutoff_at_or_above_nyquist_is_rejected() {
    let spec = CorruptionSpec { cutoff_hz: 500.0, ..CorruptionSpec::noise(0.1, 0) };
    assert!(add_filtered_noise(synthetic(0), &spec).is_err());
}

#[test]
fn masking_zeroes_exactly_the_listed_columns() {
    let g = synthetic(5);
    let out = mask_receivers(g.clone(), &DEFAULT_MASKED_RECEIVERS).unwrap();
    for src in 0..5 {
        for rec in 0..70 {
            if DEFAULT_MASKED_RECEIVERS.contains(&rec) {
                assert!(out.trace(src, rec).iter().all(|v| *v == 0.0));
            } else {
                assert_eq!(out.trace(src, rec), g.trace(src, rec));
            }
        }
    }
    let again = mask_receivers(out.clone(), &DEFAULT_MASKED_RECEIVERS).unwrap();
    assert_eq!(again.data(), out.data());
    assert_eq!(mask_receivers(g.clone(), &[]).unwrap().data(), g.data());
    assert!(mask_receivers(g, &[70]).is_err());
}

#[test]
fn full_pipeline_stages() {
    let spec = CorruptionSpec { masked_receivers: vec![1, 2], ..CorruptionSpec::noise(0.02, 3) };
    let corrupted = corrupt(synthetic(6), &spec).unwrap();
    assert_eq!(corrupted.stage(), "corrupted");
    let gained = gain_log1p(corrupted);
    assert_eq!(gained.stage(), "gained");
    let stats = fit_normalization([&gained]).unwrap();
    let normalized = normalize(gained.clone(), &stats).unwrap();
    assert_eq!(normalized.stage(), "normalized");
    let (lo, hi) = normalized.data().iter().fold((f32::MAX, f32::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
    assert!((lo + 1.0).abs() < 1e-6 && (hi - 1.0).abs() < 1e-6);
    let back = denormalize(normalized, &stats).unwrap();
    for (a, b) in back.data().iter().zip(gained.data()) {
        assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()));
    }
}

proptest! {
    #[test]
    fn gain_is_odd_and_monotone(a in -1e6f32..1e6, b in -1e6f32..1e6) {
        let geo = AcquisitionGeometry::new(vec![0.0], vec![0.0], 1e-3, 4).unwrap();
        let g = gain_log1p(ShotGatherSet::new(geo, vec![a, -a, b, a.min(b)]).unwrap());
        let d = g.data();
        prop_assert_eq!(d[0], -d[1]);
        if a < b { prop_assert!(d[0] <= d[2]); }
        prop_assert!(d[3] <= d[0].max(d[2]));
    }

    #[test]
    fn stats_are_permutation_invariant(mut v in prop::collection::vec(-100f32..100.0, 2..40), split in 1usize..39) {
        prop_assume!(v.iter().any(|x| *x != v[0]));
        let k = split.min(v.len() - 1);
        let s1 = NormalizationStats::fit_values([&v[..k], &v[k..]]).unwrap();
        let s2 = NormalizationStats::fit_values([&v[k..], &v[..k]]).unwrap();
        prop_assert_eq!(s1, s2);
        v.reverse();
        prop_assert_eq!(NormalizationStats::fit_values([&v[..]]).unwrap(), s1);
    }

    #[test]
    fn normalize_round_trip(x in -50f32..50.0, lo in -10f64..0.0, width in 0.5f64..20.0) {
        let s = NormalizationStats::new(lo, lo + width).unwrap();
        prop_assert!((s.invert(s.apply(x)) - x).abs() <= 1e-5 * (1.0 + x.abs()));
    }
}
