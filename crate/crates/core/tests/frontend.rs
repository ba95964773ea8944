use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xylo_snn::frontend::{design_filterbank, FilterBankSpec};
use xylo_snn::harness::{classify_segment, measure_latency};
use xylo_snn::raster::{EventRaster, FRONTEND_EVENT_CAP};

fn noise(seed: u64, n: usize, amp: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn louder_audio_never_lowers_a_bin() {
    let spec = FilterBankSpec::default();
    let bank = design_filterbank(&spec).unwrap();
    for seed in 0..3 {
        let audio = noise(seed, 8000, 0.05);
        let base = bank.encode(&audio).unwrap();
        for g in [1.0, 1.1, 1.5, 2.0, 3.0, 4.5, 7.0, 10.0, 25.0, 100.0] {
            let louder: Vec<f64> = audio.iter().map(|x| x * g).collect();
            let r = bank.encode(&louder).unwrap();
            for (a, b) in base.counts().iter().zip(r.counts()) {
                assert!(b >= a, "gain {g}: count fell from {a} to {b}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn counts_stay_in_range(seed in any::<u64>(), amp in 0.0f64..40.0) {
        let spec = FilterBankSpec::default();
        let r = design_filterbank(&spec).unwrap().encode(&noise(seed, 3200, amp)).unwrap();
        prop_assert_eq!(r.channels(), spec.n_channels);
        prop_assert!(r.counts().iter().all(|&c| c <= FRONTEND_EVENT_CAP));
    }

    #[test]
    fn latency_is_within_the_segment(
        counts in proptest::collection::vec(0u32..3, 40 * 3),
        label in 0usize..3,
    ) {
        let r = EventRaster::from_counts(40, 3, 1e-3, counts).unwrap();
        let latency = measure_latency(&r, label);
        prop_assert_eq!(latency.is_some(), r.first_event(label).is_some());
        if let Some(l) = latency {
            prop_assert!(l > 0.0 && l <= 40.0);
        }
        let padded = r.padded(25);
        prop_assert_eq!(measure_latency(&padded, label), latency);
        prop_assert_eq!(classify_segment(&padded), classify_segment(&r));
    }
}
