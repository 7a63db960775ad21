use proptest::prelude::*;
use stair::dataio::{split, RawSeries, Scaler, Source, SplitProtocol, SplitSpec, WindowSet};
use stair::norm::{NormConfig, NormMode, NormState};
use stair::tensor::Tensor3;

fn mode() -> impl Strategy<Value = NormMode> {
    prop_oneof![
        Just(NormMode::Full),
        Just(NormMode::MeanOnly),
        Just(NormMode::StdOnly),
        Just(NormMode::None)
    ]
}

fn window() -> impl Strategy<Value = Tensor3<f64>> {
    (1usize..=8, 1usize..=64, 1usize..=8).prop_flat_map(|(b, l, c)| {
        (prop::collection::vec(-1.0f64..1.0, b * l * c), -50.0f64..50.0, 0.0f64..4.0).prop_map(move |(v, off, lscale)| {
            let s = 10f64.powf(lscale - 2.0);
            Tensor3::from_vec(b, l, c, v.into_iter().map(|x| off + s * x).collect()).unwrap()
        })
    })
}

fn rel_diff(a: &Tensor3<f64>, b: &Tensor3<f64>) -> f64 {
    let scale = b.data.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.max_abs_diff(b) / scale
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn norm_round_trip(x in window(), mode in mode(), ai in 0usize..6) {
        let alpha = [0.0, 0.25, 0.5, 0.95, 0.99, 1.0][ai];
        let cfg = NormConfig { mode, alpha };
        let state = NormState::fit(&x, cfg);
        let back = state.denormalize(&state.normalize(&x).unwrap()).unwrap();
        prop_assert!(rel_diff(&back, &x) < 1e-6);
        if alpha == 0.0 || mode == NormMode::None {
            prop_assert_eq!(back.data, x.data);
        }
    }

    #[test]
    fn scaler_round_trip(v in prop::collection::vec(-1e3f64..1e3, 6..60)) {
        let c = 3;
        let len = v.len() / c;
        let values = v[..len * c].to_vec();
        let names = (0..c).map(|i| format!("c{i}")).collect();
        let series = RawSeries::new(values.clone(), names, Source::Synthetic).unwrap();
        let seg = series.segment(0, len, 0);
        let scaler = Scaler::fit(&seg).unwrap();
        let scaled = scaler.apply(&seg).unwrap();
        let back = scaler.invert(&scaled).unwrap();
        for (a, b) in back.values.iter().zip(&values) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn ratio_split_partitions_series(len in 200usize..3000, l in 1usize..40, h in 1usize..40) {
        let series = RawSeries::new(vec![0.5; len], vec!["a".into()], Source::Synthetic).unwrap();
        let train = (len as f64 * 0.7) as usize;
        let val = len - train - (len as f64 * 0.2) as usize;
        let result = split(&series, SplitSpec { protocol: SplitProtocol::Ratio712, lookback: l });
        if l > val {
            prop_assert!(result.is_err());
            return Ok(());
        }
        let s = result.unwrap();
        prop_assert_eq!(s.train.len + s.val.len - l + s.test.len - l, len);
        prop_assert_eq!(s.val.offset, s.train.len - l);
        prop_assert_eq!(s.test.offset, s.train.len + s.val.len - 2 * l);
        if s.train.len >= l + h {
            let w = WindowSet::new(s.train.clone(), l, h).unwrap();
            prop_assert_eq!(w.len(), s.train.len - l - h + 1);
        }
    }
}
