use deepbf::beamform::mv_weights;
use deepbf::focusing::{ApertureSpec, EdgeMode};
use deepbf::iq::hilbert_fir;
use deepbf::net::{ArchSpec, Mode, NetworkParams, Norm};
use deepbf::pwl::extract_pwl;
use deepbf::rfdata::{log_compress, read_cube, write_cube};
use deepbf::subsample::{center_pair, make_mask, DepthMode, SamplingScheme, Selection};
use deepbf::{CubeKind, ProbeConfig, RfCube};
use ndarray::{Array2, Array3};
use proptest::prelude::*;

fn bias_free(seed: u64) -> NetworkParams {
    let arch = ArchSpec {
        in_channels: 2,
        out_channels: 2,
        stages: 1,
        convs_per_stage: 1,
        channels: 3,
        norm: Norm::None,
        bias: false,
        te: 3,
        rx: 3,
        input_skip: seed % 2 == 0,
    };
    NetworkParams::xavier(arch, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn masks_keep_exact_count_and_centre_pair(
        channels in 4usize..40,
        keep_frac in 0.0f64..1.0,
        seed in any::<u64>(),
        variable in any::<bool>(),
    ) {
        let keep = 2 + ((channels - 2) as f64 * keep_frac) as usize;
        let mode = if variable { DepthMode::Variable } else { DepthMode::Fixed };
        let scheme = SamplingScheme::random(keep, mode, seed);
        let m = make_mask(&scheme, channels, 12).unwrap();
        let (a, b) = center_pair(channels);
        for n in 0..12 {
            prop_assert_eq!(m.keep_count(n), keep);
            prop_assert!(m.is_active(n, a) && m.is_active(n, b));
        }
    }

    #[test]
    fn uniform_masks_keep_exact_count(channels in 2usize..40, keep_frac in 0.0f64..1.0) {
        let keep = 1 + ((channels - 1) as f64 * keep_frac) as usize;
        let scheme = SamplingScheme { keep, selection: Selection::Uniform, depth_mode: DepthMode::Fixed, seed: 0 };
        let m = make_mask(&scheme, channels, 3).unwrap();
        prop_assert!((0..3).all(|n| m.keep_count(n) == keep));
    }

    #[test]
    fn hilbert_taps_are_antisymmetric(half in 3usize..60) {
        let k = hilbert_fir(2 * half + 1).unwrap();
        let len = k.taps.len();
        prop_assert_eq!(k.taps[half], 0.0);
        for m in 0..len {
            prop_assert_eq!(k.taps[m], -k.taps[len - 1 - m]);
        }
    }

    #[test]
    fn log_compress_ignores_positive_scale(
        vals in proptest::collection::vec(0.0f64..10.0, 12),
        scale in 1e-3f64..1e3,
        dr in 20.0f64..80.0,
    ) {
        let env = Array2::from_shape_vec((3, 4), vals).unwrap();
        let a = log_compress(&env, dr);
        let b = log_compress(&env.mapv(|v| v * scale), dr);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
            prop_assert!(*x >= -dr && *x <= 0.0);
        }
    }

    #[test]
    fn capon_weights_meet_the_constraint(
        k in 1usize..8,
        entries in proptest::collection::vec(-1.0f64..1.0, 64),
        loading in 0.0f64..0.5,
    ) {
        // R = A A' + 0.1 I is symmetric positive definite.
        let mut r = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                r[i * k + j] = (0..k).map(|t| entries[i * 8 + t] * entries[j * 8 + t]).sum::<f64>();
            }
            r[i * k + i] += 0.1;
        }
        let w = mv_weights(&r, k, loading).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_apertures_stay_on_the_element_row(
        lines in 1usize..40,
        extra in 0usize..40,
        rx_frac in 0.0f64..1.0,
    ) {
        let e = 8 + extra;
        let c = 1 + ((e - 1) as f64 * rx_frac) as usize;
        let probe = ProbeConfig { num_elements: e, num_scanlines: lines, num_rx: c, num_tx: lines.min(e), ..ProbeConfig::default() };
        let spec = ApertureSpec::centered(&probe, EdgeMode::Shift).unwrap();
        prop_assert!(spec.starts.iter().all(|&s| s >= 0 && s as usize + c <= e));
    }

    #[test]
    fn cube_round_trips(lines in 1usize..5, depth in 1usize..9, seed in any::<u32>()) {
        let probe = ProbeConfig { num_scanlines: lines, num_rx: 3, ..ProbeConfig::desk() };
        let data = Array3::from_shape_fn((lines, depth, 3), |(l, n, c)| {
            ((l * 131 + n * 17 + c * 7 + seed as usize) % 97) as f32 - 48.0
        });
        let cube = RfCube::new(CubeKind::Aperture, probe, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ubf");
        write_cube(&cube, &path).unwrap();
        prop_assert_eq!(read_cube(&path).unwrap(), cube);
    }

    #[test]
    fn bias_free_nets_are_positively_homogeneous(
        seed in 0u64..50,
        input in proptest::collection::vec(-1.0f64..1.0, 18),
        scale in 0.01f64..100.0,
    ) {
        let p = bias_free(seed);
        let a = p.forward(&input, Mode::Infer).unwrap();
        let scaled: Vec<f64> = input.iter().map(|v| v * scale).collect();
        let b = p.forward(&scaled, Mode::Infer).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x * scale - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
        let ra = extract_pwl(&p, &input, 3).unwrap();
        let rb = extract_pwl(&p, &scaled, 3).unwrap();
        prop_assert_eq!(ra.region_id, rb.region_id);
    }
}
