use gridsd2e_core::decoder::{Batch, ExplorationDecoder, FeatureDecoder};
use gridsd2e_core::pipeline::{explore, local_correct, Refit};
use gridsd2e_core::synth::oracle_noise;
use gridsd2e_core::{
    BandPolicy, BitCode, Dataset, Error, Grid, GridParams, OracleDecoder, Pipeline, PipelineConfig,
    RunConfig, SpaceBounds,
};
use nalgebra::DMatrix;

fn small_config(n: usize, extra: &str) -> RunConfig {
    RunConfig::from_toml_str(&format!(
        "seed = 5\n[grid]\nn = {n}\n{extra}\n[decoder]\nreflect_axes = [0]\nnoise_frac = 0.05\n[data]\nsamples = 1500\nchannels = 30\n"
    ))
    .unwrap()
}

fn pipeline(cfg: &RunConfig) -> Pipeline {
    let data = cfg.dataset().unwrap();
    Pipeline::new(
        cfg.pipeline().unwrap(),
        data.clone(),
        cfg.decoder(&data).unwrap(),
    )
    .unwrap()
}

fn grid1(n: usize) -> Grid {
    Grid::new(
        SpaceBounds::cube(1, 0.0, 10.0).unwrap(),
        GridParams::centered(n, 1),
    )
    .unwrap()
}

#[test]
fn batch_correction_equals_per_sample_update() {
    let cfg = small_config(3, "lambda = [1.3, 0.8]\neta = [1.02, 0.98]");
    let data = cfg.dataset().unwrap();
    let g = cfg.grid().unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let batch = Batch::new(&data, &rows);
    let mut dec = cfg.decoder(&data).unwrap();
    dec.fit(&batch, g.bounds().axes()).unwrap();
    let z = explore(dec.as_ref(), &batch, &g).unwrap();
    let targets: Vec<BitCode> = rows.iter().map(|&k| g.encode(&data.label(k))).collect();
    let out = local_correct(&z, &batch, &targets, &g, Refit::None, 8, dec.as_ref(), 0).unwrap();
    let mut n_events = 0;
    for (i, t) in targets.iter().enumerate() {
        let p: Vec<f64> = z.row(i).iter().copied().collect();
        let up = g.update(&p, &g.encode(&p), t).unwrap();
        assert_eq!(
            out.corrected.row(i).iter().copied().collect::<Vec<_>>(),
            up.value
        );
        n_events += up.events.len();
    }
    assert_eq!(out.events.len(), n_events);
    assert_eq!(out.level_mismatches.iter().sum::<usize>(), n_events);
}

#[test]
fn label_error_never_grows_with_depth() {
    let cfg = small_config(1, "");
    let data = cfg.dataset().unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let batch = Batch::new(&data, &rows);
    let mut prev: Option<DMatrix<f64>> = None;
    for n in 0..=8 {
        let g = cfg.grid().unwrap().with_depth(n).unwrap();
        let mut dec = cfg.decoder(&data).unwrap();
        dec.fit(&batch, g.bounds().axes()).unwrap();
        let z = explore(dec.as_ref(), &batch, &g).unwrap();
        let targets: Vec<BitCode> = rows.iter().map(|&k| g.encode(&data.label(k))).collect();
        let err = (local_correct(&z, &batch, &targets, &g, Refit::None, 8, dec.as_ref(), 0)
            .unwrap()
            .corrected
            - &data.labels)
            .abs();
        if let Some(p) = &prev {
            for (e, q) in err.iter().zip(p.iter()) {
                assert!(*e <= q + 1e-12, "N={n}: {e} > {q}");
            }
        }
        prev = Some(err);
    }
}

#[test]
fn refit_matches_brute_force_oracle() {
    // one axis, N = 2, oracle mirrored about whichever region it is fitted on
    let k = 400;
    let sd = 0.4;
    let labels = DMatrix::from_fn(k, 1, |i, _| ((i * 37) % 400) as f64 / 40.0 + 0.0125);
    let data = Dataset::new(labels.clone(), labels.clone()).unwrap();
    let g = grid1(2);
    let rows: Vec<usize> = (0..k).collect();
    let batch = Batch::new(&data, &rows);
    let mut dec = OracleDecoder::new(&labels, &[0], sd, 11).unwrap();
    dec.fit(&batch, g.bounds().axes()).unwrap();
    let z = explore(&dec, &batch, &g).unwrap();
    let targets: Vec<BitCode> = rows.iter().map(|&i| g.encode(&data.label(i))).collect();
    let out = local_correct(&z, &batch, &targets, &g, Refit::Refit, 1, &dec, 0).unwrap();

    let noise = oracle_noise(k, 1, sd, 11).unwrap();
    let flip = |v: f64, lo: f64, hi: f64, m: f64, bit: bool| -> f64 {
        if (v >= m) == bit {
            v
        } else {
            (2.0 * m - v).clamp(lo, hi)
        }
    };
    for i in 0..k {
        let truth = labels[(i, 0)];
        let b1 = truth >= 5.0;
        let (lo, hi) = if b1 { (5.0, 10.0) } else { (0.0, 5.0) };
        let c = 0.5 * (lo + hi);
        let local = (2.0 * c - truth + noise[(i, 0)]).clamp(lo, hi);
        let expect = flip(local, lo, hi, c, truth >= c);
        assert!(
            (out.corrected[(i, 0)] - expect).abs() < 1e-12,
            "sample {i}: {} vs {expect}",
            out.corrected[(i, 0)]
        );
    }
    assert_eq!(out.refit_fallbacks, 0);
}

#[test]
fn small_subspaces_fall_back_to_incoming_predictions() {
    let cfg = small_config(3, "");
    let data = cfg.dataset().unwrap();
    let g = cfg.grid().unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let batch = Batch::new(&data, &rows);
    let mut dec = cfg.decoder(&data).unwrap();
    dec.fit(&batch, g.bounds().axes()).unwrap();
    let z = explore(dec.as_ref(), &batch, &g).unwrap();
    let targets: Vec<BitCode> = rows.iter().map(|&k| g.encode(&data.label(k))).collect();
    let plain = local_correct(&z, &batch, &targets, &g, Refit::None, 8, dec.as_ref(), 0).unwrap();
    let starved = local_correct(
        &z,
        &batch,
        &targets,
        &g,
        Refit::Refit,
        usize::MAX,
        dec.as_ref(),
        0,
    )
    .unwrap();
    assert_eq!(plain.corrected, starved.corrected);
    assert_eq!(starved.refit_fallbacks, 4 + 16);
}

#[test]
fn refit_with_pass_through_decoder_changes_nothing() {
    let cfg = small_config(4, "");
    let data = cfg.dataset().unwrap();
    let g = cfg.grid().unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let batch = Batch::new(&data, &rows);
    let mut dec = FeatureDecoder::new(2);
    dec.fit(&batch, g.bounds().axes()).unwrap();
    let z = DMatrix::from_fn(data.len(), 2, |i, a| {
        g.bounds().axis(a).clamp(data.neural[(i, a)] * 10.0)
    });
    let targets: Vec<BitCode> = rows.iter().map(|&k| g.encode(&data.label(k))).collect();
    let out = local_correct(&z, &batch, &targets, &g, Refit::Refit, 1, &dec, 0).unwrap();
    for (row, t) in out.corrected.row_iter().zip(&targets) {
        let p: Vec<f64> = row.iter().copied().collect();
        assert_eq!(&g.encode(&p), t);
    }
}

#[test]
fn runs_are_deterministic() {
    let cfg = small_config(4, "");
    let a = pipeline(&cfg).run_interaction().unwrap();
    let b = pipeline(&cfg).run_interaction().unwrap();
    assert_eq!(a, b);
}

#[test]
fn test_rows_never_reach_training() {
    let cfg = small_config(4, "");
    let data = cfg.dataset().unwrap();
    let split = data.split(cfg.train.split).unwrap();
    let mut poisoned = data.clone();
    for &k in &split.test {
        poisoned.labels.row_mut(k).fill(0.0);
        poisoned.neural.row_mut(k).fill(1e3);
    }
    let run = |d: &Dataset| {
        let mut p =
            Pipeline::new(cfg.pipeline().unwrap(), d.clone(), cfg.decoder(d).unwrap()).unwrap();
        p.run_interaction().unwrap()
    };
    let (a, b) = (run(&data), run(&poisoned));
    assert_eq!(a.model, b.model);
    assert_eq!(a.corrected, b.corrected);
    assert_eq!(a.events, b.events);
}

#[test]
fn depth_zero_is_the_unsupervised_baseline() {
    let cfg = small_config(0, "");
    let r = pipeline(&cfg).run_interaction().unwrap();
    assert_eq!(r.mode, gridsd2e_core::RunMode::Unsupervised);
    assert!(r.events.is_empty());
    assert!((r.final_test_rmse() - r.baselines.unsupervised_rmse).abs() <= 1e-9);
}

#[test]
fn zero_band_self_step_equals_interaction_on_own_predictions() {
    let cfg = small_config(3, "");
    let mut p = pipeline(&cfg);
    p.run_interaction().unwrap();
    let model = p.model().unwrap().clone();
    let decoder = p.decoder().boxed_clone();
    let sr = p.run_self_reinforcement().unwrap();

    let data = p.data();
    let g = cfg.grid().unwrap();
    let train = &p.split().train;
    let zhat = model.predict(&data.neural_rows(train)).unwrap();
    let targets: Vec<BitCode> = zhat
        .row_iter()
        .map(|r| g.encode(&r.iter().copied().collect::<Vec<_>>()))
        .collect();
    let batch = Batch::new(data, train);
    let z = explore(decoder.as_ref(), &batch, &g).unwrap();
    let out = local_correct(
        &z,
        &batch,
        &targets,
        &g,
        Refit::None,
        8,
        decoder.as_ref(),
        0,
    )
    .unwrap();
    assert_eq!(sr.epochs[0].dropped, 0);
    assert_eq!(sr.corrected.len(), train.len());
    for (i, (k, v)) in sr.corrected.iter().enumerate() {
        assert_eq!(*k, train[i]);
        assert_eq!(v, &out.corrected.row(i).iter().copied().collect::<Vec<_>>());
    }
    assert_eq!(sr.events.len(), out.events.len());
}

#[test]
fn band_policies() {
    let cfg = small_config(3, "epsilon = 0.3");
    let r = {
        let mut p = pipeline(&cfg);
        p.run_interaction().unwrap();
        p.run_self_reinforcement().unwrap()
    };
    assert!(r.epochs[0].dropped > 0);
    assert_eq!(r.epochs[0].interaction_cost, 0);
    assert_eq!(r.corrected.len() + r.epochs[0].dropped, r.train_rows.len());

    let mut cfg = cfg;
    cfg.grid.band_policy = BandPolicy::FallbackToInteraction;
    let mut p = pipeline(&cfg);
    p.run_interaction().unwrap();
    let r = p.run_self_reinforcement().unwrap();
    assert_eq!(r.epochs[0].dropped, 0);
    assert!(r.epochs[0].interaction_cost > 0);
}

#[test]
fn self_reinforcement_needs_a_model() {
    let mut p = pipeline(&small_config(2, ""));
    assert!(matches!(p.run_self_reinforcement(), Err(Error::State(_))));
}

#[test]
fn pca_pipeline_runs() {
    let cfg = RunConfig::from_toml_str(
        "seed = 9\n[grid]\nn = 3\n[decoder]\nkind = \"pca\"\n[data]\nsamples = 800\nchannels = 12\nkernel = { kind = \"linear\" }\n",
    )
    .unwrap();
    let r = pipeline(&cfg).run_interaction().unwrap();
    assert!(r.final_test_rmse().is_finite());
    assert!(r.final_test_rmse() < r.baselines.unsupervised_rmse);
}

#[test]
fn refit_pipeline_runs() {
    let cfg = small_config(3, "");
    let mut cfg = cfg;
    cfg.train.refit = Refit::Refit;
    let r = pipeline(&cfg).run_interaction().unwrap();
    assert!(r.final_test_rmse().is_finite());
    let ps = PipelineConfig::new(cfg.grid().unwrap());
    assert_eq!(ps.refit, Refit::None);
}
