//! Behavioural checks of the network, its loss, training and tiled inference.

use medmus_core::geometry::{GridSpec, Volume};
use medmus_core::model::{
    deep_supervision_loss, normalize_intensity, predict_volume, scale_weights, train, Control, LrSchedule, Model,
    ModelConfig, MultiScaleOutputs, PredictOptions, Sample, TrainConfig, WindowWeighting,
};
use medmus_core::tensor::{one_hot, DownMode, Graph, OptimizerConfig, OptimizerKind, Tensor};

fn tiny(mem: bool) -> ModelConfig {
    ModelConfig {
        mem_enabled: mem,
        ..ModelConfig::tiny()
    }
}

fn ramp_input(cfg: &ModelConfig, batch: usize) -> Tensor<f64> {
    let [d, h, w] = cfg.patch_size;
    let data = (0..batch * d * h * w).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
    Tensor::from_vec([batch, 1, d, h, w], data).unwrap()
}

fn set_param(model: &mut Model<f64>, name: &str, f: impl Fn(usize) -> f64) {
    let i = model.params().index_of(name).unwrap_or_else(|| panic!("no {name}"));
    let t = &mut model.params_mut().tensors_mut()[i];
    t.data_mut().iter_mut().enumerate().for_each(|(j, v)| *v = f(j));
}

#[test]
fn channel_progression_follows_cap() {
    let cfg = ModelConfig {
        num_levels: 3,
        base_channels: 4,
        channel_cap: 8,
        ..ModelConfig::tiny()
    };
    assert_eq!(cfg.channels(), vec![4, 8, 8]);
    let m = Model::<f64>::build(&cfg, 0).unwrap();
    let enc2 = m.params().index_of("enc2.0.conv.weight").unwrap();
    assert_eq!(m.params().tensors()[enc2].shape(), [8, 8, 3, 3, 3]);
}

#[test]
fn indivisible_patch_is_rejected() {
    let cfg = ModelConfig {
        patch_size: [8, 16, 10],
        ..ModelConfig::tiny()
    };
    assert!(Model::<f64>::build(&cfg, 0).is_err());
}

#[test]
fn every_scale_is_a_probability_map() {
    for mem in [true, false] {
        let cfg = tiny(mem);
        let m = Model::<f64>::build(&cfg, 5).unwrap();
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let x = g.constant(ramp_input(&cfg, 2));
        let out = m.forward(&mut g, &p, x).unwrap();
        for (n, &pv) in out.probs.iter().enumerate() {
            let t = g.value(pv);
            assert_eq!(t.spatial(), cfg.level_size(n));
            for b in 0..2 {
                for i in 0..t.voxels() {
                    let s: f64 = (0..2).map(|c| t.plane(b, c)[i]).sum();
                    assert!((s - 1.0).abs() < 1e-9);
                    assert!((0..2).all(|c| t.plane(b, c)[i] > 0.0 && t.plane(b, c)[i] < 1.0));
                }
            }
        }
    }
}

#[test]
fn mem_changes_values_not_shapes() {
    let (a, b) = (tiny(true), tiny(false));
    let ma = Model::<f64>::build(&a, 2).unwrap();
    let mb = Model::<f64>::build(&b, 2).unwrap();
    let run = |m: &Model<f64>| {
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let x = g.constant(ramp_input(&a, 1));
        let out = m.forward(&mut g, &p, x).unwrap();
        out.probs.iter().map(|&v| g.value(v).clone()).collect::<Vec<_>>()
    };
    let (pa, pb) = (run(&ma), run(&mb));
    assert_eq!(pa.len(), pb.len());
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(x.shape(), y.shape());
    }
    assert!(pa[0].max_abs_diff(&pb[0]) > 1e-6);
}

#[test]
fn equal_logit_heads_give_uniform_maps() {
    for mem in [true, false] {
        let cfg = tiny(mem);
        let mut m = Model::<f64>::build(&cfg, 9).unwrap();
        let heads: Vec<String> = m
            .params()
            .names()
            .iter()
            .filter(|n| n.starts_with("head") || n.contains(".head."))
            .cloned()
            .collect();
        for name in heads {
            set_param(&mut m, &name, |_| 0.0);
        }
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let x = g.constant(ramp_input(&cfg, 1));
        let out = m.forward(&mut g, &p, x).unwrap();
        for &pv in &out.probs {
            assert!(g.value(pv).data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        }
    }
}

#[test]
fn degenerate_mem_gives_constant_map() {
    let cfg = tiny(true);
    let mut m = Model::<f64>::build(&cfg, 4).unwrap();
    for part in ["context.weight", "context.bias", "mix.weight", "mix.bias", "head.weight"] {
        set_param(&mut m, &format!("mem0.{part}"), |_| 0.0);
    }
    set_param(&mut m, "mem0.head.bias", |c| if c == 0 { 3.0 } else { -1.0 });
    let mut g = Graph::new();
    let p = m.bind(&mut g, false);
    let x = g.constant(ramp_input(&cfg, 1));
    let out = m.forward(&mut g, &p, x).unwrap();
    let p0 = g.value(out.probs[0]);
    let want = 1.0 / (1.0 + (-4.0f64).exp());
    assert!(p0.plane(0, 0).iter().all(|&v| (v - want).abs() < 1e-12));
    // attention features are the mix bias alone, i.e. zero
    assert!(g.value(out.attention[0].unwrap()).data().iter().all(|&v| v == 0.0));
    assert_eq!(g.value(out.embeddings[0].unwrap()).channels(), cfg.channels()[0] + 1);
}

fn outputs_from(g: &mut Graph<f64>, probs: Vec<Tensor<f64>>) -> MultiScaleOutputs {
    let vars: Vec<_> = probs.into_iter().map(|t| g.constant(t)).collect();
    MultiScaleOutputs {
        features: vars.clone(),
        embeddings: vec![None; vars.len()],
        attention: vec![None; vars.len()],
        probs: vars,
    }
}

#[test]
fn single_scale_loss_is_that_scale() {
    let labels: Vec<u8> = (0..64).map(|i| u8::from(i % 3 == 0)).collect();
    let prob = Tensor::from_vec([1, 2, 4, 4, 4], (0..128).map(|i| if i < 64 { 0.7 } else { 0.3 }).collect()).unwrap();
    let mut g = Graph::new();
    let out = outputs_from(&mut g, vec![prob]);
    let loss = deep_supervision_loss(&mut g, &out, &labels, [1, 4, 4, 4], DownMode::Nearest, 1e-5).unwrap();
    let v = loss.values(&g);
    assert_eq!(v.weights, vec![1.0]);
    assert_eq!(v.total, v.per_scale[0]);
}

#[test]
fn perfect_predictions_have_near_zero_loss() {
    let labels: Vec<u8> = (0..512).map(|i| u8::from((i / 8) % 3 == 0)).collect();
    let mut probs = Vec::new();
    for n in 0..3 {
        let s = 8 >> n;
        let gt = medmus_core::model::loss::downsample_labels(&labels, [1, 8, 8, 8], 1 << n, DownMode::Nearest).unwrap();
        probs.push(one_hot::<f64>(&gt, [1, s, s, s], 2).unwrap());
    }
    let mut g = Graph::new();
    let out = outputs_from(&mut g, probs);
    let loss = deep_supervision_loss(&mut g, &out, &labels, [1, 8, 8, 8], DownMode::Nearest, 1e-5).unwrap();
    let v = loss.values(&g);
    assert!(v.total < 1e-3, "{v:?}");
    let weighted: f64 = v.per_scale.iter().zip(&v.weights).map(|(l, w)| l * w).sum();
    assert!((weighted - v.total).abs() < 1e-12);
    assert_eq!(v.weights, scale_weights(3));
}

#[test]
fn out_of_range_label_is_an_error() {
    let labels = vec![2u8; 8];
    let prob = Tensor::full([1, 2, 2, 2, 2], 0.5);
    let mut g = Graph::new();
    let out = outputs_from(&mut g, vec![prob]);
    assert!(deep_supervision_loss(&mut g, &out, &labels, [1, 2, 2, 2], DownMode::Nearest, 1e-5).is_err());
}

fn blob_sample(cfg: &ModelConfig, centre: [f64; 3], seed: u64) -> Sample {
    let [d, h, w] = cfg.patch_size;
    let mut image = Vec::with_capacity(d * h * w);
    let mut labels = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let r2 = ((z as f64 - centre[0]) / (d as f64 / 4.0)).powi(2)
                    + ((y as f64 - centre[1]) / (h as f64 / 4.0)).powi(2)
                    + ((x as f64 - centre[2]) / (w as f64 / 4.0)).powi(2);
                let inside = r2 < 1.0;
                let texture = (((x * 7 + y * 13 + z * 3) as u64 + seed) % 11) as f32 / 11.0;
                image.push(if inside { 0.3 } else { 1.0 } + 0.2 * texture);
                labels.push(u8::from(inside));
            }
        }
    }
    Sample::new(cfg.patch_size, normalize_intensity(&image), labels).unwrap()
}

fn quick_train_config(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerConfig { lr, ..OptimizerConfig::default() },
        epochs,
        batch_size: 2,
        seed: 17,
        schedule: LrSchedule::Constant,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let cfg = tiny(true);
    let mut m = Model::<f32>::build(&ModelConfig { ..cfg.clone() }, 1).unwrap();
    let before = m.params().clone();
    let data = vec![blob_sample(&cfg, [4.0, 8.0, 8.0], 0), blob_sample(&cfg, [3.0, 6.0, 9.0], 1)];
    let report = train(&mut m, &data, &quick_train_config(1, 0.0), |_, _| Ok(Control::Continue)).unwrap();
    assert_eq!(report.curve.len(), 1);
    assert_eq!(m.params(), &before);
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = tiny(true);
    let data: Vec<Sample> = (0..3).map(|i| blob_sample(&cfg, [4.0, 7.0 + i as f64, 8.0], i)).collect();
    let run = || {
        let mut m = Model::<f32>::build(&cfg, 3).unwrap();
        let mut tc = quick_train_config(3, 0.01);
        tc.flip_augment = true;
        let r = train(&mut m, &data, &tc, |_, _| Ok(Control::Continue)).unwrap();
        (r.curve.last().unwrap().loss.total, m)
    };
    let (la, ma) = run();
    let (lb, mb) = run();
    assert_eq!(la.to_bits(), lb.to_bits());
    assert_eq!(ma.params(), mb.params());
}

#[test]
fn callback_can_stop_training() {
    let cfg = tiny(false);
    let mut m = Model::<f32>::build(&cfg, 3).unwrap();
    let data = vec![blob_sample(&cfg, [4.0, 8.0, 8.0], 0)];
    let r = train(&mut m, &data, &quick_train_config(10, 0.01), |_, rec| {
        Ok(if rec.epoch == 1 { Control::Stop } else { Control::Continue })
    })
    .unwrap();
    assert_eq!(r.curve.len(), 2);
    assert!(r.stopped_early);
    let csv = r.curve_csv();
    assert!(csv.starts_with("epoch,lr,total,level0,level1,level2\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn memorizes_a_single_phantom_at_desk_scale() {
    let cfg = ModelConfig::desk();
    let mut m = Model::<f32>::build(&cfg, 21).unwrap();
    let data = vec![blob_sample(&cfg, [8.0, 20.0, 36.0], 0)];
    let mut tc = quick_train_config(50, 0.01);
    tc.batch_size = 1;
    let r = train(&mut m, &data, &tc, |_, _| Ok(Control::Continue)).unwrap();
    let first = r.curve[0].loss.total;
    let last = r.curve.last().unwrap().loss.total;
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
}

fn grid_for(dims_dhw: [usize; 3]) -> GridSpec {
    GridSpec::new([dims_dhw[2], dims_dhw[1], dims_dhw[0]], [0.5; 3], [0.0; 3]).unwrap()
}

#[test]
fn single_window_prediction_equals_forward() {
    let cfg = tiny(true);
    let m = Model::<f64>::build(&cfg, 8).unwrap();
    let sample = blob_sample(&cfg, [4.0, 8.0, 8.0], 2);
    let raw: Vec<f32> = sample.image.iter().map(|v| v * 3.0 + 10.0).collect();
    let vol = Volume::from_data(grid_for(cfg.patch_size), raw.clone()).unwrap();
    for weighting in [WindowWeighting::Uniform, WindowWeighting::Gaussian] {
        let pred = predict_volume(&m, &vol, &PredictOptions { overlap: 0.5, weighting }).unwrap();
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let norm = normalize_intensity(&raw);
        let [d, h, w] = cfg.patch_size;
        let x = g.constant(Tensor::from_vec([1, 1, d, h, w], norm.iter().map(|&v| v as f64).collect()).unwrap());
        let out = m.forward(&mut g, &p, x).unwrap();
        let p0 = g.value(out.probs[0]);
        for i in 0..p0.voxels() {
            let fg = 1.0 - p0.plane(0, 0)[i];
            assert!((pred.foreground.data()[i] as f64 - fg).abs() < 1e-6);
            assert_eq!(pred.labels.data()[i], u8::from(p0.plane(0, 1)[i] > p0.plane(0, 0)[i]));
        }
    }
}

#[test]
fn constant_volume_gives_constant_prediction_with_pointwise_model() {
    let cfg = tiny(true);
    let mut m = Model::<f64>::build(&cfg, 8).unwrap();
    // keep only the centre tap of every 3x3x3 kernel and make transposed
    // kernels tap-independent: the network becomes translation invariant
    let names: Vec<String> = m.params().names().to_vec();
    for (name, t) in names.iter().zip(m.params_mut().tensors_mut()) {
        let s = t.shape();
        if name.ends_with(".weight") && s[2] == 3 {
            for (j, v) in t.data_mut().iter_mut().enumerate() {
                if j % 27 != 13 {
                    *v = 0.0;
                }
            }
        } else if name.ends_with("up.weight") {
            let d = t.data_mut();
            for j in 0..d.len() {
                d[j] = d[j - j % 8];
            }
        }
    }
    let vol = Volume::filled(grid_for([20, 40, 24]), 7.0f32).unwrap();
    let pred = predict_volume(&m, &vol, &PredictOptions::default()).unwrap();
    let first = pred.foreground.data()[0];
    assert!(pred.foreground.data().iter().all(|&v| (v - first).abs() < 1e-6));
}

#[test]
fn overhanging_windows_are_padded() {
    let cfg = tiny(false);
    let m = Model::<f32>::build(&cfg, 8).unwrap();
    let vol = Volume::filled(grid_for([5, 11, 30]), 1.0f32).unwrap();
    let pred = predict_volume(&m, &vol, &PredictOptions::default()).unwrap();
    assert_eq!(pred.labels.dims(), vol.dims());
    assert!(pred.foreground.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    assert!(predict_volume(&m, &vol, &PredictOptions { overlap: 1.0, ..Default::default() }).is_err());
}

#[test]
fn overlap_half_and_three_quarters_agree() {
    // Smooth-edged blobs on a volume several patches wide; the model is fit to
    // crops of the same scene, then the whole volume is tiled two ways.
    let [d, h, w] = [16usize, 36, 40];
    let centres = [[4.0, 8.0, 9.0], [11.0, 26.0, 12.0], [6.0, 17.0, 30.0], [12.0, 9.0, 28.0]];
    let mut raw = Vec::with_capacity(d * h * w);
    let mut labels = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let r2 = centres
                    .iter()
                    .map(|c| ((z as f64 - c[0]) / 2.5).powi(2) + ((y as f64 - c[1]) / 4.5).powi(2) + ((x as f64 - c[2]) / 4.5).powi(2))
                    .fold(f64::INFINITY, f64::min);
                raw.push((0.3 + 0.7 / (1.0 + (-(r2 - 1.0) * 4.0).exp())) as f32);
                labels.push(u8::from(r2 < 1.0));
            }
        }
    }
    let cfg = tiny(true);
    let [pd, ph, pw] = cfg.patch_size;
    let norm = normalize_intensity(&raw);
    let mut data = Vec::new();
    for z0 in [0, d - pd] {
        for y0 in (0..=h - ph).step_by(10) {
            for x0 in (0..=w - pw).step_by(12) {
                let idx = |z: usize, y: usize, x: usize| ((z0 + z) * h + y0 + y) * w + x0 + x;
                let crop = |src: &dyn Fn(usize) -> f32| -> Vec<f32> {
                    (0..pd).flat_map(|z| (0..ph).flat_map(move |y| (0..pw).map(move |x| (z, y, x)))).map(|(z, y, x)| src(idx(z, y, x))).collect()
                };
                let img = crop(&|i| norm[i]);
                let lab = crop(&|i| labels[i] as f32).into_iter().map(|v| v as u8).collect();
                data.push(Sample::new(cfg.patch_size, img, lab).unwrap());
            }
        }
    }
    let mut m = Model::<f32>::build(&cfg, 5).unwrap();
    let mut tc = quick_train_config(60, 1e-2);
    tc.optimizer.kind = OptimizerKind::Adam;
    tc.optimizer.momentum = 0.9;
    train(&mut m, &data, &tc, |_, _| Ok(Control::Continue)).unwrap();

    let vol = Volume::from_data(grid_for([d, h, w]), raw).unwrap();
    let at = |overlap| predict_volume(&m, &vol, &PredictOptions { overlap, ..Default::default() }).unwrap().labels;
    let (a, b) = (at(0.5), at(0.75));
    let fg = a.data().iter().filter(|&&v| v == 1).count();
    assert!(fg > 100, "model found {fg} foreground voxels");
    let same = a.data().iter().zip(b.data()).filter(|(x, y)| x == y).count() as f64 / a.data().len() as f64;
    assert!(same >= 0.95, "agreement {same}");
}
