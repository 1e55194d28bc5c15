//! Acceptance criteria. Runs without the test harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use pmw_core::data::synth::MANIFEST_NAME;
use pmw_core::data::{
    stratified_split, write_synth, SampleManifest, SampleRecord, Source, Split, SynthConfig, TensorDataset, TypeTag,
};
use pmw_core::eval::{confusion, metrics, round_dp, ConfusionMatrix};
use pmw_core::models::builders::{inception_module, small_inception_widths};
use pmw_core::models::{build_resnet50, build_vgg16, params_checksum, Arch, HeadConfig, ModelGraph, SmallConfig};
use pmw_core::tensor::ops::{self, Mode, BN_EPS};
use pmw_core::tensor::{fd_check, ConvSpec, PoolSpec};
use pmw_core::training::{early_stopping, pretrain_transfer, Task, TrainConfig, TrainState, TransferConfig};
use pmw_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_t(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn distinct_t(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * 1e-2 + 1e-3).collect();
    v.shuffle(r);
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn small(width: usize, hidden: usize) -> SmallConfig {
    SmallConfig {
        width,
        head: HeadConfig {
            hidden_width: hidden,
            ..HeadConfig::default()
        },
    }
}

// 1 ----------------------------------------------------------------------

fn metric_oracle() -> Outcome {
    let (tp, fn_, fp, tn) = (1178u64, 53, 76, 1151);
    ensure(tp + fn_ == 1231 && fp + tn == 1227, || "reconstructed class totals".into())?;
    ensure(((tp + tn) as f64 / 2458.0 * 1e4).round() == 9475.0, || "hand accuracy".into())?;
    let m = metrics(&ConfusionMatrix::new(tp, fn_, fp, tn));
    let got = [
        round_dp(m.accuracy.value, 4),
        round_dp(m.classes[0].precision.value, 2),
        round_dp(m.classes[0].recall.value, 2),
        round_dp(m.classes[0].f1.value, 2),
        round_dp(m.classes[1].precision.value, 2),
        round_dp(m.classes[1].recall.value, 2),
        round_dp(m.classes[1].f1.value, 2),
    ];
    let want = [0.9475, 0.94, 0.96, 0.95, 0.96, 0.94, 0.95];
    ensure(got == want, || format!("got {got:?}, want {want:?}"))?;
    Ok(format!("accuracy {:.4}, PMW 0.94/0.96/0.95, not-PMW 0.96/0.94/0.95", got[0]))
}

// 2 ----------------------------------------------------------------------

const SHAPES: u64 = 20;

fn gradient_suite() -> Outcome {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(err),
        None => worst.push((name, err)),
    };
    let eps = 1e-6;
    for i in 0..SHAPES {
        let r = &mut rng(10_000 + i);

        let (kh, kw) = (r.gen_range(1..4), r.gen_range(1..4));
        let spec = ConvSpec {
            out_channels: r.gen_range(1..4),
            kernel: (kh, kw),
            stride: (r.gen_range(1..3), r.gen_range(1..3)),
            padding: (r.gen_range(0..2), r.gen_range(0..2)),
        };
        let xs = [r.gen_range(1..3), r.gen_range(1..4), r.gen_range(kh..kh + 4), r.gen_range(kw..kw + 4)];
        let x = rand_t(r, &xs);
        let w = rand_t(r, &[spec.out_channels, xs[1], kh, kw]);
        let b = rand_t(r, &[spec.out_channels]);
        let (y, cols) = ops::conv2d_forward(&x, &w, Some(&b), &spec).unwrap();
        let probe = rand_t(r, y.shape());
        let g = ops::conv2d_backward(x.shape(), &cols, &w, &probe, &spec, true).unwrap();
        let f = |t: &[Tensor<f64>]| dot(&ops::conv2d(&t[0], &t[1], Some(&t[2]), &spec).unwrap(), &probe);
        record("conv2d", fd_check(f, &[x, w, b], &[g.input.unwrap(), g.weights, g.bias], eps));

        let (n, d, k) = (r.gen_range(1..5), r.gen_range(1..8), r.gen_range(1..6));
        let (x, w, b, probe) = (rand_t(r, &[n, d]), rand_t(r, &[d, k]), rand_t(r, &[k]), rand_t(r, &[n, k]));
        let g = ops::dense_backward(&x, &w, &probe, true).unwrap();
        let f = |t: &[Tensor<f64>]| dot(&ops::dense(&t[0], &t[1], &t[2]).unwrap(), &probe);
        record("dense", fd_check(f, &[x, w, b], &[g.input.unwrap(), g.weights, g.bias], eps));

        let win = r.gen_range(1..4);
        let pool = PoolSpec::padded(win, r.gen_range(1..3), r.gen_range(0..=win / 2));
        let xs = [r.gen_range(1..3), r.gen_range(1..3), r.gen_range(win..win + 4), r.gen_range(win..win + 4)];
        let x = distinct_t(r, &xs);
        let (y, argmax) = ops::maxpool2d_forward(&x, &pool).unwrap();
        let probe = rand_t(r, y.shape());
        let g = ops::maxpool2d_backward(x.shape(), &argmax, &probe);
        let f = |t: &[Tensor<f64>]| dot(&ops::maxpool2d(&t[0], &pool).unwrap(), &probe);
        record("maxpool2d", fd_check(f, std::slice::from_ref(&x), &[g], eps));

        let y = ops::avgpool2d(&x, &pool).unwrap();
        let probe = rand_t(r, y.shape());
        let g = ops::avgpool2d_backward(x.shape(), &pool, &probe).unwrap();
        let f = |t: &[Tensor<f64>]| dot(&ops::avgpool2d(&t[0], &pool).unwrap(), &probe);
        record("avgpool2d", fd_check(f, std::slice::from_ref(&x), &[g], eps));

        let probe = rand_t(r, &xs[..2]);
        let g = ops::global_avg_pool_backward(x.shape(), &probe);
        let f = |t: &[Tensor<f64>]| dot(&ops::global_avg_pool(&t[0]).unwrap(), &probe);
        record("global_avg_pool", fd_check(f, std::slice::from_ref(&x), &[g], eps));

        let probe = rand_t(r, &xs);
        let g = ops::relu_backward(&ops::relu(&x), &probe);
        record("relu", fd_check(|t| dot(&ops::relu(&t[0]), &probe), std::slice::from_ref(&x), &[g], eps));
        let z = rand_t(r, &xs).map(|v| v * 3.0);
        let g = ops::sigmoid_backward(&ops::sigmoid(&z), &probe);
        record("sigmoid", fd_check(|t| dot(&ops::sigmoid(&t[0]), &probe), &[z], &[g], eps));

        let c = r.gen_range(1..4);
        let bs = [r.gen_range(2..4), c, r.gen_range(1..4), r.gen_range(1..4)];
        let (x, gamma, beta, probe) = (rand_t(r, &bs), rand_t(r, &[c]), rand_t(r, &[c]), rand_t(r, &bs));
        let mean0 = rand_t(r, &[c]);
        let var0 = Tensor::from_fn(&[c], |_| r.gen_range(0.5..2.0));
        for (name, mode) in [("batchnorm/train", Mode::Train), ("batchnorm/infer", Mode::Infer)] {
            let run = |t: &[Tensor<f64>]| {
                let (mut m, mut v) = (mean0.clone(), var0.clone());
                ops::batchnorm_forward(&t[0], &t[1], &t[2], &mut m, &mut v, 0.01, BN_EPS, mode).unwrap()
            };
            let (_, cache) = run(&[x.clone(), gamma.clone(), beta.clone()]);
            let g = ops::batchnorm_backward(&cache, &gamma, &probe).unwrap();
            let err = fd_check(
                |t| dot(&run(t).0, &probe),
                &[x.clone(), gamma.clone(), beta.clone()],
                &[g.input, g.gamma, g.beta],
                eps,
            );
            record(name, err);
        }

        let n = r.gen_range(1..10);
        let labels: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(0..2))).collect();
        let p = Tensor::from_fn(&[n, 1], |_| r.gen_range(0.05..0.95));
        let g = ops::bce_backward(&p, &labels).unwrap();
        record("bce", fd_check(|t| ops::bce_loss(&t[0], &labels).unwrap(), &[p], &[g], eps));
    }
    let bad: Vec<String> = worst.iter().filter(|(_, e)| e.is_nan() || *e >= 1e-4).map(|(n, e)| format!("{n} {e:.1e}")).collect();
    ensure(bad.is_empty(), || format!("relative error ≥ 1e-4: {}", bad.join(", ")))?;
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    Ok(format!("{} ops × {SHAPES} shapes, worst relative error {max:.1e}", worst.len()))
}

// 3 ----------------------------------------------------------------------

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: &ConvSpec) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (f, kh, kw) = (ws[0], ws[2], ws[3]);
    let oh = (h + 2 * s.padding.0 - kh) / s.stride.0 + 1;
    let ow = (wd + 2 * s.padding.1 - kw) / s.stride.1 + 1;
    Tensor::from_fn(&[n, f, oh, ow], |i| {
        let (ox, oy, fi, ni) = (i % ow, i / ow % oh, i / (ow * oh) % f, i / (ow * oh * f));
        let mut acc = b.data()[fi];
        for ci in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (oy * s.stride.0 + ky) as isize - s.padding.0 as isize;
                    let ix = (ox * s.stride.1 + kx) as isize - s.padding.1 as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                        acc += x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize]
                            * w.data()[((fi * c + ci) * kh + ky) * kw + kx];
                    }
                }
            }
        }
        acc
    })
}

fn naive_pool(x: &Tensor<f64>, s: &PoolSpec, max: bool) -> Tensor<f64> {
    let xs = x.shape();
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (k, st, p) = (s.window.0, s.stride.0, s.padding.0);
    let (oh, ow) = ((h + 2 * p - k) / st + 1, (w + 2 * p - k) / st + 1);
    Tensor::from_fn(&[n, c, oh, ow], |i| {
        let (ox, oy, plane) = (i % ow, i / ow % oh, i / (ow * oh));
        let mut vals = Vec::new();
        for ky in 0..k {
            for kx in 0..k {
                let (iy, ix) = ((oy * st + ky) as isize - p as isize, (ox * st + kx) as isize - p as isize);
                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                    vals.push(x.data()[(plane * h + iy as usize) * w + ix as usize]);
                }
            }
        }
        if max {
            vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    })
}

fn oracle_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let cases = 50;
    for i in 0..cases {
        let r = &mut rng(20_000 + i);
        let (kh, kw) = (r.gen_range(1..5), r.gen_range(1..5));
        let spec = ConvSpec {
            out_channels: r.gen_range(1..5),
            kernel: (kh, kw),
            stride: (r.gen_range(1..3), r.gen_range(1..3)),
            padding: (r.gen_range(0..3), r.gen_range(0..3)),
        };
        let xs = [r.gen_range(1..3), r.gen_range(1..4), r.gen_range(kh..kh + 6), r.gen_range(kw..kw + 6)];
        let x = rand_t(r, &xs);
        let w = rand_t(r, &[spec.out_channels, xs[1], kh, kw]);
        let b = rand_t(r, &[spec.out_channels]);
        worst = worst.max(max_abs_diff(&ops::conv2d(&x, &w, Some(&b), &spec).unwrap(), &naive_conv(&x, &w, &b, &spec)));

        let (n, d, k) = (r.gen_range(1..6), r.gen_range(1..10), r.gen_range(1..6));
        let (x, w, b) = (rand_t(r, &[n, d]), rand_t(r, &[d, k]), rand_t(r, &[k]));
        let naive = Tensor::from_fn(&[n, k], |i| {
            b.data()[i % k] + (0..d).map(|j| x.data()[i / k * d + j] * w.data()[j * k + i % k]).sum::<f64>()
        });
        worst = worst.max(max_abs_diff(&ops::dense(&x, &w, &b).unwrap(), &naive));

        let win = r.gen_range(1..4);
        let pool = PoolSpec::padded(win, r.gen_range(1..3), r.gen_range(0..=win / 2));
        let xs = [r.gen_range(1..3), r.gen_range(1..3), r.gen_range(win..win + 5), r.gen_range(win..win + 5)];
        let x = rand_t(r, &xs);
        worst = worst.max(max_abs_diff(&ops::maxpool2d(&x, &pool).unwrap(), &naive_pool(&x, &pool, true)));
        worst = worst.max(max_abs_diff(&ops::avgpool2d(&x, &pool).unwrap(), &naive_pool(&x, &pool, false)));
    }
    ensure(worst < 1e-9, || format!("kernel max abs difference {worst:e}"))?;

    let instances = 500;
    for i in 0..instances {
        let r = &mut rng(30_000 + i);
        let n = r.gen_range(0..=100);
        let probs: Vec<f64> = (0..n).map(|_| if r.gen_bool(0.1) { 0.5 } else { r.gen_range(0.0..1.0) }).collect();
        let labels: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(0..2))).collect();
        let t = if r.gen_bool(0.5) { 0.5 } else { r.gen_range(0.0..1.0) };
        let mut brute = [0u64; 4];
        for (p, y) in probs.iter().zip(&labels) {
            brute[match (*y == 1.0, *p >= t) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            }] += 1;
        }
        let cm = confusion(&probs, &labels, t).unwrap();
        ensure([cm.tp, cm.fn_, cm.fp, cm.tn] == brute, || format!("instance {i}: {cm:?} vs {brute:?}"))?;
        let m = metrics(&cm);
        let [tp, fn_, fp, tn] = brute.map(|v| v as f64);
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        let f1 = |p: f64, r: f64| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let (pp, pr, np, nr) = (ratio(tp, tp + fp), ratio(tp, tp + fn_), ratio(tn, tn + fn_), ratio(tn, tn + fp));
        let expect = [ratio(tp + tn, n as f64), pp, pr, f1(pp, pr), np, nr, f1(np, nr)];
        let got = [
            m.accuracy.value,
            m.classes[0].precision.value,
            m.classes[0].recall.value,
            m.classes[0].f1.value,
            m.classes[1].precision.value,
            m.classes[1].recall.value,
            m.classes[1].f1.value,
        ];
        let close = got.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-12);
        ensure(close, || format!("instance {i}: metrics {got:?} vs {expect:?}"))?;
    }
    Ok(format!("{cases} kernel cases (max diff {worst:.1e}); {instances} confusion/metric instances match enumeration"))
}

// 4 ----------------------------------------------------------------------

fn conv_bn_relu(g: &ModelGraph<f64>, name: &str, x: &Tensor<f64>, spec: ConvSpec) -> Tensor<f64> {
    let p = |s: &str| g.param(&format!("backbone.{name}{s}")).unwrap().value.clone();
    let y = ops::conv2d(x, &p(".weight"), None, &spec).unwrap();
    let (mut m, mut v) = (p(".bn.running_mean"), p(".bn.running_var"));
    let (y, _) = ops::batchnorm_forward(&y, &p(".bn.gamma"), &p(".bn.beta"), &mut m, &mut v, 0.0, BN_EPS, Mode::Infer).unwrap();
    ops::relu(&y)
}

fn structure() -> Outcome {
    let vgg: ModelGraph<f32> = build_vgg16([3, 32, 32]).map_err(|e| e.to_string())?;
    let (conv, dense) = (vgg.count_ops("conv2d"), vgg.count_ops("dense"));
    ensure((conv, dense) == (13, 3), || format!("vgg16 has {conv} conv and {dense} dense layers"))?;
    let resnet: ModelGraph<f32> = build_resnet50([3, 64, 64]).map_err(|e| e.to_string())?;
    let weighted = resnet.weighted_layers();
    ensure(weighted == 50, || format!("resnet50 has {weighted} weighted layers"))?;

    let w = small_inception_widths(12);
    let mut g = ModelGraph::<f64>::new([5, 9, 9]);
    inception_module(&mut g, "mix", 0, w).map_err(|e| e.to_string())?;
    g.initialize(4);
    let r = &mut rng(4);
    for p in g.params_mut() {
        if p.name.ends_with("running_mean") || p.name.ends_with("beta") {
            p.value = Tensor::from_fn(p.value.shape(), |_| r.gen_range(-0.5..0.5));
        }
        if p.name.ends_with("running_var") || p.name.ends_with("gamma") {
            p.value = Tensor::from_fn(p.value.shape(), |_| r.gen_range(0.5..1.5));
        }
    }
    let x = rand_t(r, &[2, 5, 9, 9]);
    let b1 = conv_bn_relu(&g, "mix.b1x1", &x, ConvSpec::same(w.b1x1, 1, 1));
    let b3 = conv_bn_relu(&g, "mix.b3x3_reduce", &x, ConvSpec::same(w.b3x3_reduce, 1, 1));
    let b3 = conv_bn_relu(&g, "mix.b3x3", &b3, ConvSpec::same(w.b3x3, 3, 3));
    let b5 = conv_bn_relu(&g, "mix.b5x5_reduce", &x, ConvSpec::same(w.b5x5_reduce, 1, 1));
    let b5 = conv_bn_relu(&g, "mix.b5x5", &b5, ConvSpec::same(w.b5x5, 5, 5));
    let pooled = ops::avgpool2d(&x, &PoolSpec::padded(3, 1, 1)).unwrap();
    let bp = conv_bn_relu(&g, "mix.pool_proj", &pooled, ConvSpec::same(w.pool_proj, 1, 1));
    let mut expected = Vec::new();
    for s in 0..2 {
        for t in [&b1, &b3, &b5, &bp] {
            let per = t.len() / 2;
            expected.extend_from_slice(&t.data()[s * per..(s + 1) * per]);
        }
    }
    let got = g.forward(&x).map_err(|e| e.to_string())?;
    let worst = got.data().iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(got.len() == expected.len() && worst < 1e-12, || format!("inception concat differs by {worst:e}"))?;
    Ok(format!("vgg16 13 conv + 3 dense; resnet50 {weighted} weighted layers; inception concat diff {worst:.1e}"))
}

// 5 ----------------------------------------------------------------------

fn synth_dataset(n_per_class: usize, seed: u64, size: usize) -> TensorDataset {
    let dir = tempfile::tempdir().unwrap();
    let m = write_synth(dir.path(), &SynthConfig { n_per_class, size, seed }).unwrap();
    TensorDataset::from_manifest(&m, dir.path(), None, (size, size)).unwrap()
}

fn freeze_invariance() -> Outcome {
    let (train, val) = (synth_dataset(16, 50, 16), synth_dataset(8, 51, 16));
    let mut checked = 0;
    for arch in [Arch::VggS, Arch::ResnetS, Arch::InceptionS] {
        let model = arch.build([3, 16, 16], &small(4, 16), 5).map_err(|e| e.to_string())?;
        let is_backbone = |n: &str| n.starts_with("backbone.");
        let (before, head_before) = (params_checksum(&model, is_backbone), params_checksum(&model, |n| !is_backbone(n)));
        let cfg = TrainConfig {
            max_epochs: 3,
            batch_size: 8,
            freeze_selector: Some("backbone.".into()),
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(model, cfg).map_err(|e| e.to_string())?;
        state.run(&train, &val, |_| Ok(())).map_err(|e| e.to_string())?;
        let (model, _) = state.finish();
        ensure(params_checksum(&model, is_backbone) == before, || format!("{arch}: backbone changed"))?;
        ensure(params_checksum(&model, |n| !is_backbone(n)) != head_before, || format!("{arch}: head did not train"))?;
        checked += 1;
    }
    Ok(format!("{checked} architectures: backbone checksum unchanged after training, head updated"))
}

// 6 ----------------------------------------------------------------------

fn early_stopping_table() -> Outcome {
    let decreasing: Vec<f64> = (0..60).map(|i| 100.0 - i as f64).collect();
    let flat = vec![1.0; 60];
    let mut late = vec![3.0, 2.0, 2.0, 1.0];
    late.extend([1.0; 56]);
    let mut saw = Vec::new();
    for e in 0..60 {
        saw.push(if e % 5 == 4 { 10.0 - e as f64 / 5.0 } else { 20.0 });
    }
    // (losses, patience, cap, stopped_epoch, best_epoch, early)
    let table: Vec<(&[f64], usize, usize, usize, usize, bool)> = vec![
        (&[5.0, 4.0, 4.0, 4.0, 4.0, 4.0], 3, 50, 6, 2, true),
        (&decreasing, 5, 50, 50, 50, false),
        (&flat, 5, 50, 7, 1, true),
        (&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], 5, 50, 7, 1, true),
        (&late, 5, 50, 10, 4, true),
        (&saw, 5, 50, 50, 50, false),
        (&[2.0, 1.0, 1.5], 1, 50, 3, 2, false),
        (&decreasing, 5, 1, 1, 1, false),
    ];
    for (i, &(losses, patience, cap, stop, best, early)) in table.iter().enumerate() {
        let out = early_stopping(losses, patience, cap);
        ensure(
            (out.stopped_epoch, out.best_epoch, out.early) == (stop, best, early),
            || format!("row {i}: got ({}, {}, {}), want ({stop}, {best}, {early})", out.stopped_epoch, out.best_epoch, out.early),
        )?;
    }
    Ok(format!("{} sequences reproduce stop and best epochs", table.len()))
}

// 7 ----------------------------------------------------------------------

fn pmw(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pmw"))
        .args(args)
        .env_remove("PMW_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("pmw {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report_accuracy(run: &Path) -> Result<f64, String> {
    let text = fs::read_to_string(run.join("report.json")).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    v["accuracy"]["value"].as_f64().ok_or_else(|| "report.json lacks accuracy".into())
}

fn desk_scale_pipeline() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let budget = Duration::from_secs(600);
    let mut lines = Vec::new();
    let mut passed = 0;
    for seed in 1..=5u64 {
        let s = seed.to_string();
        let data = root.path().join(format!("data{seed}"));
        let run = root.path().join(format!("run{seed}"));
        let start = Instant::now();
        pmw(&["synth", "-o", path(&data), "--n-per-class", "600", "--seed", &s, "--split"])?;
        pmw(&["train", "-m", path(&data.join(MANIFEST_NAME)), "-o", path(&run), "--arch", "resnet_s", "--seed", &s])?;
        let elapsed = start.elapsed();
        let acc = report_accuracy(&run)?;
        let history = fs::read_to_string(run.join("history.jsonl")).map_err(|e| e.to_string())?;
        let epochs = history.lines().count();
        let ok = acc >= 0.90 && elapsed <= budget && epochs <= 50;
        passed += usize::from(ok);
        lines.push(format!("seed {seed}: {acc:.4} in {epochs} epochs, {:.0}s", elapsed.as_secs_f64()));
    }
    let summary = format!("{passed}/5 seeds ≥ 0.90 within budget [{}]", lines.join("; "));
    ensure(passed >= 4, || summary.clone())?;
    Ok(summary)
}

// 8 ----------------------------------------------------------------------

fn split_synth(n_per_class: usize, seed: u64, size: usize, dir: &Path) -> Result<[TensorDataset; 3], String> {
    let m = write_synth(dir, &SynthConfig { n_per_class, size, seed }).map_err(|e| e.to_string())?;
    let (m, _) = stratified_split(&m, [0.6, 0.2, 0.2], seed).map_err(|e| e.to_string())?;
    let load = |s| TensorDataset::from_manifest(&m, dir, Some(s), (size, size)).map_err(|e| e.to_string());
    Ok([load(Split::Train)?, load(Split::Val)?, load(Split::Test)?])
}

/// The first `k` samples of each class.
fn per_class_prefix(ds: &TensorDataset, k: usize) -> TensorDataset {
    let mut seen = [0usize; 2];
    let idx: Vec<usize> = (0..ds.len())
        .filter(|&i| {
            let c = usize::from(ds.labels[i] >= 0.5);
            seen[c] += 1;
            seen[c] <= k
        })
        .collect();
    ds.subset(&idx)
}

fn transfer_direction() -> Outcome {
    let size = 32;
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let (src_dir, tgt_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let [s_train, s_val, s_test] = split_synth(300, 1000 + seed, size, src_dir.path())?;
        let [t_train, t_val, t_test] = split_synth(100, 2000 + seed, size, tgt_dir.path())?;
        let t_train = per_class_prefix(&t_train, 12);
        let cfg = TransferConfig {
            arch: Arch::ResnetS,
            model: SmallConfig::default(),
            train: TrainConfig {
                max_epochs: 20,
                seed,
                ..TrainConfig::default()
            },
        };
        let source = Task {
            train: &s_train,
            val: &s_val,
            test: Some(&s_test),
        };
        let target = Task {
            train: &t_train,
            val: &t_val,
            test: Some(&t_test),
        };
        let (report, _) = pretrain_transfer(source, target, &cfg).map_err(|e| e.to_string())?;
        let (pre, rnd) = (report.pretrained.test_accuracy.unwrap(), report.random.test_accuracy.unwrap());
        wins += usize::from(pre >= rnd);
        lines.push(format!(
            "seed {seed}: pretrained {pre:.3} ({} ep) vs random {rnd:.3} ({} ep)",
            report.pretrained.history.stopped_epoch, report.random.history.stopped_epoch
        ));
    }
    let summary = format!("pretrained ≥ random in {wins}/5 seeds [{}]", lines.join("; "));
    ensure(wins >= 4, || summary.clone())?;
    Ok(summary)
}

// 9 ----------------------------------------------------------------------

fn split_stratification() -> Outcome {
    let counts = [
        (TypeTag::Pmw, Source::Instagram, 426),
        (TypeTag::Pmw, Source::Inaturalist, 5731),
        (TypeTag::Velella, Source::Inaturalist, 500),
        (TypeTag::Jellyfish, Source::Inaturalist, 500),
        (TypeTag::Person, Source::Bing, 453),
        (TypeTag::Ship, Source::Bing, 471),
        (TypeTag::Illustration, Source::Bing, 585),
        (TypeTag::Tattoo, Source::Bing, 697),
        (TypeTag::Random, Source::Bing, 602),
        (TypeTag::Person, Source::Instagram, 466),
        (TypeTag::Ship, Source::Instagram, 466),
        (TypeTag::Illustration, Source::Instagram, 466),
        (TypeTag::Tattoo, Source::Instagram, 466),
        (TypeTag::Random, Source::Instagram, 465),
    ];
    let mut records = Vec::new();
    for (t, s, n) in counts {
        for _ in 0..n {
            let h = records.len() as u64;
            records.push(SampleRecord::new(format!("{s}/{t}/{h}.jpg"), t, s, h));
        }
    }
    let m = SampleManifest::new(records);
    let pmw = m.records.iter().filter(|r| r.type_tag == TypeTag::Pmw).count();
    ensure((pmw, m.len() - pmw) == (6157, 6137), || format!("fixture has {pmw} PMW of {}", m.len()))?;
    let (out, summary) = stratified_split(&m, [0.6, 0.2, 0.2], 0).map_err(|e| e.to_string())?;
    ensure(summary.totals == [7376, 2459, 2459], || format!("totals {:?}", summary.totals))?;
    ensure(out.records.iter().all(|r| r.split != Split::Unassigned), || "unassigned records".into())?;
    for (name, c) in &summary.strata {
        let n: usize = c.iter().sum();
        for (k, r) in [0.6, 0.2, 0.2].into_iter().enumerate() {
            ensure((c[k] as f64 - n as f64 * r).abs() < 1.0, || format!("{name}: {c:?}"))?;
        }
    }
    Ok(format!("7376/2459/2459 over {} strata, each within 1 of exact", summary.strata.len()))
}

// 10 ---------------------------------------------------------------------

fn reproducibility() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = root.path().join("data");
    pmw(&["synth", "-o", path(&data), "--n-per-class", "40", "--seed", "7", "--split"])?;
    let manifest = data.join(MANIFEST_NAME);
    let files = ["config.json", "history.jsonl", "weights.bin", "report.json", "report.csv", "report.txt"];
    let mut runs = Vec::new();
    for k in 0..2 {
        let run = root.path().join(format!("run{k}"));
        pmw(&[
            "train", "-m", path(&manifest), "-o", path(&run), "--arch", "inception_s", "--seed", "11",
            "--set", "train.max_epochs=4", "--set", "model.width=8",
        ])?;
        pmw(&["eval", "--run", path(&run), "--format", "json"])?;
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| fs::read(run.join(f)).map_err(|e| format!("{f}: {e}"))).collect::<Result<_, _>>()?;
        runs.push(bytes);
    }
    let differing: Vec<&str> = files.iter().zip(runs[0].iter().zip(&runs[1])).filter(|(_, (a, b))| a != b).map(|(f, _)| *f).collect();
    ensure(differing.is_empty(), || format!("differing files: {}", differing.join(", ")))?;
    Ok(format!("{} run files byte-identical across two runs", files.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric oracle", metric_oracle),
        ("gradient suite", gradient_suite),
        ("oracle equivalence", oracle_equivalence),
        ("structural checks", structure),
        ("freeze invariance", freeze_invariance),
        ("early stopping", early_stopping_table),
        ("desk-scale pipeline", desk_scale_pipeline),
        ("transfer direction", transfer_direction),
        ("split stratification", split_stratification),
        ("reproducibility", reproducibility),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
