//! Helpers shared by the integration tests and the acceptance runner:
//! gradient-check cases over every differentiable component and
//! straightforward reference implementations to compare against.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visemeflow::datasets::{synthesize_word_video, Profile, SynthVocabulary};
use visemeflow::models::{build_cae, build_cnn_classifier, ArchitectureDescriptor, LstmClassifier};
use visemeflow::nn::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward, dense_backward,
    dense_forward, grad_check, lstm_sequence, lstm_sequence_backward, lstm_sequence_states,
    lstm_sequence_states_backward, lstm_step, lstm_step_backward, maxpool_backward, maxpool_forward, mse_loss,
    softmax_cross_entropy, GradCheck, ParamSet,
};
use visemeflow::vision::{detect_windows, scan_scales, scale_rect, CascadeModel, DetectorParams, GrayFrame, Window};
use visemeflow::{Result, Tensor};

pub const EPS: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.gen_range(-scale..scale)).unwrap()
}

fn params(entries: Vec<(&str, Tensor<f64>)>) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (name, t) in entries {
        p.insert(name, t);
    }
    p
}

/// `Σ out ⊙ weights`, so the upstream gradient is `weights` itself.
fn weighted_sum(out: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// Dense layer 3→2 on a batch of four.
pub fn check_dense(seed: u64) -> Result<GradCheck> {
    let mut r = rng(seed);
    let p = params(vec![("w", uniform(&mut r, &[3, 2], 1.0)), ("b", uniform(&mut r, &[2], 1.0))]);
    let x = uniform(&mut r, &[4, 3], 1.0);
    let up = uniform(&mut r, &[4, 2], 1.0);
    grad_check(&p, &x, EPS, |p, x| {
        let (y, cache) = dense_forward(x, p.get("w")?, p.get("b")?)?;
        let (gx, gw, gb) = dense_backward(&up, &cache)?;
        Ok((weighted_sum(&y, &up), params(vec![("w", gw), ("b", gb)]), gx))
    })
}

/// `input` is `[N,C,H,W]`; `out_channels` 3×3 kernels.
pub fn check_conv2d(seed: u64, input: [usize; 4], out_channels: usize, stride: usize, pad: usize) -> Result<GradCheck> {
    let mut r = rng(seed);
    let w = uniform(&mut r, &[out_channels, input[1], 3, 3], 1.0);
    let p = params(vec![("w", w), ("b", uniform(&mut r, &[out_channels], 1.0))]);
    let x = uniform(&mut r, &input, 1.0);
    let (probe, _) = conv2d_forward(&x, p.get("w")?, p.get("b")?, stride, pad)?;
    let up = uniform(&mut r, probe.dims(), 1.0);
    grad_check(&p, &x, EPS, |p, x| {
        let (y, cache) = conv2d_forward(x, p.get("w")?, p.get("b")?, stride, pad)?;
        let (gx, gw, gb) = conv2d_backward(&up, &cache)?;
        Ok((weighted_sum(&y, &up), params(vec![("w", gw), ("b", gb)]), gx))
    })
}

pub fn check_conv_transpose2d(seed: u64, stride: usize, pad: usize) -> Result<GradCheck> {
    let mut r = rng(seed);
    let p = params(vec![("w", uniform(&mut r, &[2, 3, 3, 3], 1.0)), ("b", uniform(&mut r, &[3], 1.0))]);
    let x = uniform(&mut r, &[2, 2, 3, 4], 1.0);
    let (probe, _) = conv_transpose2d_forward(&x, p.get("w")?, p.get("b")?, stride, pad)?;
    let up = uniform(&mut r, probe.dims(), 1.0);
    grad_check(&p, &x, EPS, |p, x| {
        let (y, cache) = conv_transpose2d_forward(x, p.get("w")?, p.get("b")?, stride, pad)?;
        let (gx, gw, gb) = conv_transpose2d_backward(&up, &cache)?;
        Ok((weighted_sum(&y, &up), params(vec![("w", gw), ("b", gb)]), gx))
    })
}

/// Inputs are a shuffled ladder of values 0.01 apart, so no window has a tie
/// that a perturbation of `EPS` could flip.
pub fn check_maxpool(seed: u64) -> Result<GradCheck> {
    let mut r = rng(seed);
    let dims = [2, 3, 6, 8];
    let n: usize = dims.iter().product();
    let mut ladder: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 1.0).collect();
    ladder.shuffle(&mut r);
    let x = Tensor::new(&dims, ladder)?;
    let up = uniform(&mut r, &[2, 3, 3, 4], 1.0);
    grad_check(&ParamSet::new(), &x, EPS, |_, x| {
        let (y, cache) = maxpool_forward(x, 2, 2)?;
        Ok((weighted_sum(&y, &up), ParamSet::new(), maxpool_backward(&up, &cache)?))
    })
}

pub fn check_lstm_step(seed: u64) -> Result<GradCheck> {
    let mut r = rng(seed);
    let (n, d, hidden) = (2, 3, 4);
    let p = params(vec![
        ("w", uniform(&mut r, &[d + hidden, 4 * hidden], 0.8)),
        ("b", uniform(&mut r, &[4 * hidden], 0.5)),
        ("h", uniform(&mut r, &[n, hidden], 0.9)),
        ("c", uniform(&mut r, &[n, hidden], 0.9)),
    ]);
    let x = uniform(&mut r, &[n, d], 1.0);
    let up_h = uniform(&mut r, &[n, hidden], 1.0);
    let up_c = uniform(&mut r, &[n, hidden], 1.0);
    grad_check(&p, &x, EPS, |p, x| {
        let (h2, c2, cache) = lstm_step(x, p.get("h")?, p.get("c")?, p.get("w")?, p.get("b")?)?;
        let loss = weighted_sum(&h2, &up_h) + weighted_sum(&c2, &up_c);
        let (gx, gh, gc, gw, gb) = lstm_step_backward(&up_h, &up_c, &cache)?;
        Ok((loss, params(vec![("w", gw), ("b", gb), ("h", gh), ("c", gc)]), gx))
    })
}

pub fn check_lstm_sequence(seed: u64, steps: usize) -> Result<GradCheck> {
    let mut r = rng(seed);
    let (n, d, hidden) = (1, 3, 4);
    let p = params(vec![
        ("w", uniform(&mut r, &[d + hidden, 4 * hidden], 0.8)),
        ("b", uniform(&mut r, &[4 * hidden], 0.5)),
    ]);
    let x = uniform(&mut r, &[n, steps, d], 1.0);
    let up = uniform(&mut r, &[n, hidden], 1.0);
    grad_check(&p, &x, EPS, |p, x| {
        let (h, cache) = lstm_sequence(x, p.get("w")?, p.get("b")?)?;
        let (gx, gw, gb) = lstm_sequence_backward(&up, &cache)?;
        Ok((weighted_sum(&h, &up), params(vec![("w", gw), ("b", gb)]), gx))
    })
}

pub fn check_lstm_states(seed: u64, steps: usize) -> Result<GradCheck> {
    let mut r = rng(seed);
    let (n, d, hidden) = (2, 3, 4);
    let p = params(vec![
        ("w", uniform(&mut r, &[d + hidden, 4 * hidden], 0.8)),
        ("b", uniform(&mut r, &[4 * hidden], 0.5)),
    ]);
    let x = uniform(&mut r, &[n, steps, d], 1.0);
    let up = uniform(&mut r, &[n, steps, hidden], 1.0);
    grad_check(&p, &x, EPS, |p, x| {
        let (states, cache) = lstm_sequence_states(x, p.get("w")?, p.get("b")?)?;
        let (gx, gw, gb) = lstm_sequence_states_backward(&up, &cache)?;
        Ok((weighted_sum(&states, &up), params(vec![("w", gw), ("b", gb)]), gx))
    })
}

pub fn check_softmax_ce(seed: u64) -> Result<GradCheck> {
    let mut r = rng(seed);
    let logits = uniform(&mut r, &[2, 5], 2.0);
    let labels = [0, 3];
    grad_check(&ParamSet::new(), &logits, EPS, |_, x| {
        let (loss, grad) = softmax_cross_entropy(x, &labels)?;
        Ok((loss, ParamSet::new(), grad))
    })
}

pub fn check_mse(seed: u64) -> Result<GradCheck> {
    let mut r = rng(seed);
    let pred = uniform(&mut r, &[3, 4], 1.0);
    let target = uniform(&mut r, &[3, 4], 1.0);
    grad_check(&ParamSet::new(), &pred, EPS, |_, x| {
        let (loss, grad) = mse_loss(x, &target)?;
        Ok((loss, ParamSet::new(), grad))
    })
}

/// Moves zero-initialized biases off zero. With a zero bias, a unit whose
/// inputs are all dead sits exactly on the ReLU kink, where central
/// differences see half a slope.
fn jitter_biases(mut p: ParamSet<f64>, seed: u64) -> ParamSet<f64> {
    let mut r = rng(seed ^ 0xb1a5);
    for (name, t) in p.iter_mut() {
        if name.ends_with(".b") {
            t.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.1..0.1));
        }
    }
    p
}

/// Low-contrast frames in `[0.4, 0.6]`, close to what an untrained decoder
/// emits. The central difference cannot resolve better than about
/// `1e-16 · loss / EPS`, so a small reconstruction loss keeps the tiniest
/// gradient coordinates above that floor.
fn frames(r: &mut ChaCha8Rng, n: usize, profile: Profile) -> Tensor<f64> {
    Tensor::from_fn(&[n, 1, profile.height, profile.width], |_| r.gen_range(0.4..0.6)).unwrap()
}

/// Small frames keep the number of ReLU and pooling units, and so the chance
/// that a perturbation of `EPS` crosses a kink, low.
pub const GRAD_PROFILE: Profile = Profile::new(3, 8, 12);

pub fn check_tiny_cae(seed: u64) -> Result<GradCheck> {
    let desc = ArchitectureDescriptor::tiny(GRAD_PROFILE, 4);
    let cae = build_cae(&desc)?;
    let p = jitter_biases(cae.init_params(seed)?.cast::<f64>(), seed);
    let x = frames(&mut rng(seed), 2, desc.profile);
    grad_check(&p, &x, EPS, |p, x| cae.loss_and_grad(p, x.clone()))
}

pub fn check_tiny_cnn(seed: u64) -> Result<GradCheck> {
    let desc = ArchitectureDescriptor::tiny(GRAD_PROFILE, 4);
    let cnn = build_cnn_classifier(&desc)?;
    let p = jitter_biases(cnn.init_params(seed)?.cast::<f64>(), seed);
    let x = frames(&mut rng(seed), 2, desc.profile);
    grad_check(&p, &x, EPS, |p, x| cnn.loss_and_grad(p, x.clone(), &[1, 0]))
}

pub fn check_lstm_classifier(seed: u64, layers: usize) -> Result<GradCheck> {
    let mut classifier = LstmClassifier::new(3, 4, 3, 5);
    classifier.layers = layers;
    let p = classifier.init_params(seed)?.cast::<f64>();
    let x = uniform(&mut rng(seed), &[2, 5, 3], 1.0);
    grad_check(&p, &x, EPS, |p, x| classifier.loss_and_grad(p, x, &[2, 0]))
}

/// Every gradient case with its tolerance. Seeds are fixed so that no
/// perturbation lands on a ReLU or pooling kink.
pub fn gradient_suite() -> Vec<(&'static str, f64, Result<GradCheck>)> {
    vec![
        ("dense 3->2", 1e-6, check_dense(1)),
        ("conv2d 1x2x6x6", 1e-6, check_conv2d(2, [1, 2, 6, 6], 3, 1, 1)),
        ("conv2d 1x1x4x4", 1e-6, check_conv2d(3, [1, 1, 4, 4], 1, 1, 0)),
        ("conv2d strided", GRAD_TOLERANCE, check_conv2d(16, [2, 3, 5, 7], 4, 2, 0)),
        ("conv_transpose2d", GRAD_TOLERANCE, check_conv_transpose2d(4, 2, 1)),
        ("maxpool", GRAD_TOLERANCE, check_maxpool(6)),
        ("lstm_step", GRAD_TOLERANCE, check_lstm_step(7)),
        ("lstm_sequence T=5", GRAD_TOLERANCE, check_lstm_sequence(8, 5)),
        ("lstm_sequence_states T=5", GRAD_TOLERANCE, check_lstm_states(9, 5)),
        ("softmax cross-entropy", GRAD_TOLERANCE, check_softmax_ce(10)),
        ("mse", GRAD_TOLERANCE, check_mse(11)),
        ("tiny autoencoder", GRAD_TOLERANCE, check_tiny_cae(TINY_CAE_SEED)),
        ("tiny patch classifier", GRAD_TOLERANCE, check_tiny_cnn(TINY_CNN_SEED)),
        ("lstm classifier, 2 layers", GRAD_TOLERANCE, check_lstm_classifier(15, 2)),
    ]
}

pub const TINY_CAE_SEED: u64 = 3;
pub const TINY_CNN_SEED: u64 = 1;

/// Direct nested-loop cross-correlation with zero padding, accumulated in f64.
pub fn naive_conv2d(x: &Tensor<f32>, w: &Tensor<f32>, b: &Tensor<f32>, stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, h, wd] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let [o, _, kh, kw] = [w.dims()[0], w.dims()[1], w.dims()[2], w.dims()[3]];
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(n * o * oh * ow);
    for s in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[oc] as f64;
                    for ic in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (oy * stride + ki) as isize - pad as isize;
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((s * c + ic) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((oc * c + ic) * kh + ki) * kw + kj];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

pub fn triple_loop_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k, n) = (a.dims()[0], a.dims()[1], b.dims()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    out
}

/// Windows that pass every stage, found by summing pixel levels inside each
/// window and rectangle directly instead of through integral images.
pub fn brute_force_windows(frame: &GrayFrame, cascade: &CascadeModel, params: &DetectorParams) -> Vec<Window> {
    let levels = frame.to_levels();
    let width = frame.width();
    let region = |x: usize, y: usize, w: usize, h: usize| -> (u64, u64) {
        let mut sum = 0u64;
        let mut squares = 0u64;
        for row in y..y + h {
            for &v in &levels[row * width + x..row * width + x + w] {
                sum += v as u64;
                squares += v as u64 * v as u64;
            }
        }
        (sum, squares)
    };
    let scales = scan_scales(cascade, params, frame.width(), frame.height()).unwrap();
    let mut passed = Vec::new();
    for s in &scales {
        for y in (0..=frame.height() - s.height).step_by(params.step) {
            for x in (0..=width - s.width).step_by(params.step) {
                let area = (s.width * s.height) as u128;
                let (sum, squares) = region(x, y, s.width, s.height);
                let var = (area * squares as u128 - sum as u128 * sum as u128) as f64
                    / (area as f64 * area as f64)
                    / (255.0 * 255.0);
                let sigma = var.sqrt().max(1e-6);
                let ok = cascade.stages.iter().all(|stage| {
                    let votes: f64 = stage
                        .weak
                        .iter()
                        .map(|weak| {
                            let mut feature = 0.0;
                            for rect in &weak.rects {
                                let r = scale_rect(rect, s.scale, s.width, s.height);
                                let (rs, _) = region(x + r.x, y + r.y, r.width, r.height);
                                feature += rect[4] * (rs as f64 / (r.width * r.height) as f64 / 255.0);
                            }
                            if feature < weak.threshold * sigma {
                                weak.left
                            } else {
                                weak.right
                            }
                        })
                        .sum();
                    votes > stage.threshold
                });
                if ok {
                    passed.push(Window {
                        x,
                        y,
                        width: s.width,
                        height: s.height,
                    });
                }
            }
        }
    }
    passed
}

/// Geometry of one convolution instance.
#[derive(Debug, Clone, Copy)]
pub struct ConvCase {
    pub input: [usize; 4],
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: usize,
    pub pad: usize,
}

/// A random valid geometry: output size is drawn first and the input size
/// derived from it, so every case is integral.
pub fn random_conv_case(r: &mut ChaCha8Rng) -> ConvCase {
    let stride = r.gen_range(1..=3);
    let pad = r.gen_range(0..=2);
    let kernel = [r.gen_range(1..=5), r.gen_range(1..=5)];
    let side = |r: &mut ChaCha8Rng, k: usize| loop {
        let out = r.gen_range(1..=7);
        let len = (out - 1) * stride + k;
        if len > 2 * pad {
            break len - 2 * pad;
        }
    };
    let (h, w) = (side(r, kernel[0]), side(r, kernel[1]));
    ConvCase {
        input: [r.gen_range(1..=3), r.gen_range(1..=4), h, w],
        out_channels: r.gen_range(1..=5),
        kernel,
        stride,
        pad,
    }
}

/// Largest `|fast - oracle|` over the largest `|oracle|`, in f32.
pub fn conv_oracle_error(case: &ConvCase, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let [kh, kw] = case.kernel;
    let x = uniform(&mut r, &case.input, 1.0).cast::<f32>();
    let w = uniform(&mut r, &[case.out_channels, case.input[1], kh, kw], 1.0).cast::<f32>();
    let b = uniform(&mut r, &[case.out_channels], 1.0).cast::<f32>();
    let (y, _) = conv2d_forward(&x, &w, &b, case.stride, case.pad)?;
    let oracle = naive_conv2d(&x, &w, &b, case.stride, case.pad);
    assert_eq!(y.len(), oracle.len(), "{case:?}");
    Ok(relative_max_error(y.data().iter().map(|&v| v as f64), &oracle))
}

/// Worst relative error over `count` random geometries.
pub fn conv_oracle_suite(seed: u64, count: usize) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..count {
        let case = random_conv_case(&mut r);
        worst = worst.max(conv_oracle_error(&case, seed.wrapping_add(i as u64))?);
    }
    Ok(worst)
}

pub fn relative_max_error(fast: impl Iterator<Item = f64>, oracle: &[f64]) -> f64 {
    let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    fast.zip(oracle).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

/// Worst relative error of `Tensor::matmul` against the triple loop over
/// `count` random shapes up to 40×40.
pub fn matmul_oracle_suite(seed: u64, count: usize) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let (m, k, n) = (r.gen_range(1..=40), r.gen_range(1..=40), r.gen_range(1..=40));
        let a = uniform(&mut r, &[m, k], 1.0);
        let b = uniform(&mut r, &[k, n], 1.0);
        let fast = a.matmul(&b)?;
        worst = worst.max(relative_max_error(fast.data().iter().copied(), &triple_loop_matmul(&a, &b)));
    }
    Ok(worst)
}

/// Generator scenes across words, speakers and time, plus noise frames.
pub fn cascade_frames(seed: u64) -> Result<Vec<GrayFrame>> {
    let profile = Profile::desk();
    let vocab = SynthVocabulary::new(10, seed)?;
    let mut frames = Vec::new();
    for speaker in 0..6u32 {
        let video = synthesize_word_video(speaker as usize % 10, speaker, 0, &profile, &vocab, seed)?;
        frames.extend(video.scene.iter().step_by(4).cloned());
    }
    let (w, h) = profile.scene_size();
    let mut r = rng(seed);
    for _ in 0..3 {
        frames.push(GrayFrame::new(w, h, (0..w * h).map(|_| r.gen_range(0.0..1.0)).collect())?);
    }
    frames.push(GrayFrame::filled(w, h, 0.5)?);
    Ok(frames)
}

/// Number of frames whose pre-merge pass set differs from the brute-force
/// oracle, and the total number of passing windows compared.
pub fn cascade_oracle_mismatches(frames: &[GrayFrame], params: &DetectorParams) -> Result<(usize, usize)> {
    let cascade = CascadeModel::bundled();
    let mut mismatched = 0;
    let mut passing = 0;
    for frame in frames {
        let fast = detect_windows(frame, &cascade, params)?;
        let oracle = brute_force_windows(frame, &cascade, params);
        passing += oracle.len();
        if fast != oracle {
            mismatched += 1;
        }
    }
    Ok((mismatched, passing))
}
