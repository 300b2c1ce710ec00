//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p visemeflow --test acceptance` runs everything (about twenty
//! minutes on one core); pass criterion numbers to run a subset, e.g.
//! `cargo test -p visemeflow --test acceptance -- 1 2 7`.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use visemeflow::datasets::{
    build_patch_dataset, largest_remainder, split_held_out_speaker, split_per_class_counts,
    split_per_speaker_fraction, split_speaker_dependent, synthesize_corpus, synthesize_word_video, Labeled, Profile,
    SplitIndices, SynthCorpusSpec, SynthVocabulary, SyntheticVideo, VideoSample,
};
use visemeflow::eval::{
    emit_confusion_csv, emptiness_score, evaluate_features, first_layer_feature_maps, msi_average, write_report,
    EvalReport, RunMetadata,
};
use visemeflow::models::{
    build_cae, collect_frames, train_cae, train_cae_lstm, train_cnn_lstm, ArchitectureDescriptor, FeatureExtractor,
    LstmModel, ModelArchitecture, TwoPhaseConfig, TwoPhaseModels,
};
use visemeflow::optim::{ModelCheckpoint, OptimConfig, TrainingMetadata};
use visemeflow::vision::{
    extract_mouth, pad_frames, preprocess_video, tensor_to_frames, CascadeModel, DetectorParams, GrayFrame,
    PreprocessOptions, Roi, RoiSource,
};
use visemeflow::Result;

use common::{
    cascade_frames, cascade_oracle_mismatches, conv_oracle_suite, gradient_suite, matmul_oracle_suite, rng,
};

type Check = Result<(bool, String)>;

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

const MINUTE: Duration = Duration::from_secs(60);

fn main() {
    let selected: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion { id: 1, name: "gradient integrity", budget: MINUTE, run: gradients },
        Criterion { id: 2, name: "oracle equivalence", budget: MINUTE, run: oracles },
        Criterion { id: 3, name: "autoencoder overfit", budget: 5 * MINUTE, run: cae_overfit },
        Criterion { id: 4, name: "speaker-dependent protocol", budget: 20 * MINUTE, run: msd },
        Criterion { id: 5, name: "held-out-speaker protocol", budget: 120 * MINUTE, run: msi },
        Criterion { id: 6, name: "method ordering", budget: 30 * MINUTE, run: method_ordering },
        Criterion { id: 7, name: "protocol arithmetic", budget: Duration::from_secs(10), run: split_arithmetic },
        Criterion { id: 8, name: "preprocessing invariants", budget: MINUTE, run: preprocessing },
        Criterion { id: 9, name: "determinism", budget: 20 * MINUTE, run: determinism },
    ];
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let mut failed = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let outcome = pool.install(c.run);
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok((_, detail)) if elapsed > c.budget => (false, format!("{detail}; over the {}s budget", c.budget.as_secs())),
            Ok(result) => result,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "{} criterion {} ({}): {} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn gradients() -> Check {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (name, tolerance, check) in gradient_suite() {
        let check = check?;
        worst = worst.max(check.max_relative_error);
        if check.max_relative_error >= tolerance {
            failures.push(format!("{name} {:.2e} at {}", check.max_relative_error, check.worst));
        }
    }
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            format!("worst relative error {worst:.2e}")
        } else {
            failures.join(", ")
        },
    ))
}

fn oracles() -> Check {
    let conv = conv_oracle_suite(2024, 50)?;
    let matmul = matmul_oracle_suite(2025, 50)?;
    let frames = cascade_frames(2026)?;
    let mut mismatched = 0;
    let mut passing = 0;
    for params in [
        DetectorParams::default(),
        DetectorParams { step: 1, scale_factor: 1.25, ..DetectorParams::default() },
        DetectorParams { step: 3, min_size: Some([30, 20]), ..DetectorParams::default() },
    ] {
        let (m, p) = cascade_oracle_mismatches(&frames, &params)?;
        mismatched += m;
        passing += p;
    }
    Ok((
        conv <= 1e-6 && matmul <= 1e-12 && mismatched == 0 && passing > 0,
        format!("conv {conv:.2e}, matmul {matmul:.2e}, cascade {mismatched} mismatched windows ({passing} passing)"),
    ))
}

fn cae_overfit() -> Check {
    let profile = Profile::desk();
    let spec = SynthCorpusSpec { profile, words: 4, speakers: 2, occurrences: 1, seed: 3 };
    let (_, samples) = synthesize_corpus(&spec)?;
    let frames = collect_frames(&samples, Some(32), 1)?;
    let desc = ArchitectureDescriptor::tiny(profile, 4);
    let cae = build_cae(&desc)?;
    let config = OptimConfig {
        batch_size: 32,
        max_epochs: 500,
        patience: 500,
        max_steps: Some(500),
        ..OptimConfig::cae()
    };
    let first = train_cae(&cae, &frames, &frames, &config, 5)?;
    let again = train_cae(&cae, &frames, &frames, &config, 5)?;
    let mse = cae.mse(&first.params, &frames)?;
    let identical = first.to_bytes()? == again.to_bytes()?;
    Ok((
        frames.dims()[0] == 32 && first.metadata.steps <= 500 && mse < 1e-2 && identical,
        format!("MSE {mse:.5} after {} steps, rerun identical: {identical}", first.metadata.steps),
    ))
}

// Desk-scale two-phase budget shared by criteria 4, 5 and 9.
fn desk_config(classes: usize) -> TwoPhaseConfig {
    let mut config = TwoPhaseConfig::new(ArchitectureDescriptor::desk(Profile::desk(), classes));
    config.max_train_frames = Some(4000);
    config.max_val_frames = Some(500);
    config.extractor.max_epochs = 10;
    config.lstm.max_epochs = 60;
    config
}

const MSD_SEED: u64 = 7;

fn pick(samples: &[VideoSample], idx: &[usize]) -> Vec<VideoSample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

fn report(models: &TwoPhaseModels, test: &[VideoSample], vocabulary: &[String], seed: u64) -> Result<EvalReport> {
    let classifier = LstmModel::from_checkpoint(&models.classifier)?;
    let test = FeatureExtractor::from_checkpoint(&models.extractor)?.extract_samples(test)?;
    evaluate_features(
        &classifier,
        [&models.train_features, &models.val_features, &test],
        vocabulary,
        RunMetadata { seed, config_hash: String::new() },
    )
}

/// Artifacts of one speaker-dependent run, as the bytes they are written with.
struct MsdRun {
    report: EvalReport,
    files: Vec<(&'static str, Vec<u8>)>,
}

fn msd_run() -> Result<MsdRun> {
    let (vocab, samples) = synthesize_corpus(&SynthCorpusSpec::standard(Profile::desk(), MSD_SEED))?;
    let split = split_speaker_dependent(&samples, vocab.words(), [8, 1, 1], MSD_SEED)?;
    let test = pick(&samples, &split.test);
    let config = desk_config(vocab.len());
    let models = train_cae_lstm(&pick(&samples, &split.train), &pick(&samples, &split.val), &config, MSD_SEED)?;
    let report = report(&models, &test, vocab.words(), MSD_SEED)?;

    let dir = tempfile::tempdir().map_err(|e| visemeflow::Error::io("tempdir", e))?;
    write_report(&report, dir.path().join("report.json"))?;
    emit_confusion_csv(&report.test.confusion, dir.path().join("confusion.csv"))?;
    let read = |name: &str| std::fs::read(dir.path().join(name)).map_err(|e| visemeflow::Error::io(name, e));
    let files = vec![
        ("cae checkpoint", models.extractor.to_bytes()?),
        ("lstm checkpoint", models.classifier.to_bytes()?),
        ("report", read("report.json")?),
        ("confusion csv", read("confusion.csv")?),
    ];
    Ok(MsdRun { report, files })
}

fn msd() -> Check {
    let run = msd_run()?;
    let accuracy = run.report.test.accuracy;
    Ok((accuracy >= 0.90, format!("{} (chance 10%)", run.report.summary())))
}

fn speakers_of(samples: &[VideoSample], idx: &[usize]) -> BTreeSet<u32> {
    idx.iter().map(|&i| samples[i].speaker).collect()
}

fn msi() -> Check {
    let (vocab, samples) = synthesize_corpus(&SynthCorpusSpec::standard(Profile::desk(), MSD_SEED))?;
    let all: Vec<u32> = speakers_of(&samples, &(0..samples.len()).collect::<Vec<_>>()).into_iter().collect();
    let config = desk_config(vocab.len());
    let mut reports = Vec::new();
    let mut disjoint = true;
    let mut accuracies = Vec::new();
    for (fold, &test_speaker) in all.iter().enumerate() {
        let val_speaker = all[(fold + 1) % all.len()];
        let split = split_held_out_speaker(&samples, test_speaker, val_speaker)?;
        let [train, val, test] = [&split.train, &split.val, &split.test].map(|idx| speakers_of(&samples, idx));
        disjoint &= split.check_disjoint().is_ok()
            && split.len() == samples.len()
            && test == BTreeSet::from([test_speaker])
            && val == BTreeSet::from([val_speaker])
            && train.len() == all.len() - 2
            && !train.contains(&test_speaker)
            && !train.contains(&val_speaker);
        let models = train_cae_lstm(&pick(&samples, &split.train), &pick(&samples, &split.val), &config, MSD_SEED)?;
        let r = report(&models, &pick(&samples, &split.test), vocab.words(), MSD_SEED)?;
        accuracies.push(format!("{:.0}", 100.0 * r.test.accuracy));
        reports.push(r);
    }
    let mean = msi_average(&reports).unwrap_or(0.0);
    Ok((
        reports.len() == 15 && disjoint && mean >= 0.70,
        format!(
            "{} folds, mean test {:.2}%, speaker-disjoint: {disjoint}, per fold [{}]",
            reports.len(),
            100.0 * mean,
            accuracies.join(" ")
        ),
    ))
}

fn method_ordering() -> Check {
    let seed = 11;
    let profile = Profile::desk();
    let spec = SynthCorpusSpec { profile, words: 9, speakers: 10, occurrences: 100, seed };
    let vocab = SynthVocabulary::new(spec.words, seed)?;
    let videos: Vec<SyntheticVideo> = spec
        .entries()
        .map(|(w, s, o)| synthesize_word_video(w, s, o, &profile, &vocab, seed))
        .collect::<Result<_>>()?;
    let samples: Vec<VideoSample> = videos.iter().map(|v| v.sample.clone()).collect();
    let split = split_per_class_counts(&samples, vocab.words(), [900, 50, 50], seed)?;
    let (train, val, test) = (pick(&samples, &split.train), pick(&samples, &split.val), pick(&samples, &split.test));

    let lips = |idx: &[usize], every: usize| -> Vec<(GrayFrame, Roi)> {
        idx.iter()
            .step_by(every)
            .flat_map(|&i| {
                let v = &videos[i];
                (0..v.scene.len()).map(move |t| (v.scene[t].clone(), v.crop_box(t, &profile)))
            })
            .collect()
    };
    let patch_train = build_patch_dataset(&lips(&split.train, 20), profile.width, profile.height, 4000, 1)?;
    let patch_val = build_patch_dataset(&lips(&split.val, 5), profile.width, profile.height, 500, 2)?;

    let cae_config = desk_config(vocab.len());
    let cnn_config = TwoPhaseConfig {
        extractor: OptimConfig { max_epochs: 10, ..OptimConfig::patch_classifier() },
        ..cae_config.clone()
    };
    let cae = train_cae_lstm(&train, &val, &cae_config, seed)?;
    let cnn = train_cnn_lstm(&patch_train, &patch_val, &train, &val, &cnn_config, seed)?;
    let cae_acc = report(&cae, &test, vocab.words(), seed)?.test.accuracy;
    let cnn_acc = report(&cnn, &test, vocab.words(), seed)?.test.accuracy;

    let frame = &tensor_to_frames(&train[0].frames)?[3];
    let cae_empty = emptiness_score(&first_layer_feature_maps(&cae.extractor, frame)?, 1e-3);
    let cnn_empty = emptiness_score(&first_layer_feature_maps(&cnn.extractor, frame)?, 1e-3);
    Ok((
        cae_acc >= cnn_acc - 0.02 && cae_empty <= cnn_empty,
        format!(
            "test accuracy CAE {:.2}% vs CNN {:.2}%, emptiness CAE {cae_empty:.3} vs CNN {cnn_empty:.3}",
            100.0 * cae_acc,
            100.0 * cnn_acc
        ),
    ))
}

#[derive(Debug, Clone, Copy)]
struct Record {
    label: usize,
    speaker: u32,
}

impl Labeled for Record {
    fn label(&self) -> usize {
        self.label
    }
    fn speaker(&self) -> u32 {
        self.speaker
    }
}

fn records(words: usize, speakers: u32, occurrences: usize) -> Vec<Record> {
    let mut out = Vec::new();
    for speaker in 0..speakers {
        for label in 0..words {
            out.extend((0..occurrences).map(|_| Record { label, speaker }));
        }
    }
    out
}

fn vocabulary(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

/// Per-split counts of records matching `key`.
fn counts<K: Ord + Copy>(records: &[Record], split: &SplitIndices, key: impl Fn(&Record) -> K) -> Vec<(K, [usize; 3])> {
    let mut out = std::collections::BTreeMap::new();
    for (s, idx) in [&split.train, &split.val, &split.test].into_iter().enumerate() {
        for &i in idx {
            out.entry(key(&records[i])).or_insert([0; 3])[s] += 1;
        }
    }
    out.into_iter().collect()
}

/// Disjoint, in range and covering the whole record set.
fn partition(split: &SplitIndices, n: usize) -> bool {
    split.check_disjoint().is_ok()
        && split.len() == n
        && [&split.train, &split.val, &split.test].iter().all(|s| s.iter().all(|&i| i < n))
}

fn split_arithmetic() -> Check {
    let mut failures = Vec::new();

    // 900/50/50 occurrences per word, with some records left unused.
    let r = records(9, 10, 110);
    let split = split_per_class_counts(&r, &vocabulary(9), [900, 50, 50], 1)?;
    let per_class = counts(&r, &split, |x| x.label);
    if split.check_disjoint().is_err() || per_class.len() != 9 || per_class.iter().any(|(_, c)| *c != [900, 50, 50]) {
        failures.push("per-class 900/50/50");
    }

    // 8/1/1 per (speaker, word) pair.
    let r = records(10, 15, 10);
    let split = split_speaker_dependent(&r, &vocabulary(10), [8, 1, 1], 2)?;
    let pairs = counts(&r, &split, |x| (x.speaker, x.label));
    if !partition(&split, r.len()) || pairs.len() != 150 || pairs.iter().any(|(_, c)| *c != [8, 1, 1]) {
        failures.push("speaker-dependent 8/1/1");
    }

    // 13/1/1 speakers in every fold.
    for test_speaker in 0..15 {
        let val_speaker = (test_speaker + 1) % 15;
        let split = split_held_out_speaker(&r, test_speaker, val_speaker)?;
        let by_speaker = counts(&r, &split, |x| x.speaker);
        let roles: Vec<usize> = by_speaker
            .iter()
            .map(|(_, c)| c.iter().filter(|&&n| n > 0).count())
            .collect();
        let train_speakers = by_speaker.iter().filter(|(_, c)| c[0] > 0).count();
        let ok = partition(&split, r.len())
            && roles.iter().all(|&k| k == 1)
            && train_speakers == 13
            && split.test.iter().all(|&i| r[i].speaker == test_speaker)
            && split.val.iter().all(|&i| r[i].speaker == val_speaker);
        if !ok {
            failures.push("held-out speaker 13/1/1");
            break;
        }
    }

    // 90/5/5 of every speaker's records, for round and awkward sizes.
    let mut r = records(10, 4, 10);
    r.extend((0..37).map(|i| Record { label: i % 10, speaker: 4 }));
    let split = split_per_speaker_fraction(&r, [0.9, 0.05, 0.05], 3)?;
    let by_speaker = counts(&r, &split, |x| x.speaker);
    let expected = |n: usize| largest_remainder(n, [0.9, 0.05, 0.05]);
    let ok = partition(&split, r.len())
        && by_speaker.len() == 5
        && by_speaker.iter().all(|&(s, c)| c == if s == 4 { expected(37) } else { [90, 5, 5] })
        && expected(37).iter().sum::<usize>() == 37;
    if !ok {
        failures.push("per-speaker 90/5/5");
    }

    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            "900/50/50, 8/1/1, 13/1/1 and 90/5/5 exact on every record".to_string()
        } else {
            format!("wrong: {}", failures.join(", "))
        },
    ))
}

fn preprocessing() -> Check {
    let mut failures: Vec<String> = Vec::new();
    let mut r = rng(8);

    // Exactly T frames: source frames first, black frames after.
    for t in [1, 5, 12, 25, 29] {
        for n in 1..=2 * t {
            let frames: Vec<GrayFrame> = (0..n)
                .map(|i| GrayFrame::filled(6, 4, 0.1 + 0.8 * (i as f32 + 1.0) / (2 * t) as f32))
                .collect::<Result<_>>()?;
            let padded = pad_frames(frames.clone(), t)?;
            let start = n.saturating_sub(t) / 2;
            let kept = n.min(t);
            let ok = padded.len() == t
                && padded[..kept] == frames[start..start + kept]
                && padded[kept..].iter().all(|f| f.pixels().iter().all(|&p| p == 0.0));
            if !ok {
                failures.push(format!("pad_frames n={n} T={t}"));
            }
        }
    }

    // Profile geometry: 29×72×42 and 25×72×28, enforced on video tensors.
    let cascade = CascadeModel::bundled();
    let vocab = SynthVocabulary::new(3, 8)?;
    for (profile, expected) in [
        (Profile::bbc(), [29, 1, 42, 72]),
        (Profile::miracl(), [25, 1, 28, 72]),
        (Profile::grid(), [25, 1, 28, 72]),
    ] {
        let video = synthesize_word_video(0, 0, 0, &profile, &vocab, 8)?;
        let options = PreprocessOptions {
            frames: profile.frames,
            width: profile.width,
            height: profile.height,
            fixed_roi: false,
            detector: DetectorParams::default(),
        };
        let processed = preprocess_video(&video.scene, &cascade, &options)?;
        let mut wrong = expected;
        wrong[0] += 1;
        let ok = profile.video_dims() == expected
            && processed.frames.dims() == expected
            && video.sample.frames.dims() == expected
            && profile.check_video(&expected).is_ok()
            && profile.check_video(&wrong).is_err()
            && profile.check_video(&[expected[0], 1, expected[3], expected[2]]).is_err();
        if !ok {
            failures.push(format!("profile {profile}"));
        }
    }

    // Frozen-encoder rows of padding frames are one fixed vector.
    let profile = Profile::desk();
    let desc = ArchitectureDescriptor::tiny(profile, 3);
    let params = build_cae(&desc)?.init_params(8)?;
    let encoder = FeatureExtractor::from_checkpoint(&ModelCheckpoint {
        architecture: ModelArchitecture::Cae { descriptor: desc.clone() }.to_json()?,
        metadata: TrainingMetadata::default(),
        params,
    })?;
    let black = encoder.extract_frames(GrayFrame::black(profile.width, profile.height)?.to_tensor().reshape(&[
        1,
        1,
        profile.height,
        profile.width,
    ])?)?;
    let mut padded_videos = 0;
    for occurrence in 0..6 {
        let sample = synthesize_word_video(1, 2, occurrence, &profile, &vocab, 8)?.sample;
        let rows = encoder.extract_video(&sample.frames)?;
        let d = rows.dims()[1];
        if sample.source_len < profile.frames {
            padded_videos += 1;
        }
        if rows.data().chunks_exact(d).skip(sample.source_len).any(|row| row != black.data()) {
            failures.push(format!("padding rows of occurrence {occurrence}"));
        }
    }
    if padded_videos == 0 {
        failures.push("no padded video to check".into());
    }

    // Detected mouth box against the generator's ground truth.
    let mut worst = 0.0f64;
    let mut frames = 0;
    let detector = DetectorParams::default();
    for speaker in 0..15 {
        let word = below(&mut r, 10);
        let occurrence = below(&mut r, 10) as u32;
        let video = synthesize_word_video(word, speaker, occurrence, &profile, &SynthVocabulary::new(10, 8)?, 8)?;
        for (t, scene) in video.scene.iter().enumerate() {
            let (roi, source) = extract_mouth(scene, &cascade, &detector, None)?;
            frames += 1;
            if source != RoiSource::Detected {
                failures.push(format!("no detection: speaker {speaker} frame {t}"));
                continue;
            }
            worst = worst.max(edge_error(&roi, &video.mouth[t]));
        }
    }
    if worst > 3.0 {
        failures.push(format!("detector edge error {worst:.2} px"));
    }

    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            format!("padding, geometry and padding rows exact; detector worst edge error {worst:.2} px over {frames} frames")
        } else {
            failures.join(", ")
        },
    ))
}

fn below(r: &mut ChaCha8Rng, n: usize) -> usize {
    r.gen_range(0..n)
}

/// Largest displacement of any of the four box edges, in pixels.
fn edge_error(a: &Roi, b: &Roi) -> f64 {
    [
        (a.x - b.x).abs(),
        (a.y - b.y).abs(),
        (a.x + a.width - b.x - b.width).abs(),
        (a.y + a.height - b.y - b.height).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn determinism() -> Check {
    let first = msd_run()?;
    let second = msd_run()?;
    let differing: Vec<&str> = first
        .files
        .iter()
        .zip(&second.files)
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0)
        .collect();
    Ok((
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "checkpoints, report and confusion CSV bit-identical across two runs ({})",
                first.report.summary()
            )
        } else {
            format!("differs: {}", differing.join(", "))
        },
    ))
}
