use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use visemeflow::datasets::{
    build_patch_dataset, split_held_out_speaker, synthesize_word_video, Manifest, ManifestHeader, ManifestRecord,
    Profile, SplitSpec, Stage, SynthCorpusSpec, SynthVocabulary, VideoSample,
};
use visemeflow::eval::{
    emit_confusion_csv, emptiness_score, evaluate, evaluate_features, first_layer_feature_maps, msi_average,
    write_feature_maps, write_report, EvalReport, RunMetadata, EMPTY_MAP_THRESHOLD,
};
use visemeflow::models::{
    build_cae, build_cnn_classifier, collect_frames, extract_manifest_features, load_features, train_cae,
    train_cae_lstm, train_lstm_classifier, train_patch_classifier, ArchitectureDescriptor, FeatureExtractor,
    LstmClassifier, LstmModel, ModelArchitecture, TwoPhaseConfig, WordReader,
};
use visemeflow::nn::mix_seed;
use visemeflow::optim::{load_checkpoint, save_checkpoint};
use visemeflow::tensor::{read_tensor, write_tensor, Tensor};
use visemeflow::vision::{
    read_frame_dir, preprocess_video, tensor_to_frames, write_frame_dir, CascadeModel, DetectorParams, GrayFrame,
    MouthTracker, PreprocessOptions, Roi, RoiSource,
};
use visemeflow::{Error, Result};

use crate::config::{Resolved, RunConfig};

fn read_manifest(path: &Path, stage: Stage) -> Result<Manifest> {
    let m = Manifest::read(path)?;
    if m.header.stage != stage {
        return Err(Error::Config(format!(
            "{} is a {:?} manifest, expected {:?}",
            path.display(),
            m.header.stage,
            stage
        )));
    }
    Ok(m)
}

/// Errors when `--profile` was given and disagrees with the data.
fn check_profile(cfg: &RunConfig, found: Profile) -> Result<()> {
    if cfg.profile.is_some() && cfg.profile()? != found {
        return Err(Error::ProfileMismatch {
            expected: cfg.profile()?.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

fn write_manifest(m: &Manifest, out: &Path, name: &str) -> Result<()> {
    m.rebase(out)?.write(out.join(name))
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cascade(cfg: &RunConfig) -> Result<CascadeModel> {
    match &cfg.cascade {
        Some(path) => CascadeModel::load(path),
        None => Ok(CascadeModel::bundled()),
    }
}

fn descriptor(cfg: &RunConfig, header: &ManifestHeader) -> Result<ArchitectureDescriptor> {
    ArchitectureDescriptor::preset(cfg.arch(), header.profile, header.vocabulary.len())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let out = cfg.out()?;
    let standard = SynthCorpusSpec::standard(cfg.profile()?, seed);
    let spec = SynthCorpusSpec {
        words: cfg.words.unwrap_or(standard.words),
        speakers: cfg.speakers.unwrap_or(standard.speakers),
        occurrences: cfg.occurrences.unwrap_or(standard.occurrences),
        ..standard
    };
    if spec.is_empty() {
        return Err(Error::Config("the corpus must have at least one word, speaker and occurrence".into()));
    }
    let vocabulary = SynthVocabulary::new(spec.words, seed)?;
    let entries: Vec<_> = spec.entries().collect();
    let records = entries
        .par_iter()
        .map(|&(word, speaker, occurrence)| {
            let video = synthesize_word_video(word, speaker, occurrence, &spec.profile, &vocabulary, seed)?;
            let path = Path::new("scenes")
                .join(&vocabulary.words()[word])
                .join(format!("s{speaker:02}"))
                .join(format!("o{occurrence:02}"));
            write_frame_dir(out.join(&path), &video.scene)?;
            Ok(ManifestRecord {
                path,
                label: word,
                speaker,
                source_len: video.scene.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let header = ManifestHeader {
        vocabulary: vocabulary.words().to_vec(),
        profile: spec.profile,
        stage: Stage::Raw,
    };
    Manifest::new(header, records, &out)?.write(out.join("corpus.jsonl"))?;
    println!("{} videos, {} words, {} speakers -> {}", spec.len(), spec.words, spec.speakers, out.display());
    Ok(())
}

pub fn preprocess(cfg: &RunConfig) -> Result<()> {
    let input = read_manifest(&cfg.path(&cfg.input, "input")?, Stage::Raw)?;
    let out = cfg.out()?;
    let profile = input.profile();
    check_profile(cfg, profile)?;
    let cascade = cascade(cfg)?;
    let options = PreprocessOptions {
        frames: profile.frames,
        width: profile.width,
        height: profile.height,
        fixed_roi: cfg.fixed_roi.unwrap_or(false),
        detector: DetectorParams::default(),
    };
    let done = input
        .records
        .par_iter()
        .map(|r| {
            let frames = read_frame_dir(input.resolve(r))?;
            let video = preprocess_video(&frames, &cascade, &options)?;
            let path = Path::new("videos").join(input.relative_path(r)).with_extension("ntsr");
            let dest = out.join(&path);
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_tensor(&dest, &video.frames)?;
            let fallbacks = video.rois.iter().filter(|(_, s)| *s != RoiSource::Detected).count();
            let record = ManifestRecord {
                path,
                source_len: video.source_len,
                ..r.clone()
            };
            Ok((record, fallbacks))
        })
        .collect::<Result<Vec<_>>>()?;
    let fallbacks: usize = done.iter().map(|d| d.1).sum();
    let header = ManifestHeader {
        stage: Stage::Frames,
        ..input.header.clone()
    };
    let records = done.into_iter().map(|d| d.0).collect();
    Manifest::new(header, records, &out)?.write(out.join("frames.jsonl"))?;
    println!("{} videos preprocessed, {fallbacks} frames without a fresh detection", input.len());
    Ok(())
}

fn speakers(records: &[ManifestRecord]) -> Vec<u32> {
    records.iter().map(|r| r.speaker).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Test and validation speaker of held-out-speaker fold `fold`.
fn fold_speakers(speakers: &[u32], fold: usize) -> (u32, u32) {
    (speakers[fold], speakers[(fold + 1) % speakers.len()])
}

fn split_spec(cfg: &RunConfig, m: &Manifest) -> Result<SplitSpec> {
    let mode = if cfg.msd == Some(true) {
        "msd"
    } else {
        cfg.split
            .as_deref()
            .ok_or_else(|| Error::Config("`--split` (or `--msd`) is required".into()))?
    };
    let counts = || -> Result<[usize; 3]> {
        match (cfg.train_count, cfg.val_count, cfg.test_count) {
            (Some(a), Some(b), Some(c)) => Ok([a, b, c]),
            _ => Err(Error::Config(format!(
                "split `{mode}` needs --train-count, --val-count and --test-count"
            ))),
        }
    };
    Ok(match mode {
        "msd" => SplitSpec::SpeakerDependent {
            train: 8,
            val: 1,
            test: 1,
        },
        "msi" => {
            let all = speakers(&m.records);
            if all.len() < 3 {
                return Err(Error::InvalidSplit(format!("{} speakers cannot fill three splits", all.len())));
            }
            let test_speaker = cfg.test_speaker.unwrap_or(all[0]);
            let pos = all.iter().position(|&s| s == test_speaker).ok_or(Error::UnknownSpeaker(test_speaker))?;
            SplitSpec::HeldOutSpeaker {
                test_speaker,
                val_speaker: cfg.val_speaker.unwrap_or(fold_speakers(&all, pos).1),
            }
        }
        "per-class" => {
            let [train, val, test] = counts()?;
            SplitSpec::PerClassCounts { train, val, test }
        }
        "speaker-dependent" => {
            let [train, val, test] = counts()?;
            SplitSpec::SpeakerDependent { train, val, test }
        }
        "per-speaker-fraction" => match cfg.fractions.as_deref() {
            Some(&[a, b, c]) => SplitSpec::PerSpeakerFraction { fractions: [a, b, c] },
            _ => return Err(Error::Config("`--fractions` needs exactly three values".into())),
        },
        other => return Err(Error::Config(format!("unknown split protocol `{other}`"))),
    })
}

pub fn split(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let input = Manifest::read(cfg.path(&cfg.input, "input")?)?;
    let out = cfg.out()?;
    let spec = split_spec(cfg, &input)?;
    let (train, val, test) = spec.split_manifest(&input, seed)?;
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        write_manifest(part, &out, &format!("{name}.jsonl"))?;
    }
    write_json(&spec, &out.join("split.json"))?;
    println!("train {} / val {} / test {}", train.len(), val.len(), test.len());
    Ok(())
}

pub fn train_cae_command(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let train = read_manifest(&cfg.path(&cfg.train, "train")?, Stage::Frames)?;
    let val = read_manifest(&cfg.path(&cfg.val, "val")?, Stage::Frames)?;
    check_profile(cfg, train.profile())?;
    let out = cfg.out()?;
    let desc = descriptor(cfg, &train.header)?;
    let cae = build_cae(&desc)?;
    let train_frames = collect_frames(&train.load_samples()?, cfg.max_train_frames, mix_seed(seed, 3))?;
    let val_frames = collect_frames(&val.load_samples()?, cfg.max_val_frames, mix_seed(seed, 4))?;
    let ckpt = train_cae(&cae, &train_frames, &val_frames, &cfg.cae_optim()?, mix_seed(seed, 1))?;
    save_checkpoint(out.join("cae.nckp"), &ckpt)?;
    let best = &ckpt.metadata.history[ckpt.metadata.epoch.saturating_sub(1)];
    println!("epoch {} kept, validation MSE {:.6}", ckpt.metadata.epoch, best.val_metric);
    Ok(())
}

/// Frames of up to `limit` seeded videos with the detected, profile-aspect
/// mouth box of each frame.
fn patch_sources(
    m: &Manifest,
    cascade: &CascadeModel,
    limit: usize,
    seed: u64,
) -> Result<Vec<(GrayFrame, Roi)>> {
    let mut picked: Vec<usize> = (0..m.len()).collect();
    picked.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    picked.truncate(limit);
    picked.sort_unstable();
    let aspect = m.profile().aspect();
    let per_video = picked
        .par_iter()
        .map(|&i| {
            let frames = read_frame_dir(m.resolve(&m.records[i]))?;
            let mut tracker = MouthTracker::new(cascade, DetectorParams::default());
            frames
                .into_iter()
                .map(|f| {
                    let (roi, _) = tracker.next(&f)?;
                    let boxed = roi.fit_aspect(aspect, f.width(), f.height());
                    Ok((f, boxed))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_video.into_iter().flatten().collect())
}

pub fn train_baseline_cnn(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let train = read_manifest(&cfg.path(&cfg.train, "train")?, Stage::Raw)?;
    let val = read_manifest(&cfg.path(&cfg.val, "val")?, Stage::Raw)?;
    let profile = train.profile();
    check_profile(cfg, profile)?;
    let out = cfg.out()?;
    let cascade = cascade(cfg)?;
    let videos = cfg.patch_videos.unwrap_or(100);
    let train_src = patch_sources(&train, &cascade, videos, mix_seed(seed, 5))?;
    let val_src = patch_sources(&val, &cascade, videos, mix_seed(seed, 6))?;
    let n_train = cfg.patches_train.unwrap_or(4000);
    let n_val = cfg.patches_val.unwrap_or(500);
    let patches_train = build_patch_dataset(&train_src, profile.width, profile.height, n_train, mix_seed(seed, 7))?;
    let patches_val = build_patch_dataset(&val_src, profile.width, profile.height, n_val, mix_seed(seed, 8))?;
    let cnn = build_cnn_classifier(&descriptor(cfg, &train.header)?)?;
    let ckpt = train_patch_classifier(&cnn, &patches_train, &patches_val, &cfg.cnn_optim()?, mix_seed(seed, 1))?;
    save_checkpoint(out.join("cnn.nckp"), &ckpt)?;
    let best = &ckpt.metadata.history[ckpt.metadata.epoch.saturating_sub(1)];
    println!("epoch {} kept, validation patch accuracy {:.4}", ckpt.metadata.epoch, best.val_metric);
    Ok(())
}

pub fn extract_features(cfg: &RunConfig) -> Result<()> {
    let extractor = FeatureExtractor::load(cfg.path(&cfg.checkpoint, "checkpoint")?)?;
    let found = match extractor {
        FeatureExtractor::Cae(_) => "cae",
        FeatureExtractor::Cnn(_) => "cnn",
    };
    match cfg.extractor.as_deref() {
        Some(kind @ ("cae" | "cnn")) if kind != found => {
            return Err(Error::Config(format!("--extractor {kind} given, but the checkpoint holds a {found} extractor")))
        }
        Some("cae" | "cnn") | None => {}
        Some(other) => return Err(Error::Config(format!("unknown extractor `{other}` (expected cae or cnn)"))),
    }
    let out = cfg.out()?;
    let inputs: Vec<(&str, &PathBuf)> = [
        ("train", &cfg.train),
        ("val", &cfg.val),
        ("test", &cfg.test),
        ("features", &cfg.input),
    ]
    .into_iter()
    .filter_map(|(name, p)| p.as_ref().map(|p| (name, p)))
    .collect();
    if inputs.is_empty() {
        return Err(Error::Config("give --input or any of --train, --val, --test".into()));
    }
    for (name, path) in inputs {
        let m = read_manifest(path, Stage::Frames)?;
        let features = extract_manifest_features(&m, &extractor, out.join(name))?;
        write_manifest(&features, &out, &format!("{name}.jsonl"))?;
        println!("{name}: {} sequences of {}-d features", m.len(), extractor.feature_dim());
    }
    Ok(())
}

pub fn train_lstm(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let train_m = read_manifest(&cfg.path(&cfg.train, "train")?, Stage::Features)?;
    let val_m = read_manifest(&cfg.path(&cfg.val, "val")?, Stage::Features)?;
    check_profile(cfg, train_m.profile())?;
    let out = cfg.out()?;
    let train = load_features(&train_m)?;
    let val = load_features(&val_m)?;
    let desc = descriptor(cfg, &train_m.header)?;
    let mut classifier = LstmClassifier::new(
        train.features.dims()[2],
        desc.lstm_hidden,
        train_m.vocabulary().len(),
        train_m.profile().frames,
    );
    classifier.layers = desc.lstm_layers;
    let ckpt = train_lstm_classifier(&classifier, &train, &val, &cfg.lstm_optim()?, mix_seed(seed, 2))?;
    save_checkpoint(out.join("lstm.nckp"), &ckpt)?;
    let best = &ckpt.metadata.history[ckpt.metadata.epoch.saturating_sub(1)];
    println!("epoch {} kept, validation accuracy {:.4}", ckpt.metadata.epoch, best.val_metric);
    Ok(())
}

pub fn eval(cfg: &RunConfig, resolved: &Resolved) -> Result<()> {
    let seed = cfg.seed()?;
    let classifier = LstmModel::from_checkpoint(&load_checkpoint(cfg.path(&cfg.lstm_checkpoint, "lstm_checkpoint")?)?)?;
    let extractor = FeatureExtractor::load(cfg.path(&cfg.checkpoint, "checkpoint")?)?;
    let reader = WordReader::new(extractor, classifier)?;
    let read = |p: &Option<PathBuf>, key| Manifest::read(cfg.path(p, key)?);
    let (train, val, test) = (read(&cfg.train, "train")?, read(&cfg.val, "val")?, read(&cfg.test, "test")?);
    let out = cfg.out()?;
    let meta = RunMetadata {
        seed,
        config_hash: resolved.hash.clone(),
    };
    let report = evaluate(&reader, [&train, &val, &test], meta)?;
    write_report(&report, out.join("report.json"))?;
    emit_confusion_csv(&report.test.confusion, out.join("confusion.csv"))?;
    println!("{}", report.summary());
    Ok(())
}

#[derive(Serialize)]
struct FoldSummary {
    test_speaker: u32,
    val_speaker: u32,
    test_accuracy: f64,
}

#[derive(Serialize)]
struct MsiSummary {
    folds: Vec<FoldSummary>,
    mean_test_accuracy: f64,
    mean_test_percent: String,
}

fn pick(samples: &[VideoSample], idx: &[usize]) -> Vec<VideoSample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

pub fn msi(cfg: &RunConfig, resolved: &Resolved) -> Result<()> {
    let seed = cfg.seed()?;
    let input = read_manifest(&cfg.path(&cfg.input, "input")?, Stage::Frames)?;
    check_profile(cfg, input.profile())?;
    let out = cfg.out()?;
    let all = speakers(&input.records);
    if all.len() < 3 {
        return Err(Error::InvalidSplit(format!("{} speakers cannot fill three splits", all.len())));
    }
    let folds = cfg.folds.unwrap_or(all.len()).min(all.len());
    let config = TwoPhaseConfig {
        descriptor: descriptor(cfg, &input.header)?,
        extractor: cfg.cae_optim()?,
        lstm: cfg.lstm_optim()?,
        max_train_frames: cfg.max_train_frames,
        max_val_frames: cfg.max_val_frames,
    };
    let samples = input.load_samples()?;
    let vocabulary = input.vocabulary().to_vec();
    let mut reports: Vec<EvalReport> = Vec::with_capacity(folds);
    let mut summary = Vec::with_capacity(folds);
    for fold in 0..folds {
        let (test_speaker, val_speaker) = fold_speakers(&all, fold);
        let idx = split_held_out_speaker(&samples, test_speaker, val_speaker)?;
        let test = pick(&samples, &idx.test);
        let models = train_cae_lstm(&pick(&samples, &idx.train), &pick(&samples, &idx.val), &config, seed)?;
        let classifier = LstmModel::from_checkpoint(&models.classifier)?;
        let test_features = FeatureExtractor::from_checkpoint(&models.extractor)?.extract_samples(&test)?;
        let meta = RunMetadata {
            seed,
            config_hash: resolved.hash.clone(),
        };
        let report = evaluate_features(
            &classifier,
            [&models.train_features, &models.val_features, &test_features],
            &vocabulary,
            meta,
        )?;
        let dir = out.join(format!("fold_{fold:02}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_checkpoint(dir.join("cae.nckp"), &models.extractor)?;
        save_checkpoint(dir.join("lstm.nckp"), &models.classifier)?;
        write_report(&report, dir.join("report.json"))?;
        emit_confusion_csv(&report.test.confusion, dir.join("confusion.csv"))?;
        println!("fold {fold:02} (test speaker {test_speaker}): {}", report.summary());
        summary.push(FoldSummary {
            test_speaker,
            val_speaker,
            test_accuracy: report.test.accuracy,
        });
        reports.push(report);
    }
    let mean = msi_average(&reports).ok_or(Error::Empty("fold list"))?;
    write_json(
        &MsiSummary {
            folds: summary,
            mean_test_accuracy: mean,
            mean_test_percent: format!("{:.2}", 100.0 * mean),
        },
        &out.join("msi.json"),
    )?;
    println!("mean test accuracy over {folds} folds: {:.2}%", 100.0 * mean);
    Ok(())
}

#[derive(Serialize)]
struct VisualizeSummary {
    kernels: usize,
    empty_threshold: f64,
    emptiness: f64,
    raw_std: Vec<f64>,
}

pub fn visualize(cfg: &RunConfig) -> Result<()> {
    let ckpt = load_checkpoint(cfg.path(&cfg.checkpoint, "checkpoint")?)?;
    let input = read_manifest(&cfg.path(&cfg.input, "input")?, Stage::Frames)?;
    let out = cfg.out()?;
    let index = cfg.sample.unwrap_or(0);
    let record = input
        .records
        .get(index)
        .ok_or_else(|| Error::Config(format!("sample {index} out of range for {} records", input.len())))?;
    let video: Tensor<f32> = read_tensor(input.resolve(record))?;
    input.profile().check_video(video.dims())?;
    let frames = tensor_to_frames(&video)?;
    let t = cfg.frame.unwrap_or(0);
    let frame = frames
        .get(t)
        .ok_or_else(|| Error::Config(format!("frame {t} out of range for {} frames", frames.len())))?;
    let maps = first_layer_feature_maps(&ckpt, frame)?;
    write_feature_maps(&maps, out.join("feature_maps"))?;
    let threshold = cfg.empty_threshold.unwrap_or(EMPTY_MAP_THRESHOLD);
    let summary = VisualizeSummary {
        kernels: maps.len(),
        empty_threshold: threshold,
        emptiness: emptiness_score(&maps, threshold),
        raw_std: maps.iter().map(|m| m.raw_std).collect(),
    };
    if let ModelArchitecture::Cae { descriptor } = ModelArchitecture::from_json(&ckpt.architecture)? {
        let recon = build_cae(&descriptor)?.reconstruct(&ckpt.params, video)?;
        let shown = record.source_len.min(frames.len());
        write_frame_dir(out.join("original"), &frames[..shown])?;
        write_frame_dir(out.join("reconstruction"), &tensor_to_frames(&recon)?[..shown])?;
    }
    write_json(&summary, &out.join("visualize.json"))?;
    println!(
        "{} kernel maps, emptiness {:.3} at threshold {threshold}",
        summary.kernels, summary.emptiness
    );
    Ok(())
}
