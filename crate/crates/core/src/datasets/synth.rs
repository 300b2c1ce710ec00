//! Procedural lip videos: a face with an elliptical mouth whose opening
//! follows a word-specific sequence of viseme targets.
//!
//! Words are codewords of a distance-3 code over five aperture levels, so any
//! two words disagree in at least three of their four (or five) segments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::{Profile, VideoSample};
use crate::error::{Error, Result};
use crate::nn::mix_seed;
use crate::tensor::Tensor;
use crate::vision::{crop_resize, GrayFrame, Roi};

/// Mouth opening for each viseme symbol, as a fraction of lip height.
const APERTURE_LEVELS: [f64; 5] = [0.05, 0.28, 0.5, 0.72, 0.95];
/// Horizontal lip stretch for each symbol; open vowels round the lips.
const WIDTH_LEVELS: [f64; 5] = [1.10, 1.05, 1.0, 0.95, 0.90];
const SYMBOL_LETTERS: [char; 5] = ['m', 'e', 'a', 'o', 'u'];
const PIXEL_NOISE: f64 = 0.02;

const BACKGROUND: f64 = 0.15;
const SKIN: f64 = 0.62;
const LIPS: f64 = 0.30;
const OPENING: f64 = 0.06;

/// Synthetic vocabulary: word names and their viseme codewords.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthVocabulary {
    words: Vec<String>,
    codes: Vec<Vec<u8>>,
}

impl SynthVocabulary {
    pub fn new(size: usize, seed: u64) -> Result<Self> {
        let mut codes: Vec<Vec<u8>> = if size == 0 {
            return Err(Error::Config("vocabulary size must be positive".into()));
        } else if size <= 25 {
            // (a, b, a+b, a+2b) mod 5: any two coordinates determine the word.
            (0..25u8)
                .map(|i| {
                    let (a, b) = (i / 5, i % 5);
                    vec![a, b, (a + b) % 5, (a + 2 * b) % 5]
                })
                .collect()
        } else if size <= 125 {
            (0..125u8)
                .map(|i| {
                    let (a, b, c) = (i / 25, (i / 5) % 5, i % 5);
                    vec![a, b, c, (a + b + c) % 5, (a + 2 * b + 3 * c) % 5]
                })
                .collect()
        } else {
            return Err(Error::Config(format!("synthetic vocabulary supports at most 125 words, asked for {size}")));
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x766f_6361_62));
        codes.shuffle(&mut rng);
        // Constant codewords (a closed or frozen mouth) only when needed.
        codes.sort_by_key(|c| c.iter().all(|&s| s == c[0]));
        codes.truncate(size);
        let words = codes
            .iter()
            .map(|c| c.iter().map(|&s| SYMBOL_LETTERS[s as usize]).collect())
            .collect();
        Ok(SynthVocabulary { words, codes })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn code(&self, word_id: usize) -> Result<&[u8]> {
        self.codes.get(word_id).map(Vec::as_slice).ok_or(Error::LabelOutOfRange {
            label: word_id,
            classes: self.codes.len(),
        })
    }
}

/// Fixed appearance of one synthetic speaker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerStyle {
    /// Mouth offset from the default position, in scene pixels.
    pub offset: (f64, f64),
    pub scale: f64,
    pub brightness: f64,
    pub lip_thickness: f64,
    pub aperture_gain: f64,
}

impl SpeakerStyle {
    pub fn new(speaker: u32, profile: &Profile, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5370_6b00_0000 + speaker as u64));
        let (sw, sh) = profile.scene_size();
        SpeakerStyle {
            offset: (
                rng.gen_range(-0.05..0.05) * sw as f64,
                rng.gen_range(-0.03..0.03) * sh as f64,
            ),
            scale: rng.gen_range(0.92..1.08),
            brightness: rng.gen_range(-0.05..0.05),
            lip_thickness: rng.gen_range(0.92..1.08),
            aperture_gain: rng.gen_range(0.94..1.06),
        }
    }
}

/// Rendered synthetic video with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub sample: VideoSample,
    /// Full scene frames, one per source frame.
    pub scene: Vec<GrayFrame>,
    /// Ground-truth mouth box per source frame; aspect 3:2 like the bundled
    /// cascade window.
    pub mouth: Vec<Roi>,
    /// Ground-truth mouth opening per source frame, as a fraction of lip height.
    pub apertures: Vec<f64>,
}

impl SyntheticVideo {
    /// Profile-aspect crop box around the ground-truth mouth of frame `t`.
    pub fn crop_box(&self, t: usize, profile: &Profile) -> Roi {
        let (sw, sh) = profile.scene_size();
        self.mouth[t].fit_aspect(profile.aspect(), sw, sh)
    }
}

/// Aperture at normalized time `u ∈ [0, 1]`: cosine easing between the
/// segment targets of `code`.
fn trajectory(code: &[u8], u: f64) -> (f64, f64) {
    let segments = code.len();
    let p = (u * segments as f64 - 0.5).max(0.0);
    let k0 = (p.floor() as usize).min(segments - 1);
    let k1 = (k0 + 1).min(segments - 1);
    let frac = (p - k0 as f64).clamp(0.0, 1.0);
    let s = (1.0 - (std::f64::consts::PI * frac).cos()) / 2.0;
    let (a0, a1) = (code[k0] as usize, code[k1] as usize);
    (
        APERTURE_LEVELS[a0] + (APERTURE_LEVELS[a1] - APERTURE_LEVELS[a0]) * s,
        WIDTH_LEVELS[a0] + (WIDTH_LEVELS[a1] - WIDTH_LEVELS[a0]) * s,
    )
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
}

impl Ellipse {
    #[inline]
    fn contains(&self, x: f64, y: f64) -> bool {
        if self.ax <= 0.0 || self.ay <= 0.0 {
            return false;
        }
        let dx = (x - self.cx) / self.ax;
        let dy = (y - self.cy) / self.ay;
        dx * dx + dy * dy <= 1.0
    }
}

struct Scene {
    width: usize,
    height: usize,
    face: Ellipse,
    skin: f64,
    lips: f64,
}

impl Scene {
    fn render(&self, lips: &Ellipse, opening: &Ellipse, noise: &mut impl FnMut() -> f64) -> GrayFrame {
        const SUB: [f64; 2] = [0.25, 0.75];
        let mut pixels = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for sy in SUB {
                    for sx in SUB {
                        let (px, py) = (x as f64 + sx, y as f64 + sy);
                        acc += if opening.contains(px, py) {
                            OPENING
                        } else if lips.contains(px, py) {
                            self.lips
                        } else if self.face.contains(px, py) {
                            self.skin + 0.06 * (0.5 - py / self.height as f64)
                        } else {
                            BACKGROUND
                        };
                    }
                }
                pixels.push((acc / 4.0 + noise()) as f32);
            }
        }
        GrayFrame::new(self.width, self.height, pixels).expect("scene dims are valid")
    }
}

/// Deterministic render of one utterance.
///
/// The source length lies in `[ceil(0.6T), T]`; the speaker fixes geometry and
/// brightness; the occurrence adds timing, position and pixel-noise jitter.
pub fn synthesize_word_video(
    word_id: usize,
    speaker_id: u32,
    occurrence_id: u32,
    profile: &Profile,
    vocabulary: &SynthVocabulary,
    seed: u64,
) -> Result<SyntheticVideo> {
    profile.validate()?;
    let code = vocabulary.code(word_id)?;
    let style = SpeakerStyle::new(speaker_id, profile, seed);
    let stream = mix_seed(
        mix_seed(mix_seed(seed, 0x4f63_6300 + word_id as u64), speaker_id as u64),
        occurrence_id as u64,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(stream);

    let t_max = profile.frames;
    let t_min = ((0.6 * t_max as f64).ceil() as usize).max(1);
    let source_len = rng.gen_range(t_min..=t_max);
    let warp: f64 = rng.gen_range(0.85..1.15);
    let jitter = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let aperture_shift: f64 = rng.gen_range(-0.03..0.03);

    let (sw, sh) = profile.scene_size();
    let scene = Scene {
        width: sw,
        height: sh,
        face: Ellipse {
            cx: sw as f64 / 2.0 + style.offset.0 * 0.5,
            cy: 0.48 * sh as f64,
            ax: 0.42 * sw as f64,
            ay: 0.47 * sh as f64,
        },
        skin: SKIN + style.brightness,
        lips: LIPS + 0.5 * style.brightness,
    };
    let mouth_w = profile.width as f64 * style.scale;
    let mouth_h = mouth_w / 1.5;
    let cx = sw as f64 / 2.0 + style.offset.0 + jitter.0;
    let cy = 0.70 * sh as f64 + style.offset.1 + jitter.1;
    let mouth_roi = Roi::new(cx - mouth_w / 2.0, cy - mouth_h / 2.0, mouth_w, mouth_h);

    let normal = Normal::new(0.0, PIXEL_NOISE).expect("valid noise scale");
    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(stream, 0x6e6f_6973_65));
    let mut noise = || normal.sample(&mut noise_rng);

    let mut frames = Vec::with_capacity(source_len);
    let mut apertures = Vec::with_capacity(source_len);
    for t in 0..source_len {
        let u = ((t as f64 + 0.5) / source_len as f64).powf(warp);
        let (level, stretch) = trajectory(code, u);
        let aperture = ((level + aperture_shift) * style.aperture_gain).clamp(0.0, 1.0);
        let lip_ax = 0.35 * mouth_w * stretch;
        let lip_ay = 0.25 * mouth_h * style.lip_thickness;
        let lips = Ellipse {
            cx,
            cy,
            ax: lip_ax,
            ay: lip_ay,
        };
        let opening = Ellipse {
            cx,
            cy,
            ax: 0.72 * lip_ax,
            ay: aperture * 0.8 * lip_ay,
        };
        frames.push(scene.render(&lips, &opening, &mut noise));
        apertures.push(aperture);
    }

    let crop = mouth_roi.fit_aspect(profile.aspect(), sw, sh);
    let mut data = Vec::with_capacity(profile.frames * profile.height * profile.width);
    for frame in &frames {
        data.extend_from_slice(crop_resize(frame, &crop, profile.width, profile.height)?.pixels());
    }
    data.resize(profile.frames * profile.height * profile.width, 0.0);
    let sample = VideoSample {
        frames: Tensor::new(&profile.video_dims(), data)?,
        label: word_id,
        speaker: speaker_id,
        source_len,
    };
    Ok(SyntheticVideo {
        sample,
        scene: frames,
        mouth: vec![mouth_roi; source_len],
        apertures,
    })
}

/// Shape of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusSpec {
    pub profile: Profile,
    pub words: usize,
    pub speakers: u32,
    pub occurrences: u32,
    pub seed: u64,
}

impl SynthCorpusSpec {
    /// Ten words, fifteen speakers, ten occurrences each.
    pub fn standard(profile: Profile, seed: u64) -> Self {
        SynthCorpusSpec {
            profile,
            words: 10,
            speakers: 15,
            occurrences: 10,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.words * self.speakers as usize * self.occurrences as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(word, speaker, occurrence)` in generation order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, u32, u32)> + '_ {
        (0..self.speakers).flat_map(move |s| {
            (0..self.words).flat_map(move |w| (0..self.occurrences).map(move |o| (w, s, o)))
        })
    }
}

/// Renders only the video tensors of a corpus, in [`SynthCorpusSpec::entries`] order.
pub fn synthesize_corpus(spec: &SynthCorpusSpec) -> Result<(SynthVocabulary, Vec<VideoSample>)> {
    use rayon::prelude::*;
    let vocabulary = SynthVocabulary::new(spec.words, spec.seed)?;
    let entries: Vec<_> = spec.entries().collect();
    let samples = entries
        .par_iter()
        .map(|&(w, s, o)| synthesize_word_video(w, s, o, &spec.profile, &vocabulary, spec.seed).map(|v| v.sample))
        .collect::<Result<Vec<_>>>()?;
    Ok((vocabulary, samples))
}
