use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::brir::{convolve_sparse, ToyBrir};
use super::noise::binaural_noise;
use super::source::{power, speech_like};
use crate::dsp::{AudioSignal, SAMPLE_RATE};
use crate::error::{config_err, Error, Result};

/// Lowest and highest mixture SNR, dB.
pub const SNR_RANGE: (f64, f64) = (-6.0, 6.0);
/// Mean per-channel power of each rendered speech image.
pub const SPEECH_POWER: f64 = 0.01;
pub const MIXTURE_SECONDS: f64 = 5.0;
pub const ENROLLMENT_SECONDS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Two speakers, one output per speaker and ear.
    Ss,
    /// One speaker in ambient noise.
    Se,
    /// Target speaker picked by an enrollment utterance out of two speakers in noise.
    Tse,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Ss => "ss",
            Task::Se => "se",
            Task::Tse => "tse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ss" => Ok(Task::Ss),
            "se" => Ok(Task::Se),
            "tse" => Ok(Task::Tse),
            other => Err(config_err!("unknown task {other:?}; expected ss, se or tse")),
        }
    }

    /// Speech sources in a mixture.
    pub fn num_sources(&self) -> usize {
        match self {
            Task::Se => 1,
            Task::Ss | Task::Tse => 2,
        }
    }

    /// Output channels of a model for this task (speakers times ears).
    pub fn output_channels(&self) -> usize {
        match self {
            Task::Ss => 4,
            Task::Se | Task::Tse => 2,
        }
    }

    pub fn has_noise(&self) -> bool {
        !matches!(self, Task::Ss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Clean enrollment utterance of the target speaker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentRecipe {
    pub source: u32,
    pub brir: u32,
    pub seed: u64,
}

/// Everything needed to render one mixture deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecipe {
    pub id: String,
    pub task: Task,
    pub split: Split,
    /// Speaker identities; the target comes first.
    pub sources: Vec<u32>,
    pub brirs: Vec<u32>,
    pub noise: Option<u32>,
    pub snr_db: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub enrollment: Option<EnrollmentRecipe>,
    #[serde(default = "default_seconds")]
    pub seconds: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
}

fn default_seconds() -> f64 {
    MIXTURE_SECONDS
}

fn default_rate() -> u32 {
    SAMPLE_RATE
}

impl MixtureRecipe {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(config_err!("recipe {}: {}", self.id, m));
        if self.sources.len() != self.task.num_sources() || self.brirs.len() != self.sources.len() {
            return bad(format!("{} sources / {} brirs for task {}", self.sources.len(), self.brirs.len(), self.task.name()));
        }
        if self.sources.len() == 2 && self.sources[0] == self.sources[1] {
            return bad(format!("speaker {} used twice", self.sources[0]));
        }
        match (self.task.has_noise(), self.noise, self.snr_db) {
            (true, Some(_), Some(snr)) => {
                if !(SNR_RANGE.0..=SNR_RANGE.1).contains(&snr) {
                    return bad(format!("snr {snr} dB outside [{}, {}]", SNR_RANGE.0, SNR_RANGE.1));
                }
            }
            (false, None, None) => {}
            _ => return bad(format!("noise/snr do not match task {}", self.task.name())),
        }
        if (self.task == Task::Tse) != self.enrollment.is_some() {
            return bad(String::from("enrollment present exactly for target speaker extraction"));
        }
        if let Some(e) = &self.enrollment {
            if e.source != self.sources[0] {
                return bad(String::from("enrollment speaker differs from the target"));
            }
        }
        if !(self.seconds > 0.0) || self.sample_rate == 0 {
            return bad(String::from("empty duration"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        libm::round(self.seconds * self.sample_rate as f64) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every identity the recipe draws on, for split bookkeeping.
    pub fn identities(&self) -> impl Iterator<Item = Identity> + '_ {
        let src = self.sources.iter().map(|&s| Identity::Speaker(s));
        let brir = self.brirs.iter().chain(self.enrollment.as_ref().map(|e| &e.brir)).map(|&b| Identity::Brir(b));
        src.chain(brir).chain(self.noise.map(Identity::Noise))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Identity {
    Speaker(u32),
    Brir(u32),
    Noise(u32),
}

/// A rendered mixture and its decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: AudioSignal<f64>,
    /// Binaural image of each source, target first.
    pub references: Vec<AudioSignal<f64>>,
    /// Noise after SNR scaling.
    pub noise: Option<AudioSignal<f64>>,
    pub enrollment: Option<AudioSignal<f64>>,
}

fn render_image(speaker: u32, brir: u32, seed: u64, len: usize, sr: u32) -> Result<[Vec<f64>; 2]> {
    let dry = speech_like(speaker, seed, len, sr);
    let h = ToyBrir::generate(brir, sr);
    let mut image = [convolve_sparse(&dry, &h.left), convolve_sparse(&dry, &h.right)];
    let p = (power(&image[0]) + power(&image[1])) / 2.0;
    if !(p > 0.0) {
        return Err(Error::ZeroPower(format!("speaker {speaker} rendered silent")));
    }
    let g = libm::sqrt(SPEECH_POWER / p);
    image.iter_mut().flatten().for_each(|v| *v *= g);
    Ok(image)
}

/// Amplitude factor for `noise` so that the mean over channels of the
/// per-channel SNR in dB equals `target_db`.
pub fn scale_noise_to_snr(speech: &AudioSignal<f64>, noise: &AudioSignal<f64>, target_db: f64) -> Result<f64> {
    if speech.num_channels() != noise.num_channels() {
        return Err(crate::error::shape_err!("{} speech vs {} noise channels", speech.num_channels(), noise.num_channels()));
    }
    let mut mean_db = 0.0;
    for c in 0..speech.num_channels() {
        let (ps, pn) = (power(speech.channel(c)), power(noise.channel(c)));
        if !(ps > 0.0) {
            return Err(Error::ZeroPower(format!("speech channel {c}")));
        }
        if !(pn > 0.0) {
            return Err(Error::ZeroPower(format!("noise channel {c}")));
        }
        mean_db += 10.0 * libm::log10(ps / pn);
    }
    mean_db /= speech.num_channels() as f64;
    Ok(libm::pow(10.0, (mean_db - target_db) / 20.0))
}

/// Mean over channels of the per-channel SNR in dB.
pub fn measure_snr(speech: &AudioSignal<f64>, noise: &AudioSignal<f64>) -> f64 {
    let n = speech.num_channels();
    (0..n)
        .map(|c| 10.0 * libm::log10(power(speech.channel(c)) / power(noise.channel(c))))
        .sum::<f64>()
        / n as f64
}

/// Renders a recipe: sources through their BRIRs, summed, plus scaled noise.
pub fn make_mixture(recipe: &MixtureRecipe) -> Result<Mixture> {
    recipe.validate()?;
    let (len, sr) = (recipe.len(), recipe.sample_rate);
    let mut references = Vec::with_capacity(recipe.sources.len());
    for (k, (&s, &b)) in recipe.sources.iter().zip(&recipe.brirs).enumerate() {
        let [l, r] = render_image(s, b, recipe.seed.wrapping_add(k as u64), len, sr)?;
        references.push(AudioSignal::new(alloc::vec![l, r], sr)?);
    }
    let mut speech = AudioSignal::<f64>::zeros(2, len, sr);
    for r in &references {
        for c in 0..2 {
            for (a, b) in speech.channel_mut(c).iter_mut().zip(r.channel(c)) {
                *a += b;
            }
        }
    }
    let noise = match (recipe.noise, recipe.snr_db) {
        (Some(id), Some(snr)) => {
            let [l, r] = binaural_noise(id, recipe.seed, len, sr);
            let raw = AudioSignal::new(alloc::vec![l, r], sr)?;
            let g = scale_noise_to_snr(&speech, &raw, snr)?;
            let scaled: Vec<Vec<f64>> = raw.channels().iter().map(|ch| ch.iter().map(|v| g * v).collect()).collect();
            Some(AudioSignal::new(scaled, sr)?)
        }
        _ => None,
    };
    let mut mixture = speech;
    if let Some(n) = &noise {
        for c in 0..2 {
            for (a, b) in mixture.channel_mut(c).iter_mut().zip(n.channel(c)) {
                *a += b;
            }
        }
    }
    let enrollment = match &recipe.enrollment {
        Some(e) => {
            let n = libm::round(ENROLLMENT_SECONDS * sr as f64) as usize;
            let [l, r] = render_image(e.source, e.brir, e.seed, n, sr)?;
            Some(AudioSignal::new(alloc::vec![l, r], sr)?)
        }
        None => None,
    };
    Ok(Mixture {
        mixture,
        references,
        noise,
        enrollment,
    })
}
