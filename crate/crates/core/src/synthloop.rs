//! Deterministic procedural drum loops: one 120 BPM bar of kick, snare and
//! hi-hat on a 16-step grid, with three levels of set diversity.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::audio_io::{self, AudioClip, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::par;
use crate::prep::BAR_SAMPLES;
use crate::rng::{self, Rng};

pub const STEPS: usize = 16;
const PEAK: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KickSpec {
    pub pitch_start: f64,
    pub pitch_end: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnareSpec {
    pub tone: f64,
    pub noise_mix: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HatSpec {
    pub cutoff: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KitSpec {
    pub kick: KickSpec,
    pub snare: SnareSpec,
    pub hat: HatSpec,
}

impl KitSpec {
    pub fn validate(&self) -> Result<()> {
        let decays = [self.kick.decay, self.snare.decay, self.hat.decay];
        if decays.iter().any(|d| !(*d > 0.0 && *d <= 0.5)) {
            return Err(Error::invalid("kit decays must lie in (0, 0.5] seconds"));
        }
        let freqs = [self.kick.pitch_start, self.kick.pitch_end, self.snare.tone, self.hat.cutoff];
        if freqs.iter().any(|f| !(*f > 20.0 && *f < 18_000.0)) {
            return Err(Error::invalid("kit frequencies must lie in (20, 18000) Hz"));
        }
        if !(0.0..=1.0).contains(&self.snare.noise_mix) {
            return Err(Error::invalid("snare noise mix must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Per-step velocities; zero means no hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub kick: [f32; STEPS],
    pub snare: [f32; STEPS],
    pub hat: [f32; STEPS],
}

impl PatternSpec {
    pub fn empty() -> Self {
        Self {
            kick: [0.0; STEPS],
            snare: [0.0; STEPS],
            hat: [0.0; STEPS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.kick.iter().chain(&self.snare).chain(&self.hat);
        if all.clone().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("step velocities must lie in [0, 1]"));
        }
        if all.clone().all(|&v| v == 0.0) {
            return Err(Error::invalid("pattern has no onsets"));
        }
        Ok(())
    }
}

/// First sample of each step in a bar of `total` samples.
pub fn step_starts(total: usize) -> [usize; STEPS + 1] {
    let mut out = [0; STEPS + 1];
    for (i, s) in out.iter_mut().enumerate() {
        *s = i * total / STEPS;
    }
    out
}

fn uniform_noise(rng: &mut Rng) -> f64 {
    rng.gen::<f64>() * 2.0 - 1.0
}

#[derive(Clone, Copy)]
enum Voice {
    Kick,
    Snare,
    Hat,
}

fn render_hit(out: &mut [f64], voice: Voice, kit: &KitSpec, velocity: f64, noise: &mut Rng) {
    let sr = CANONICAL_RATE as f64;
    match voice {
        Voice::Kick => {
            let k = kit.kick;
            let glide = k.decay / 4.0;
            let (step_env, step_glide) = ((-1.0 / (sr * k.decay)).exp(), (-1.0 / (sr * glide)).exp());
            let (mut env, mut g) = (velocity, 1.0);
            for (n, o) in out.iter_mut().enumerate() {
                let t = n as f64 / sr;
                let phase = 2.0 * PI * (k.pitch_end * t + (k.pitch_start - k.pitch_end) * glide * (1.0 - g));
                *o += env * phase.sin();
                env *= step_env;
                g *= step_glide;
            }
        }
        Voice::Snare => {
            let s = kit.snare;
            let step_env = (-1.0 / (sr * s.decay)).exp();
            let mut env = velocity;
            for (n, o) in out.iter_mut().enumerate() {
                let tone = (2.0 * PI * s.tone * n as f64 / sr).sin();
                let body = (1.0 - s.noise_mix) * tone + s.noise_mix * uniform_noise(noise);
                *o += env * body;
                env *= step_env;
            }
        }
        Voice::Hat => {
            let h = kit.hat;
            let rc = 1.0 / (2.0 * PI * h.cutoff);
            let a = rc / (rc + 1.0 / sr);
            let step_env = (-1.0 / (sr * h.decay)).exp();
            let mut env = 0.6 * velocity;
            let (mut prev_x, mut prev_y) = (0.0, 0.0);
            for o in out.iter_mut() {
                let x = uniform_noise(noise);
                let y = a * (prev_y + x - prev_x);
                prev_x = x;
                prev_y = y;
                *o += env * y;
                env *= step_env;
            }
        }
    }
}

/// Renders one bar of `total` samples at 44.1 kHz.
pub fn synth_bar_with_length(kit: &KitSpec, pattern: &PatternSpec, noise_seed: u64, total: usize) -> Result<AudioClip> {
    kit.validate()?;
    pattern.validate()?;
    if total < STEPS {
        return Err(Error::invalid("bar must span at least one sample per step"));
    }
    let starts = step_starts(total);
    let mut mix = vec![0.0f64; total];
    let voices = [
        (Voice::Kick, &pattern.kick, kit.kick.decay),
        (Voice::Snare, &pattern.snare, kit.snare.decay),
        (Voice::Hat, &pattern.hat, kit.hat.decay),
    ];
    for (v, (voice, steps, decay)) in voices.iter().enumerate() {
        let tail = (6.0 * decay * CANONICAL_RATE as f64).ceil() as usize;
        for (step, &velocity) in steps.iter().enumerate() {
            if velocity == 0.0 {
                continue;
            }
            let start = starts[step];
            let end = (start + tail).min(total);
            let mut noise = rng::stream(noise_seed, (v * STEPS + step) as u64);
            render_hit(&mut mix[start..end], *voice, kit, velocity as f64, &mut noise);
        }
    }
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { PEAK / peak } else { 0.0 };
    AudioClip::new(mix.iter().map(|v| (v * gain) as f32).collect(), CANONICAL_RATE)
}

/// One 2-second bar at 120 BPM.
pub fn synth_bar(kit: &KitSpec, pattern: &PatternSpec, noise_seed: u64) -> Result<AudioClip> {
    synth_bar_with_length(kit, pattern, noise_seed, BAR_SAMPLES)
}

pub fn random_kit(rng: &mut Rng) -> KitSpec {
    KitSpec {
        kick: KickSpec {
            pitch_start: rng.gen_range(100.0..300.0),
            pitch_end: rng.gen_range(40.0..70.0),
            decay: rng.gen_range(0.1..0.5),
        },
        snare: SnareSpec {
            tone: rng.gen_range(150.0..300.0),
            noise_mix: rng.gen_range(0.3..0.9),
            decay: rng.gen_range(0.05..0.3),
        },
        hat: HatSpec {
            cutoff: rng.gen_range(5_000.0..12_000.0),
            decay: rng.gen_range(0.01..0.15),
        },
    }
}

pub fn random_pattern(rng: &mut Rng) -> PatternSpec {
    let mut p = PatternSpec::empty();
    for step in 0..STEPS {
        let kick_p = if step == 0 { 0.8 } else { 0.3 };
        let snare_p = if step == 4 || step == 12 { 0.7 } else { 0.2 };
        let mut draw = |prob: f64| -> f32 {
            if rng.gen_bool(prob) {
                rng.gen_range(0.5f32..=1.0)
            } else {
                0.0
            }
        };
        p.kick[step] = draw(kick_p);
        p.snare[step] = draw(snare_p);
        p.hat[step] = draw(0.5);
    }
    if p.validate().is_err() {
        p.kick[0] = 1.0;
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diversity {
    /// One kit and one pattern for every loop.
    Collapsed,
    /// Four kits crossed with four patterns.
    Low,
    /// Fresh kit and pattern per loop.
    High,
}

impl fmt::Display for Diversity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Diversity::Collapsed => "collapsed",
            Diversity::Low => "low",
            Diversity::High => "high",
        })
    }
}

impl FromStr for Diversity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collapsed" => Ok(Diversity::Collapsed),
            "low" => Ok(Diversity::Low),
            "high" => Ok(Diversity::High),
            other => Err(Error::invalid(format!(
                "unknown diversity {other:?} (expected collapsed, low or high)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub file: String,
    pub kit: KitSpec,
    pub pattern: PatternSpec,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub count: usize,
    pub diversity: Diversity,
    pub seed: u64,
    pub loops: Vec<LoopRecord>,
}

/// Kit, pattern and noise seed of every loop in a set, without rendering.
pub fn plan_set(count: usize, diversity: Diversity, seed: u64) -> Vec<(KitSpec, PatternSpec, u64)> {
    let mut master = rng::seeded(seed);
    match diversity {
        Diversity::Collapsed => {
            let kit = random_kit(&mut master);
            let pattern = random_pattern(&mut master);
            let noise = master.next_u64();
            vec![(kit, pattern, noise); count]
        }
        Diversity::Low => {
            let kits: Vec<KitSpec> = (0..4).map(|_| random_kit(&mut master)).collect();
            let patterns: Vec<PatternSpec> = (0..4).map(|_| random_pattern(&mut master)).collect();
            let noises: Vec<u64> = (0..16).map(|_| master.next_u64()).collect();
            (0..count)
                .map(|i| {
                    let mut r = rng::stream(seed, i as u64);
                    let (k, p) = (r.gen_range(0..4), r.gen_range(0..4));
                    (kits[k], patterns[p], noises[k * 4 + p])
                })
                .collect()
        }
        Diversity::High => (0..count)
            .map(|i| {
                let mut r = rng::stream(seed, i as u64);
                let kit = random_kit(&mut r);
                let pattern = random_pattern(&mut r);
                (kit, pattern, r.next_u64())
            })
            .collect(),
    }
}

/// Writes `count` loops as `loop_NNNNN.wav` plus `manifest.json` into `out_dir`.
pub fn generate_set(count: usize, diversity: Diversity, seed: u64, out_dir: &Path) -> Result<SynthManifest> {
    if count == 0 {
        return Err(Error::invalid("loop count must be at least 1"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let plan = plan_set(count, diversity, seed);
    let indexed: Vec<(usize, (KitSpec, PatternSpec, u64))> = plan.into_iter().enumerate().collect();
    let loops = par::try_map(&indexed, |(i, (kit, pattern, noise_seed))| {
        let file = format!("loop_{i:05}.wav");
        let clip = synth_bar(kit, pattern, *noise_seed)?;
        audio_io::write_wav(&clip, out_dir.join(&file))?;
        Ok::<_, Error>(LoopRecord {
            file,
            kit: *kit,
            pattern: *pattern,
            noise_seed: *noise_seed,
        })
    })?;
    let manifest = SynthManifest {
        count,
        diversity,
        seed,
        loops,
    };
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kit() -> KitSpec {
        random_kit(&mut rng::seeded(1))
    }

    #[test]
    fn empty_pattern_rejected() {
        assert!(synth_bar(&kit(), &PatternSpec::empty(), 0).is_err());
        let mut bad = kit();
        bad.kick.decay = 0.8;
        let mut p = PatternSpec::empty();
        p.kick[0] = 1.0;
        assert!(synth_bar(&bad, &p, 0).is_err());
    }

    #[test]
    fn steps_alternate_and_sum_exactly() {
        let s = step_starts(BAR_SAMPLES);
        assert_eq!(s[STEPS], BAR_SAMPLES);
        let widths: Vec<usize> = s.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(widths.iter().all(|&w| w == 5512 || w == 5513));
        assert!(widths.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn single_kick_decays() {
        let mut p = PatternSpec::empty();
        p.kick[0] = 1.0;
        let k = KitSpec {
            kick: KickSpec { pitch_start: 200.0, pitch_end: 50.0, decay: 0.5 },
            ..kit()
        };
        let clip = synth_bar(&k, &p, 3).unwrap();
        assert_eq!(clip.len(), BAR_SAMPLES);
        let quarter = 11_025;
        let energy = |s: &[f32]| s.iter().map(|v| (*v as f64).powi(2)).sum::<f64>();
        assert!(energy(&clip.samples[..quarter]) > 10.0 * energy(&clip.samples[BAR_SAMPLES - quarter..]));
        let peak = clip.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 0.9).abs() < 1e-6);
    }

    #[test]
    fn rendering_is_deterministic() {
        let p = random_pattern(&mut rng::seeded(2));
        assert_eq!(synth_bar(&kit(), &p, 5).unwrap(), synth_bar(&kit(), &p, 5).unwrap());
        assert_ne!(synth_bar(&kit(), &p, 5).unwrap(), synth_bar(&kit(), &p, 6).unwrap());
    }

    #[test]
    fn set_plans() {
        let collapsed = plan_set(10, Diversity::Collapsed, 7);
        assert!(collapsed.windows(2).all(|w| w[0] == w[1]));
        let low = plan_set(200, Diversity::Low, 7);
        let mut combos: Vec<String> = low.iter().map(|c| format!("{:?}", c)).collect();
        combos.sort();
        combos.dedup();
        assert!(combos.len() <= 16 && combos.len() > 8);
        assert_eq!(plan_set(50, Diversity::High, 3), plan_set(50, Diversity::High, 3));
        assert!("medium".parse::<Diversity>().is_err());
        assert_eq!("low".parse::<Diversity>().unwrap(), Diversity::Low);
    }
}
