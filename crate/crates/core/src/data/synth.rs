//! Synthetic footstep-pressure cohorts.
//!
//! Every subject gets a persistent gait signature (footprint size, load,
//! walking speed, cadence, stance width, freezing tremor) and a freezing
//! propensity. All of these deviate from the population mean in proportion
//! to `subject_nuisance_amplitude`, so at amplitude zero the subjects are
//! identically distributed. Trials render alternating footprints with a
//! heel-to-toe load roll, translating along the mat (positions wrap, like a
//! treadmill view). Freezing episodes blend in a near-stationary pattern of
//! both feet planted with a trembling weight shift, weighted by
//! `fog_signal_strength`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sequence::{Cohort, PressureSequence, TrialId};
use crate::error::{AstnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    pub width: usize,
    pub height: usize,
    pub sample_rate: usize,
    pub min_seconds: usize,
    pub max_seconds: usize,
    pub subject_nuisance_amplitude: f64,
    pub fog_episode_rate: f64,
    /// Log-scale spread of per-subject freezing frequency, per unit of
    /// nuisance amplitude.
    pub fog_propensity_spread: f64,
    pub fog_signal_strength: f64,
    pub noise_sigma: f64,
    /// Discrete force levels of the simulated mat; 0 disables quantization.
    pub levels: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 12,
            trials_per_subject: 6,
            width: 32,
            height: 16,
            sample_rate: 12,
            min_seconds: 20,
            max_seconds: 60,
            subject_nuisance_amplitude: 1.0,
            fog_episode_rate: 0.228,
            fog_propensity_spread: 0.5,
            fog_signal_strength: 0.6,
            noise_sigma: 0.05,
            levels: 10,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AstnError::Config(m));
        if self.n_subjects == 0 || self.trials_per_subject == 0 {
            return bad("need at least one subject and one trial".into());
        }
        if self.width < 4 || self.height < 4 || self.sample_rate == 0 {
            return bad(format!(
                "grid {}×{} at {} Hz too small",
                self.width, self.height, self.sample_rate
            ));
        }
        if self.min_seconds == 0 || self.min_seconds > self.max_seconds {
            return bad(format!("bad trial length range {}..={}", self.min_seconds, self.max_seconds));
        }
        if !(self.fog_episode_rate > 0.0 && self.fog_episode_rate < 1.0) {
            return bad(format!("fog_episode_rate {} outside (0,1)", self.fog_episode_rate));
        }
        for (name, v) in [
            ("subject_nuisance_amplitude", self.subject_nuisance_amplitude),
            ("fog_signal_strength", self.fog_signal_strength),
            ("fog_propensity_spread", self.fog_propensity_spread),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.levels == 1 {
            return bad("levels must be 0 (continuous) or >= 2".into());
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; derives independent stream seeds.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct GaitSignature {
    foot_len: f64,
    foot_width: f64,
    load: f64,
    speed: f64,
    cadence: f64,
    stance_width: f64,
    tremor_hz: f64,
    tremor_depth: f64,
    fog_propensity: f64,
}

fn clipped_normal(rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z.clamp(-2.0, 2.0)
}

impl GaitSignature {
    fn draw(cfg: &SynthConfig, subject: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x5B, subject as u64]));
        let a = cfg.subject_nuisance_amplitude;
        let mut dev = |k: f64| (1.0 + a * k * clipped_normal(&mut rng)).max(0.2);
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let foot_len = 0.2 * w * dev(0.25);
        let foot_width = 0.14 * h * dev(0.25);
        let load = 0.55 * dev(0.3);
        let speed = 0.9 * w * dev(0.3);
        let cadence = 1.8 * dev(0.2);
        let stance_width = 0.22 * h * dev(0.3);
        let tremor_hz = 4.5 * dev(0.2);
        let tremor_depth = (0.7 * dev(0.4)).min(1.0);
        let z = clipped_normal(&mut rng);
        let spread = cfg.fog_propensity_spread * a;
        GaitSignature {
            foot_len,
            foot_width,
            load,
            speed,
            cadence,
            stance_width,
            tremor_hz,
            tremor_depth,
            fog_propensity: (spread * z - 0.5 * spread * spread).exp(),
        }
    }
}

const MEAN_EPISODE_SECONDS: f64 = 3.5;

/// Frame-level freezing mask with multi-second episodes. The walking gaps
/// are sized so the per-second positive rate (which counts partially
/// covered seconds) lands near `rate`.
fn episode_mask(rng: &mut ChaCha8Rng, frames: usize, sample_rate: usize, rate: f64) -> Vec<u8> {
    let mut mask = vec![0u8; frames];
    if rate <= 0.0 {
        return mask;
    }
    let p = sample_rate as f64;
    let mean_walk = (MEAN_EPISODE_SECONDS + 1.3) * (1.0 - rate) / rate;
    let walk = Exp::new(1.0 / mean_walk.max(0.25)).expect("positive rate");
    // start at a random point of the walk/episode renewal cycle
    let mut k = 0usize;
    let mut in_progress = rng.random_bool(MEAN_EPISODE_SECONDS / (MEAN_EPISODE_SECONDS + mean_walk));
    if !in_progress {
        let gap: f64 = walk.sample(rng);
        k = (gap * p) as usize;
    }
    while k < frames {
        let mut len = (rng.random_range(2.0..5.0) * p) as usize;
        if std::mem::take(&mut in_progress) {
            len = rng.random_range(1..=len);
        }
        let end = (k + len).min(frames);
        mask[k..end].iter_mut().for_each(|v| *v = 1);
        let gap: f64 = walk.sample(rng);
        k = end + ((gap.max(1.0)) * p) as usize;
    }
    mask
}

#[inline]
fn gauss(d: f64, sigma: f64) -> f64 {
    (-0.5 * (d / sigma).powi(2)).exp()
}

/// Shortest signed distance on a ring of length `len`.
#[inline]
fn ring_delta(a: f64, b: f64, len: f64) -> f64 {
    let mut d = (a - b) % len;
    if d > len / 2.0 {
        d -= len;
    } else if d < -len / 2.0 {
        d += len;
    }
    d
}

struct FootPrint {
    x: f64,
    y: f64,
    load: f64,
    roll: f64,
}

fn stamp(frame: &mut [f64], w: usize, h: usize, sig: &GaitSignature, foot: &FootPrint) {
    let wl = w as f64;
    // static footprint plus a moving heel-to-toe pressure centre
    let centre = foot.x + (foot.roll - 0.5) * 0.7 * sig.foot_len;
    let sx = sig.foot_len / 2.5;
    let sc = sig.foot_len / 5.0;
    let sy = sig.foot_width / 2.0;
    for i in 0..w {
        let dx = ring_delta(i as f64, foot.x, wl);
        let dc = ring_delta(i as f64, centre, wl);
        let gx = 0.5 * gauss(dx, sx) + 0.6 * (std::f64::consts::PI * foot.roll).sin() * gauss(dc, sc);
        if gx < 1e-4 {
            continue;
        }
        for j in 0..h {
            let gy = gauss(j as f64 - foot.y, sy);
            frame[i * h + j] += foot.load * gx * gy;
        }
    }
}

fn render_trial(cfg: &SynthConfig, sig: &GaitSignature, id: TrialId) -> Result<PressureSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x7A, id.subject as u64, id.trial as u64]));
    let (w, h, p) = (cfg.width, cfg.height, cfg.sample_rate);
    let seconds = rng.random_range(cfg.min_seconds..=cfg.max_seconds);
    let frames = seconds * p;
    let rate = (cfg.fog_episode_rate * sig.fog_propensity).clamp(0.0, 0.8);
    let mask = episode_mask(&mut rng, frames, p, rate);

    // per-trial jitter that does not identify the subject
    let speed = sig.speed * rng.random_range(0.92..1.08);
    let cadence = sig.cadence * rng.random_range(0.94..1.06);
    let step_len = speed / cadence;
    let mut body_x = rng.random_range(0.0..w as f64);
    let mut phase: f64 = rng.random_range(0.0..2.0);
    let tremor_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mid = (h as f64 - 1.0) / 2.0;
    let mix = cfg.fog_signal_strength.min(1.0);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(1e-12)).expect("valid sigma");

    let mut out = Vec::with_capacity(frames * w * h);
    let mut walk = vec![0.0; w * h];
    let mut freeze = vec![0.0; w * h];
    let mut landing = vec![body_x; 2];
    let mut last_step = phase.floor() as i64;
    for (k, &fog) in mask.iter().enumerate() {
        let tau = k as f64 / p as f64;
        let alpha = if fog == 1 { mix } else { 0.0 };
        let slow = 1.0 - 0.85 * alpha;
        body_x += speed * slow / p as f64;
        phase += cadence * (1.0 - 0.6 * alpha) / p as f64;
        let step = phase.floor() as i64;
        if step != last_step {
            landing[(step.rem_euclid(2)) as usize] = body_x + 0.5 * step_len;
            last_step = step;
        }
        let u = phase - phase.floor();

        walk.iter_mut().for_each(|v| *v = 0.0);
        let side = |s: i64| if s.rem_euclid(2) == 0 { mid - sig.stance_width } else { mid + sig.stance_width };
        stamp(
            &mut walk,
            w,
            h,
            sig,
            &FootPrint {
                x: landing[(step.rem_euclid(2)) as usize],
                y: side(step),
                load: sig.load,
                roll: u / 1.25,
            },
        );
        if u < 0.25 {
            stamp(
                &mut walk,
                w,
                h,
                sig,
                &FootPrint {
                    x: landing[((step - 1).rem_euclid(2)) as usize],
                    y: side(step - 1),
                    load: sig.load * (1.0 - u / 0.25),
                    roll: (1.0 + u) / 1.25,
                },
            );
        }

        if alpha > 0.0 {
            freeze.iter_mut().for_each(|v| *v = 0.0);
            let shift = (std::f64::consts::TAU * sig.tremor_hz * tau + tremor_phase).sin();
            let left = 0.5 + 0.5 * sig.tremor_depth * shift;
            for (y, share) in [(mid - 0.7 * sig.stance_width, left), (mid + 0.7 * sig.stance_width, 1.0 - left)] {
                stamp(
                    &mut freeze,
                    w,
                    h,
                    sig,
                    &FootPrint {
                        x: body_x + 0.3 * shift,
                        y,
                        load: sig.load * (0.35 + 0.9 * share),
                        roll: 0.5,
                    },
                );
            }
        }

        for i in 0..w * h {
            let clean = (1.0 - alpha) * walk[i] + alpha * freeze[i];
            let mut v = clean;
            if cfg.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            v = v.clamp(0.0, 1.0);
            if cfg.levels >= 2 {
                let top = (cfg.levels - 1) as f64;
                v = (v * top).round() / top;
            }
            out.push(v as f32);
        }
    }
    PressureSequence::new(id, w, h, p, out, mask)
}

/// Renders a whole cohort. Trials are seeded independently from
/// `(seed, subject, trial)`, so the result does not depend on rendering
/// order or thread count.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<Cohort> {
    cfg.validate()?;
    let signatures: Vec<GaitSignature> = (0..cfg.n_subjects as u32).map(|m| GaitSignature::draw(cfg, m)).collect();
    let ids: Vec<TrialId> = (0..cfg.n_subjects as u32)
        .flat_map(|m| (0..cfg.trials_per_subject as u32).map(move |n| TrialId::new(m, n)))
        .collect();
    let sequences: Result<Vec<PressureSequence>> = ids
        .par_iter()
        .map(|&id| render_trial(cfg, &signatures[id.subject as usize], id))
        .collect();
    Cohort::new(sequences?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_subjects: 3,
            trials_per_subject: 2,
            width: 16,
            height: 8,
            sample_rate: 6,
            min_seconds: 5,
            max_seconds: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn values_stay_in_unit_interval() {
        let c = generate_cohort(&SynthConfig {
            noise_sigma: 0.5,
            ..small()
        })
        .unwrap();
        assert!(c.sequences().iter().all(|s| s.frames().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn same_seed_same_cohort() {
        let a = generate_cohort(&small()).unwrap();
        let b = generate_cohort(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_cohort(&SynthConfig { seed: 9, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_nuisance_gives_identical_signatures() {
        let cfg = SynthConfig {
            subject_nuisance_amplitude: 0.0,
            ..small()
        };
        let a = GaitSignature::draw(&cfg, 0);
        let b = GaitSignature::draw(&cfg, 5);
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(SynthConfig { fog_episode_rate: 0.0, ..small() }.validate().is_err());
        assert!(SynthConfig { min_seconds: 9, max_seconds: 3, ..small() }.validate().is_err());
        assert!(SynthConfig { noise_sigma: -1.0, ..small() }.validate().is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(3, &[4]), derive_seed(3, &[4]));
    }
}
