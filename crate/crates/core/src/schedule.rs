//! Cosine-cap noise schedule, forward noising and the deterministic
//! x0-parameterized sampler.

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const MAX_BETA: f64 = 0.999;
const COSINE_OFFSET: f64 = 0.008;

/// `alpha_bar[k]` for `k = 0..=K` and `beta[k]` for `k = 1..=K` (`beta[0] = 0`).
///
/// `alpha_bar` is the cumulative product of `1 - beta`, so the capped betas
/// and the table stay consistent and `alpha_bar[K] > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    alpha_bar: Vec<T>,
    beta: Vec<T>,
}

fn cosine_alpha_bar(t: f64) -> f64 {
    let c = ((t + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos();
    c * c
}

impl<T: Real> NoiseSchedule<T> {
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        let k = steps as f64;
        let mut beta = vec![T::zero(); steps + 1];
        let mut alpha_bar = vec![T::one(); steps + 1];
        let mut cum = 1.0f64;
        for t in 1..=steps {
            let b = (1.0 - cosine_alpha_bar(t as f64 / k) / cosine_alpha_bar((t - 1) as f64 / k)).min(MAX_BETA);
            cum *= 1.0 - b;
            beta[t] = T::lit(b);
            alpha_bar[t] = T::lit(cum);
        }
        Ok(Self { alpha_bar, beta })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, k: usize) -> T {
        self.alpha_bar[k]
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bar
    }

    pub fn beta(&self, k: usize) -> T {
        self.beta[k]
    }

    /// `sqrt(ᾱ_k)` and `sqrt(1 - ᾱ_k)`.
    pub fn coefficients(&self, k: usize) -> (T, T) {
        let a = self.alpha_bar[k];
        (a.sqrt(), (T::one() - a).sqrt())
    }

    /// `z_k = sqrt(ᾱ_k)·z0 + sqrt(1-ᾱ_k)·ε`.
    pub fn add_noise(&self, z0: &[T], k: usize, eps: &[T]) -> Result<Vec<T>> {
        if k == 0 || k > self.steps() {
            return Err(Error::InvalidArgument(format!("diffusion step {k} outside 1..={}", self.steps())));
        }
        if z0.len() != eps.len() {
            return Err(Error::DimensionMismatch("noise shape differs from latent shape".into()));
        }
        let (s, n) = self.coefficients(k);
        Ok(z0.iter().zip(eps).map(|(&z, &e)| s * z + n * e).collect())
    }

    /// Clean-latent estimate from a noise prediction.
    pub fn x0_from_eps(&self, zk: &[T], k: usize, eps: &[T]) -> Vec<T> {
        let (s, n) = self.coefficients(k);
        zk.iter().zip(eps).map(|(&z, &e)| (z - n * e) / s).collect()
    }
}

/// Evenly strided descending sub-schedule of `sample_steps` steps starting at `K`.
pub fn sampling_timesteps(train_steps: usize, sample_steps: usize) -> Result<Vec<usize>> {
    if sample_steps == 0 || sample_steps > train_steps {
        return Err(Error::InvalidArgument(format!("sampler steps {sample_steps} outside 1..={train_steps}")));
    }
    Ok((0..sample_steps).map(|i| train_steps * (sample_steps - i) / sample_steps).collect())
}

/// A model that predicts the clean latent from a noisy one.
///
/// The latent representation is up to the implementor; `combine` supplies
/// the only arithmetic the sampler needs.
pub trait Denoiser {
    type Latent: Clone;
    type Error: From<Error>;

    fn predict_x0(&mut self, z: &Self::Latent, step: usize) -> std::result::Result<Self::Latent, Self::Error>;

    /// `a·x + b·y`.
    fn combine(&self, a: f64, x: &Self::Latent, b: f64, y: &Self::Latent) -> std::result::Result<Self::Latent, Self::Error>;
}

/// Deterministic (η = 0) DDIM sampling with x0 prediction.
///
/// Starts from `noise` at step `K` and returns the final clean-latent prediction.
pub fn sample<D: Denoiser, T: Real>(
    denoiser: &mut D,
    schedule: &NoiseSchedule<T>,
    noise: D::Latent,
    sample_steps: usize,
) -> std::result::Result<D::Latent, D::Error> {
    let steps = sampling_timesteps(schedule.steps(), sample_steps)?;
    let mut z = noise;
    for (i, &k) in steps.iter().enumerate() {
        let x0 = denoiser.predict_x0(&z, k)?;
        let Some(&next) = steps.get(i + 1) else {
            return Ok(x0);
        };
        let (sk, nk) = schedule.coefficients(k);
        let (sn, nn) = schedule.coefficients(next);
        let (sk, nk, sn, nn) = (sk.as_f64(), nk.as_f64(), sn.as_f64(), nn.as_f64());
        // z_next = sn·x0 + nn·(z - sk·x0)/nk
        z = denoiser.combine(sn - nn * sk / nk, &x0, nn / nk, &z)?;
    }
    unreachable!("sampling_timesteps returns at least one step")
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<f64>);

    impl Denoiser for Fixed {
        type Latent = Vec<f64>;
        type Error = Error;
        fn predict_x0(&mut self, _z: &Vec<f64>, _k: usize) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
        fn combine(&self, a: f64, x: &Vec<f64>, b: f64, y: &Vec<f64>) -> Result<Vec<f64>> {
            Ok(x.iter().zip(y).map(|(x, y)| a * x + b * y).collect())
        }
    }

    #[test]
    fn schedule_is_monotone_and_capped() {
        let s = NoiseSchedule::<f64>::cosine(1000).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!((1..=1000).all(|k| s.beta(k) > 0.0 && s.beta(k) <= MAX_BETA));
        assert!(s.alpha_bar(1000) < 1e-3);
        assert!(s.alpha_bar(1000) > 0.0);
    }

    #[test]
    fn timesteps_are_even_and_descending() {
        assert_eq!(sampling_timesteps(1000, 5).unwrap(), vec![1000, 800, 600, 400, 200]);
        assert_eq!(sampling_timesteps(1000, 1).unwrap(), vec![1000]);
        let all = sampling_timesteps(1000, 1000).unwrap();
        assert_eq!(all.first(), Some(&1000));
        assert_eq!(all.last(), Some(&1));
        assert!(sampling_timesteps(10, 11).is_err());
        assert!(sampling_timesteps(10, 0).is_err());
    }

    #[test]
    fn add_noise_edges() {
        let s = NoiseSchedule::<f64>::cosine(1000).unwrap();
        let z0 = vec![0.5, -1.0, 2.0];
        let out = s.add_noise(&z0, 10, &[0.0; 3]).unwrap();
        for (o, z) in out.iter().zip(&z0) {
            assert_eq!(*o, s.alpha_bar(10).sqrt() * z);
        }
        assert!(s.add_noise(&z0, 0, &[0.0; 3]).is_err());
        assert!(s.add_noise(&z0, 1001, &[0.0; 3]).is_err());
        let eps = vec![0.3, 0.1, -0.2];
        let zk = s.add_noise(&z0, 500, &eps).unwrap();
        for (a, b) in s.x0_from_eps(&zk, 500, &eps).iter().zip(&z0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn add_noise_moments() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let s = NoiseSchedule::<f64>::cosine(1000).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000;
        let z0 = 1.5;
        for k in [50, 500, 950] {
            let eps: Vec<f64> = (0..draws).map(|_| StandardNormal.sample(&mut rng)).collect();
            let zk = s.add_noise(&vec![z0; draws], k, &eps).unwrap();
            let mean = zk.iter().sum::<f64>() / draws as f64;
            let var = zk.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / draws as f64;
            let (sa, sn) = s.coefficients(k);
            let want_mean = sa * z0;
            assert!((mean - want_mean).abs() <= 0.02 * want_mean.abs().max(sn), "mean at {k}: {mean} vs {want_mean}");
            assert!((var.sqrt() - sn).abs() <= 0.02 * sn, "std at {k}: {} vs {sn}", var.sqrt());
        }
    }

    #[test]
    fn fixed_prediction_is_a_fixed_point() {
        let s = NoiseSchedule::<f64>::cosine(1000).unwrap();
        let target = vec![0.25, -0.5, 1.5, 3.0];
        for steps in [1, 2, 5, 50, 1000] {
            let out = sample(&mut Fixed(target.clone()), &s, vec![0.7, -0.1, 0.0, 2.0], steps).unwrap();
            assert_eq!(out, target);
        }
    }

    /// Knows the true noise and reconstructs x0 from it; the DDIM trajectory
    /// must then stay on the forward-process line through z0 and ε.
    struct KnowsNoise {
        schedule: NoiseSchedule<f64>,
        eps: Vec<f64>,
        seen: Vec<(usize, Vec<f64>)>,
    }

    impl Denoiser for KnowsNoise {
        type Latent = Vec<f64>;
        type Error = Error;
        fn predict_x0(&mut self, z: &Vec<f64>, k: usize) -> Result<Vec<f64>> {
            self.seen.push((k, z.clone()));
            Ok(self.schedule.x0_from_eps(z, k, &self.eps))
        }
        fn combine(&self, a: f64, x: &Vec<f64>, b: f64, y: &Vec<f64>) -> Result<Vec<f64>> {
            Ok(x.iter().zip(y).map(|(x, y)| a * x + b * y).collect())
        }
    }

    #[test]
    fn ddim_update_follows_forward_process() {
        let schedule = NoiseSchedule::<f64>::cosine(1000).unwrap();
        let z0 = vec![0.4, -0.2, 0.9];
        let eps = vec![1.0, -0.5, 0.25];
        let start = schedule.add_noise(&z0, 1000, &eps).unwrap();
        let mut d = KnowsNoise { schedule: schedule.clone(), eps: eps.clone(), seen: vec![] };
        let out = sample(&mut d, &schedule, start, 4).unwrap();
        for (a, b) in out.iter().zip(&z0) {
            assert!((a - b).abs() < 1e-6);
        }
        for (k, z) in &d.seen {
            let expect = schedule.add_noise(&z0, *k, &eps).unwrap();
            for (a, b) in z.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-9, "step {k}");
            }
        }
    }
}
