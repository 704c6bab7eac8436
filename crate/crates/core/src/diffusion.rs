//! Diffusion on the coordinate latent: noise schedule, closed-form forward
//! marginal, the conditional noise predictor and the ancestral sampler.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::egnn::{EdgeIndex, Egnn, EgnnConfig};
use crate::error::{Error, Result};
use crate::latent::{CrossAttentionStack, EdgeBuilder, LatentConfig, NodeInjector};
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const BETA_MIN: f64 = 1e-5;
pub const BETA_MAX: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `α̃_t = (1 − (t/T)²)²`.
    Polynomial,
}

/// Tables indexed by `t = 0..=T`; entry 0 is the clean state.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub rho: Vec<f64>,
}

/// β from ratios of the target cumulative curve, clipped, with `α` rebuilt
/// as the product of `1 − β` so the two tables stay consistent.
pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::Config("diffusion needs at least one step".into()));
    }
    let target = |t: usize| match kind {
        ScheduleKind::Polynomial => {
            let u = t as f64 / steps as f64;
            (1.0 - u * u).powi(2)
        }
    };
    let mut beta = vec![0.0; steps + 1];
    let mut alpha = vec![1.0; steps + 1];
    for t in 1..=steps {
        let prev = target(t - 1);
        let ratio = if prev > 0.0 { target(t) / prev } else { 0.0 };
        beta[t] = (1.0 - ratio).clamp(BETA_MIN, BETA_MAX);
        alpha[t] = alpha[t - 1] * (1.0 - beta[t]);
    }
    let rho = beta.iter().map(|b| b.sqrt()).collect();
    Ok(NoiseSchedule {
        steps,
        beta,
        alpha,
        rho,
    })
}

impl NoiseSchedule {
    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::Usage(format!("step {t} outside 0..={}", self.steps)));
        }
        Ok(())
    }
}

/// Standard normal `N×3` noise projected to zero centre of mass.
pub fn centered_noise<R: Rng + ?Sized>(atoms: usize, rng: &mut R) -> Tensor {
    let data = (0..atoms * 3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(vec![atoms, 3], data).expect("noise shape").centered()
}

/// `√α_t·z₀ + √(1 − α_t)·ε`.
pub fn forward_sample(z0: &Tensor, t: usize, schedule: &NoiseSchedule, eps: &Tensor) -> Result<Tensor> {
    schedule.check(t)?;
    if z0.shape() != eps.shape() {
        return Err(Error::dim("latent and noise shapes differ"));
    }
    let a = schedule.alpha[t];
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(z0.zip_map(eps, |z, e| sa * z + sn * e))
}

/// One reverse step `z^{t−1} = (z^t − β/√(1−α)·ε̂)/√(1−β) + ρ·noise`; the
/// noise term is dropped at `t = 1`.
pub fn reverse_step(
    z: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    noise: &Tensor,
) -> Result<Tensor> {
    schedule.check(t)?;
    if t == 0 {
        return Err(Error::Usage("reverse step from t = 0".into()));
    }
    let (b, a) = (schedule.beta[t], schedule.alpha[t]);
    let c = b / (1.0 - a).sqrt();
    let s = 1.0 / (1.0 - b).sqrt();
    let rho = if t > 1 { schedule.rho[t] } else { 0.0 };
    let mean = z.zip_map(eps_hat, |z, e| s * (z - c * e));
    Ok(mean.zip_map(noise, |m, n| m + rho * n).centered())
}

/// Sinusoidal embedding of the step index, `dim/2` frequencies.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let f = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out.push((t as f64 * f).sin());
        out.push((t as f64 * f).cos());
    }
    out.resize(dim, 0.0);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub time_dim: usize,
    pub node_dim: usize,
    pub egnn: EgnnConfig,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            time_dim: 32,
            node_dim: 32,
            egnn: EgnnConfig::default(),
        }
    }
}

/// Parameter-name prefix of the noise predictor.
pub const DENOISER_PREFIX: &str = "ldm";

/// `ε_θ(z_x^t, t, z_h, S)`: spectral injection into atoms and atom pairs, an
/// EGNN over the latent coordinates, and the coordinate displacement as the
/// noise estimate.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub nodes: NodeInjector,
    pub edge_builder: EdgeBuilder,
    pub edges: CrossAttentionStack,
    pub input: Linear,
    pub egnn: Egnn,
}

/// Prediction plus the per-layer attention maps (head-averaged).
pub struct DenoiserOutput {
    pub eps: Var,
    pub node_attention: Vec<Tensor>,
    pub edge_attention: Vec<Tensor>,
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        latent: &LatentConfig,
        spectral_dim: usize,
        config: &DenoiserConfig,
        rng: &mut R,
    ) -> Self {
        let p = DENOISER_PREFIX;
        let d = latent.atom_dim;
        Denoiser {
            nodes: NodeInjector {
                stack: CrossAttentionStack::new(
                    store,
                    &format!("{p}.inject_nodes"),
                    d,
                    spectral_dim,
                    latent.heads,
                    latent.inject_layers,
                    rng,
                ),
            },
            edge_builder: EdgeBuilder::new(store, &format!("{p}.edge_mlp"), d, latent.edge_dim, rng),
            edges: CrossAttentionStack::new(
                store,
                &format!("{p}.inject_edges"),
                latent.edge_dim,
                spectral_dim,
                latent.heads,
                latent.inject_layers,
                rng,
            ),
            input: Linear::new(
                store,
                &format!("{p}.input"),
                2 * d + config.time_dim,
                config.node_dim,
                rng,
            ),
            egnn: Egnn::new(
                store,
                &format!("{p}.egnn"),
                config.node_dim,
                latent.edge_dim,
                &config.egnn,
                rng,
            ),
            config: config.clone(),
        }
    }

    /// `z_t` must be zero-CoM; `z_h` are the atom-type embeddings and `s`
    /// the spectral features.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_t: Var,
        t: usize,
        z_h: Var,
        s: Var,
        edges: &EdgeIndex,
    ) -> Result<DenoiserOutput> {
        let n = edges.atoms;
        let (cond, node_attention) = self.nodes.forward(tape, store, z_h, s)?;
        let te = time_embedding(t, self.config.time_dim);
        let te: Vec<f64> = (0..n).flat_map(|_| te.iter().copied()).collect();
        let te = tape.leaf(Tensor::matrix(n, self.config.time_dim, te)?);
        let h = tape.concat_cols(&[cond, te])?;
        let h = self.input.forward(tape, store, h)?;
        let ze = self.edge_builder.forward(tape, store, z_t, z_h, edges)?;
        let (ze, edge_attention) = self.edges.forward(tape, store, ze, s)?;
        let (_, x) = self.egnn.forward(tape, store, h, z_t, edges, Some(ze))?;
        let d = tape.sub(x, z_t)?;
        Ok(DenoiserOutput {
            eps: tape.center(d),
            node_attention,
            edge_attention,
        })
    }
}

/// `(1/N)·Σ_i ‖ε_i − ε̂_i‖²`.
pub fn noise_loss(tape: &mut Tape, eps: Var, eps_hat: Var) -> Result<Var> {
    let n = tape.value(eps).rows().max(1) as f64;
    let d = tape.sub(eps, eps_hat)?;
    let d = tape.square(d);
    let s = tape.sum(d);
    Ok(tape.scale(s, 1.0 / n))
}

/// Single-sample estimate of the conditional denoising objective for one
/// molecule. `z0` enters as a constant.
#[allow(clippy::too_many_arguments)]
pub fn ldm_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    z0: &Tensor,
    z_h: Var,
    s: Var,
    edges: &EdgeIndex,
    rng: &mut R,
) -> Result<Var> {
    let t = rng.gen_range(1..=schedule.steps);
    let eps = centered_noise(z0.rows(), rng);
    let zt = tape.leaf(forward_sample(z0, t, schedule, &eps)?);
    let out = denoiser.forward(tape, store, zt, t, z_h, s, edges)?;
    let e = tape.leaf(eps);
    noise_loss(tape, e, out.eps)
}

/// Reverse trajectory from `z_T` down to `z_0` using `predict(z_t, t)`.
/// `on_step` sees every intermediate latent.
pub fn sample_latent<R, F>(
    atoms: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
    mut predict: F,
    mut on_step: impl FnMut(usize, &Tensor),
) -> Result<Tensor>
where
    R: Rng + ?Sized,
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
{
    let mut z = centered_noise(atoms, rng);
    on_step(schedule.steps, &z);
    for t in (1..=schedule.steps).rev() {
        let eps_hat = predict(&z, t)?;
        if !eps_hat.is_finite() {
            return Err(Error::Numeric {
                layer: t,
                what: "non-finite noise prediction".into(),
            });
        }
        let noise = centered_noise(atoms, rng);
        z = reverse_step(&z, &eps_hat, t, schedule, &noise)?;
        on_step(t - 1, &z);
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_endpoints() {
        let s = make_schedule(100, ScheduleKind::Polynomial).unwrap();
        assert_eq!(s.alpha[0], 1.0);
        assert!(s.alpha[100] <= 1e-4);
        for t in 1..=100 {
            assert!(s.alpha[t] < s.alpha[t - 1]);
            assert!((s.beta[t] - (1.0 - s.alpha[t] / s.alpha[t - 1])).abs() < 1e-12);
            assert!(s.beta[t] >= s.beta[t - 1]);
            assert!((BETA_MIN..=BETA_MAX).contains(&s.beta[t]));
            assert_eq!(s.rho[t], s.beta[t].sqrt());
        }
        assert!(make_schedule(0, ScheduleKind::Polynomial).is_err());
    }

    #[test]
    fn forward_sample_edges() {
        let s = make_schedule(10, ScheduleKind::Polynomial).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z0 = centered_noise(4, &mut rng);
        let eps = centered_noise(4, &mut rng);
        assert_eq!(forward_sample(&z0, 0, &s, &eps).unwrap(), z0);
        let zero = Tensor::zeros(&[4, 3]);
        let scaled = forward_sample(&z0, 5, &s, &zero).unwrap();
        assert!(scaled.max_abs_diff(&z0.scale(s.alpha[5].sqrt())) < 1e-15);
        assert!(forward_sample(&z0, 11, &s, &eps).is_err());
    }

    #[test]
    fn oracle_noise_inverts_one_step() {
        // At t = 1, α = 1 − β and β/√(1−α) = √β, so the step inverts exactly.
        let s = make_schedule(10, ScheduleKind::Polynomial).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z0 = centered_noise(5, &mut rng);
        let eps = centered_noise(5, &mut rng);
        let z1 = forward_sample(&z0, 1, &s, &eps).unwrap();
        let back = reverse_step(&z1, &eps, 1, &s, &Tensor::zeros(&[5, 3])).unwrap();
        assert!(back.max_abs_diff(&z0) < 1e-12);
    }

    #[test]
    fn time_embedding_shape() {
        let e = time_embedding(7, 32);
        assert_eq!(e.len(), 32);
        assert_eq!(e[0], 7f64.sin());
        assert_eq!(e[1], 7f64.cos());
    }

    #[test]
    fn loss_of_exact_and_zero_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eps = centered_noise(4, &mut rng);
        let mut t = Tape::new();
        let e = t.leaf(eps.clone());
        let l = noise_loss(&mut t, e, e).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
        let z = t.leaf(Tensor::zeros(&[4, 3]));
        let l = noise_loss(&mut t, e, z).unwrap();
        let hand: f64 = eps.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((t.value(l).item() - hand).abs() < 1e-14);
    }
}
