//! Mini-batch SGD with momentum and the epoch loop.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{loss_and_gradients, Batch, Gradients, LossBreakdown};
use super::params::{ModelParams, Variant};
use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::nn::{bilinear_resize, Layer, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSchedule {
    /// Single-domain batches, domains visited in turn.
    #[default]
    RoundRobin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight-decay coefficient λ.
    pub lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Square input extent, a multiple of the trunk's downsampling factor.
    pub working_resolution: usize,
    pub rng_seed: u64,
    pub domain_schedule: DomainSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-3,
            learning_rate: 2e-6,
            momentum: 0.9,
            batch_size: 8,
            epochs: 10,
            working_resolution: 64,
            rng_seed: 0,
            domain_schedule: DomainSchedule::RoundRobin,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.working_resolution == 0 || self.working_resolution % 4 != 0 {
            return Err(Error::Config(format!(
                "working_resolution {} must be a positive multiple of 4",
                self.working_resolution
            )));
        }
        Ok(())
    }
}

/// Loss figures from one optimisation step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub loss: LossBreakdown,
    pub per_sample_fidelity: Vec<f64>,
}

/// Momentum SGD: `v ← μ·v − η·(g + λ·w)`, `w ← w + v`, applied to the trunk
/// and the batch's head only.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub lambda: f64,
    velocity: ModelParams,
}

impl Sgd {
    pub fn new(params: &ModelParams, config: &TrainConfig) -> Self {
        Sgd {
            learning_rate: config.learning_rate,
            momentum: config.momentum,
            lambda: config.lambda,
            velocity: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, batch: &Batch, batch_index: usize) -> Result<StepRecord> {
        let (loss, per_sample, grads) = loss_and_gradients(params, batch, self.lambda)?;
        if !loss.total.is_finite() || !grads.is_finite() {
            return Err(Error::Training {
                batch: batch_index,
                message: format!("non-finite loss {}", loss.total),
            });
        }
        self.apply(params, &grads);
        Ok(StepRecord {
            loss,
            per_sample_fidelity: per_sample,
        })
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &Gradients) {
        let (mu, eta) = (self.momentum as f32, self.learning_rate as f32);
        let head = grads.head;
        let ModelParams { trunk, heads, .. } = params;
        let vel = &mut self.velocity;
        let targets = trunk.iter_mut().chain(heads[head].iter_mut());
        let velocities = vel.trunk.iter_mut().chain(vel.heads[head].iter_mut());
        for ((p, v), g) in targets.zip(velocities).zip(grads.layers()) {
            update_layer(p, v, g, mu, eta);
        }
    }
}

fn update_layer(p: &mut Layer, v: &mut Layer, g: &Layer, mu: f32, eta: f32) {
    if let (Some(pw), Some(vw), Some(gw)) = (p.weights.as_mut(), v.weights.as_mut(), g.weights.as_ref()) {
        for ((w, vel), &gr) in pw.data_mut().iter_mut().zip(vw.data_mut()).zip(gw.data()) {
            *vel = mu * *vel - eta * gr;
            *w += *vel;
        }
    }
    for ((b, vel), &gr) in p.bias.iter_mut().zip(v.bias.iter_mut()).zip(&g.bias) {
        *vel = mu * *vel - eta * gr;
        *b += *vel;
    }
}

/// One plain SGD step without optimiser state; see [`Sgd`] for momentum.
pub fn sgd_step(params: &mut ModelParams, batch: &Batch, config: &TrainConfig) -> Result<StepRecord> {
    Sgd::new(params, config).step(params, batch, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DomainEpochStats {
    pub domain: usize,
    /// Mean over the epoch's images of the per-image summed cross-entropy.
    pub mean_fidelity: f64,
    pub images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub per_domain: Vec<DomainEpochStats>,
}

impl EpochStats {
    pub fn mean_fidelity(&self) -> f64 {
        let (sum, n) = self.per_domain.iter().fold((0.0, 0), |(s, n), d| {
            (s + d.mean_fidelity * d.images as f64, n + d.images)
        });
        sum / n.max(1) as f64
    }
}

struct Prepared {
    image: Tensor,
    labels: Mask,
    domain: usize,
}

fn prepare(params: &ModelParams, samples: &[ImageSample]) -> Result<Vec<Prepared>> {
    let res = params.working_resolution;
    samples
        .iter()
        .map(|s| {
            let image = bilinear_resize(&s.image, res, res)?;
            let mask = s.mask.resize_nearest(res, res).binarized();
            let labels = match params.variant {
                Variant::Ml => mask.relabel_foreground(s.domain as u8 + 1),
                _ => mask,
            };
            Ok(Prepared {
                image,
                labels,
                domain: s.domain,
            })
        })
        .collect()
}

/// Groups of sample indices that may share a batch, with the head domain
/// each group's batches are tagged with.
fn groups(params: &ModelParams, samples: &[ImageSample]) -> Result<Vec<(usize, Vec<usize>)>> {
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut by_domain: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_domain.entry(s.domain).or_default().push(i);
    }
    match params.variant {
        Variant::Sd => {
            if by_domain.len() != 1 {
                return Err(Error::Config(format!(
                    "SD training takes one domain, got domains {:?}",
                    by_domain.keys().collect::<Vec<_>>()
                )));
            }
            Ok(vec![(0, by_domain.into_values().next().unwrap())])
        }
        Variant::Md | Variant::Ml => {
            for d in 0..params.num_domains {
                if !by_domain.contains_key(&d) {
                    return Err(Error::Config(format!("domain {d} has no training samples")));
                }
            }
            if let Some(&d) = by_domain.keys().find(|&&d| d >= params.num_domains) {
                return Err(Error::Index {
                    what: "sample domain id",
                    index: d,
                    limit: params.num_domains,
                });
            }
            if params.variant == Variant::Md {
                Ok(by_domain.into_iter().collect())
            } else {
                Ok(vec![(0, (0..samples.len()).collect())])
            }
        }
    }
}

/// One epoch of batches. Every round takes one batch from each group in
/// turn; an epoch lasts as many rounds as the largest group has batches, and
/// smaller groups are reshuffled and cycled to keep up.
fn epoch_schedule(groups: &[(usize, Vec<usize>)], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, Vec<usize>)> {
    let rounds = groups
        .iter()
        .map(|(_, idx)| idx.len().div_ceil(batch_size))
        .max()
        .unwrap_or(0);
    let per_group: Vec<Vec<Vec<usize>>> = groups
        .iter()
        .map(|(_, idx)| {
            let mut batches = Vec::with_capacity(rounds);
            while batches.len() < rounds {
                let mut order = idx.clone();
                order.shuffle(rng);
                batches.extend(order.chunks(batch_size).map(<[usize]>::to_vec));
            }
            batches.truncate(rounds);
            batches
        })
        .collect();
    (0..rounds)
        .flat_map(|r| {
            per_group
                .iter()
                .enumerate()
                .map(move |(g, b)| (groups[g].0, b[r].clone()))
        })
        .collect()
}

/// Epoch-at-a-time training state: parameters, optimiser velocity and the
/// shuffling stream. Running `n` epochs here equals one `train` call with
/// `epochs = n`.
pub struct Trainer<'a> {
    params: ModelParams,
    opt: Sgd,
    rng: ChaCha8Rng,
    groups: Vec<(usize, Vec<usize>)>,
    prepared: Vec<Prepared>,
    config: &'a TrainConfig,
    epoch: usize,
    batch_index: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(params: ModelParams, samples: &[ImageSample], config: &'a TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.working_resolution != params.working_resolution {
            return Err(Error::Config(format!(
                "train config working_resolution {} differs from the model's {}",
                config.working_resolution, params.working_resolution
            )));
        }
        let groups = groups(&params, samples)?;
        let prepared = prepare(&params, samples)?;
        Ok(Trainer {
            opt: Sgd::new(&params, config),
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            params,
            groups,
            prepared,
            config,
            epoch: 0,
            batch_index: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// Epochs completed so far.
    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (domain, idx) in epoch_schedule(&self.groups, self.config.batch_size, &mut self.rng) {
            let batch = Batch::new(
                idx.iter().map(|&i| self.prepared[i].image.clone()).collect(),
                idx.iter().map(|&i| self.prepared[i].labels.clone()).collect(),
                domain,
            )?;
            let rec = self.opt.step(&mut self.params, &batch, self.batch_index)?;
            for (&i, f) in idx.iter().zip(&rec.per_sample_fidelity) {
                let e = sums.entry(self.prepared[i].domain).or_default();
                e.0 += f;
                e.1 += 1;
            }
            self.batch_index += 1;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            per_domain: sums
                .into_iter()
                .map(|(domain, (s, n))| DomainEpochStats {
                    domain,
                    mean_fidelity: s / n as f64,
                    images: n,
                })
                .collect(),
        })
    }
}

/// Train for `config.epochs` epochs, calling `on_epoch` after each.
pub fn train_with_progress(
    params: ModelParams,
    samples: &[ImageSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(ModelParams, Vec<EpochStats>)> {
    let mut trainer = Trainer::new(params, samples, config)?;
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let stats = trainer.run_epoch()?;
        on_epoch(&stats);
        history.push(stats);
    }
    Ok((trainer.into_params(), history))
}

pub fn train(
    params: ModelParams,
    samples: &[ImageSample],
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    train_with_progress(params, samples, config, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::compute_loss;
    use crate::model::params::{build_model, ArchPreset};
    use rand::Rng;

    fn toy_batch(res: usize, n: usize, domain: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = (0..n)
            .map(|_| Tensor::from_vec(&[1, res, res], (0..res * res).map(|_| rng.gen()).collect()).unwrap())
            .collect();
        let labels = (0..n).map(|_| Mask::from_fn(res, res, |x, y| x + y < res)).collect();
        Batch::new(images, labels, domain).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut m = build_model(Variant::Md, 2, ArchPreset::Tiny, 8, 0).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            lambda: 0.1,
            working_resolution: 8,
            ..TrainConfig::default()
        };
        sgd_step(&mut m, &toy_batch(8, 2, 0, 1), &cfg).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn plain_step_is_w_minus_eta_g() {
        let mut m = build_model(Variant::Md, 2, ArchPreset::Tiny, 8, 3).unwrap();
        let batch = toy_batch(8, 2, 1, 2);
        let (_, _, g) = loss_and_gradients(&m, &batch, 0.0).unwrap();
        let eta = 1e-3f32;
        let cfg = TrainConfig {
            learning_rate: eta as f64,
            momentum: 0.0,
            lambda: 0.0,
            working_resolution: 8,
            ..TrainConfig::default()
        };
        let before = m.clone();
        sgd_step(&mut m, &batch, &cfg).unwrap();
        let after = m.trunk.iter().chain(&m.heads[1]);
        let orig = before.trunk.iter().chain(&before.heads[1]);
        for ((a, o), gl) in after.zip(orig).zip(g.layers()) {
            if let Some(w) = a.weights.as_ref() {
                for ((&wa, &wo), &gv) in w
                    .data()
                    .iter()
                    .zip(o.weights.as_ref().unwrap().data())
                    .zip(gl.weights.as_ref().unwrap().data())
                {
                    assert_eq!(wa, wo + (0.0 - eta * gv));
                }
            }
        }
        // a small step along -g lowers the loss
        let l0 = compute_loss(&before, &batch, 0.0).unwrap().total;
        let l1 = compute_loss(&m, &batch, 0.0).unwrap().total;
        assert!(l1 < l0, "{l1} !< {l0}");
    }

    #[test]
    fn step_on_one_domain_leaves_other_heads_untouched() {
        let mut m = build_model(Variant::Md, 3, ArchPreset::Tiny, 8, 5).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            lambda: 0.5,
            working_resolution: 8,
            ..TrainConfig::default()
        };
        let mut opt = Sgd::new(&m, &cfg);
        opt.step(&mut m, &toy_batch(8, 3, 0, 4), 0).unwrap();
        opt.step(&mut m, &toy_batch(8, 3, 0, 5), 1).unwrap();
        assert_ne!(m.trunk, before.trunk);
        assert_ne!(m.heads[0], before.heads[0]);
        assert_eq!(m.heads[1], before.heads[1]);
        assert_eq!(m.heads[2], before.heads[2]);
    }

    #[test]
    fn non_finite_loss_reports_batch_index() {
        let mut m = build_model(Variant::Sd, 1, ArchPreset::Tiny, 8, 0).unwrap();
        m.trunk[0].weights.as_mut().unwrap().data_mut()[0] = f32::NAN;
        let cfg = TrainConfig {
            working_resolution: 8,
            ..TrainConfig::default()
        };
        let err = Sgd::new(&m, &cfg).step(&mut m, &toy_batch(8, 1, 0, 0), 17).unwrap_err();
        assert!(matches!(err, Error::Training { batch: 17, .. }), "{err}");
    }

    #[test]
    fn round_robin_cycles_smaller_domains() {
        let groups = vec![(0, (0..5).collect()), (1, (5..7).collect()), (2, (7..12).collect())];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sched = epoch_schedule(&groups, 2, &mut rng);
        let domains: Vec<usize> = sched.iter().map(|(d, _)| *d).collect();
        assert_eq!(domains, vec![0, 1, 2, 0, 1, 2, 0, 1, 2]);
        for (d, b) in &sched {
            assert!(b.iter().all(|i| groups[*d].1.contains(i)));
        }
        // the largest groups are covered exactly once
        let mut big: Vec<usize> = sched
            .iter()
            .filter(|(d, _)| *d != 1)
            .flat_map(|(_, b)| b.clone())
            .collect();
        big.sort();
        assert_eq!(big, (0..5).chain(7..12).collect::<Vec<_>>());
    }
}
