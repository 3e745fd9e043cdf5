//! Finite-difference verification of the analytical backward passes.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layer::{Layer, LayerKind, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Coordinates checked per parameter tensor; larger tensors are sampled.
pub const MAX_CHECKED_COORDS: usize = 160;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: &'static str,
    pub checked: usize,
    pub total: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub layer: LayerSpec,
    pub seed: u64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Smallest square input (>= a per-kind base) the layer accepts.
fn probe_extent(spec: &LayerSpec) -> Result<usize> {
    let base = match spec.kind {
        LayerKind::Deconv => 4,
        _ => 6.max(spec.kernel_h).max(spec.kernel_w),
    };
    (base..base + 4 * spec.stride.max(1) + 8)
        .find(|&e| spec.output_extent(e, e).is_ok())
        .ok_or_else(|| Error::Config(format!("no probe input size fits {spec:?}")))
}

fn layer_input(spec: &LayerSpec, extent: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = spec.in_channels * extent * extent;
    let data: Vec<f64> = match spec.kind {
        // well separated values so no window max changes under a 1e-4 nudge
        LayerKind::MaxPool => {
            let mut order: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            order.iter().map(|&k| k as f64 * 0.05 - 1.0).collect()
        }
        // bounded away from the kink at zero
        LayerKind::Relu => (0..n)
            .map(|_| {
                let m = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
        _ => (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    Tensor::from_vec(&[spec.in_channels, extent, extent], data).expect("shape by construction")
}

/// Compare the analytical gradients of one layer against central finite
/// differences of `L = Σ r ⊙ layer(x)` in 64-bit arithmetic.
pub fn grad_check(spec: &LayerSpec, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = probe_extent(spec)?;
    let mut layer = Layer::<f64>::init(*spec, &mut rng);
    for b in layer.bias.iter_mut() {
        *b = rng.gen_range(-0.5..0.5);
    }
    let x = layer_input(spec, extent, &mut rng);
    let (y, cache) = layer.forward(&x)?;
    let r = Tensor::from_vec(y.shape(), (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let grads = layer.backward(&x, &cache, &r, true)?;

    let objective = |layer: &Layer<f64>, x: &Tensor<f64>| -> Result<f64> {
        let (y, _) = layer.forward(x)?;
        Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    };

    let mut params = Vec::new();
    {
        let analytic = grads.input.as_ref().expect("input gradient requested");
        let mut worst = 0.0f64;
        let picks = pick(&mut rng, x.len());
        for &i in &picks {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += FD_STEP;
            xm.data_mut()[i] -= FD_STEP;
            let fd = (objective(&layer, &xp)? - objective(&layer, &xm)?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[i], fd));
        }
        params.push(ParamCheck {
            name: "input",
            checked: picks.len(),
            total: x.len(),
            max_rel_error: worst,
        });
    }
    if let Some(gw) = grads.weights.as_ref() {
        let total = gw.len();
        let picks = pick(&mut rng, total);
        let mut worst = 0.0f64;
        for &i in &picks {
            let mut lp = layer.clone();
            let mut lm = layer.clone();
            lp.weights.as_mut().unwrap().data_mut()[i] += FD_STEP;
            lm.weights.as_mut().unwrap().data_mut()[i] -= FD_STEP;
            let fd = (objective(&lp, &x)? - objective(&lm, &x)?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(gw.data()[i], fd));
        }
        params.push(ParamCheck {
            name: "weights",
            checked: picks.len(),
            total,
            max_rel_error: worst,
        });

        let mut worst = 0.0f64;
        for i in 0..layer.bias.len() {
            let mut lp = layer.clone();
            let mut lm = layer.clone();
            lp.bias[i] += FD_STEP;
            lm.bias[i] -= FD_STEP;
            let fd = (objective(&lp, &x)? - objective(&lm, &x)?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grads.bias[i], fd));
        }
        params.push(ParamCheck {
            name: "bias",
            checked: layer.bias.len(),
            total: layer.bias.len(),
            max_rel_error: worst,
        });
    }

    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        layer: *spec,
        seed,
        tolerance,
        params,
        max_rel_error,
        pass: max_rel_error <= tolerance,
    })
}

/// Run [`grad_check`] on every distinct layer of `specs`, once per seed in
/// `first_seed..first_seed + seeds`. Reports are ordered by layer, then seed.
pub fn grad_check_suite(
    specs: &[LayerSpec],
    first_seed: u64,
    seeds: usize,
    tolerance: f64,
) -> Result<Vec<GradCheckReport>> {
    let mut distinct: Vec<LayerSpec> = Vec::new();
    for s in specs {
        if !distinct.contains(s) {
            distinct.push(*s);
        }
    }
    distinct
        .iter()
        .flat_map(|s| (first_seed..first_seed + seeds as u64).map(move |seed| grad_check(s, seed, tolerance)))
        .collect()
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let l = &self.layer;
        let kind = format!("{:?}", l.kind).to_lowercase();
        write!(
            f,
            "{kind:<8} {:>3}->{:<3} k{}x{} s{} p{}  seed {:<3} max rel err {:.3e}  {}",
            l.in_channels,
            l.out_channels,
            l.kernel_h,
            l.kernel_w,
            l.stride,
            l.padding,
            self.seed,
            self.max_rel_error,
            if self.pass { "ok" } else { "FAIL" }
        )
    }
}

fn pick(rng: &mut ChaCha8Rng, total: usize) -> Vec<usize> {
    if total <= MAX_CHECKED_COORDS {
        (0..total).collect()
    } else {
        let mut v = sample(rng, total, MAX_CHECKED_COORDS).into_vec();
        v.sort_unstable();
        v
    }
}
