//! Central finite-difference checks of analytic gradients, in f64.
//!
//! Each check contracts the output with a fixed random tensor so every output
//! element contributes, then compares d(objective)/d(input) and a sample of
//! parameter gradients against (f(θ+h) − f(θ−h)) / 2h.
//!
//! A coordinate that fails at h is retried at h/10. If the two differences
//! disagree with each other the step crossed a ReLU or max kink; such
//! coordinates are counted rather than judged, and a check with more than
//! [`MAX_KINK_FRACTION`] of them fails.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{Cam, ChannelGate, DaBlock, MipcBlock, MipcVariant, Pam, PcBlock, PositionGate, ResidualTail};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::loss::{combined_loss, one_hot, soft_dice_loss};
use crate::network::{MipcNet, ModelConfig};
use crate::nn::{BuildState, Mode, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so gradients near zero are judged
/// by absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
pub const MAX_KINK_FRACTION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub floor: f64,
    pub tolerance: f64,
    /// Input coordinates to check; all of them when `None`.
    pub input_samples: Option<usize>,
    /// Entries checked per parameter tensor.
    pub param_samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: FD_STEP, floor: REL_ERROR_FLOOR, tolerance: TOLERANCE, input_samples: None, param_samples: 3, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates excluded because the finite difference itself was unstable.
    pub kinks: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Where the largest relative error occurred.
    pub worst: String,
    pub seconds: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance && self.kinks as f64 <= MAX_KINK_FRACTION * self.checked as f64
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct Tracker<'a> {
    cfg: &'a GradCheckConfig,
    checked: usize,
    kinks: usize,
    max_rel: f64,
    max_abs: f64,
    worst: String,
}

impl Tracker<'_> {
    /// `fd(h)` is the central difference with step h.
    fn judge(&mut self, analytic: f64, mut fd: impl FnMut(f64) -> Result<f64>, place: impl FnOnce() -> String) -> Result<()> {
        let (h, floor, tol) = (self.cfg.step, self.cfg.floor, self.cfg.tolerance);
        self.checked += 1;
        let numeric = fd(h)?;
        let rel = relative_error(analytic, numeric, floor);
        if rel > tol && relative_error(numeric, fd(h / 10.0)?, floor) > tol {
            self.kinks += 1;
            return Ok(());
        }
        self.max_abs = self.max_abs.max((analytic - numeric).abs());
        if rel > self.max_rel || self.worst.is_empty() {
            self.max_rel = rel.max(self.max_rel);
            self.worst = format!("{} (analytic {analytic:.6e}, numeric {numeric:.6e})", place());
        }
        Ok(())
    }
}

/// Checks `forward` with respect to `input` and every trainable parameter of
/// `store`. Batch norm runs on batch statistics.
pub fn check<F>(name: &str, store: &ParamStore<f64>, input: &Tensor<f64>, cfg: &GradCheckConfig, forward: F) -> Result<GradCheckReport>
where
    F: Fn(&Session<'_, f64>, &Var<f64>) -> Result<Var<f64>>,
{
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let s = Session::with_grad(store, Mode::Train);
    let x = s.input(input.clone(), true);
    let out = forward(&s, &x)?;
    let weights = Tensor::from_fn(out.shape().to_vec(), |_| rng.gen_range(-1.0..1.0));
    let objective = out.mul(&Var::constant(weights.clone()))?.sum_all();
    let grads = objective.backward();
    let input_grad = grads.get_or_zeros(&x);
    let param_grads = s.param_grads(&grads);
    drop(s);

    let eval = |store: &ParamStore<f64>, input: &Tensor<f64>| -> Result<f64> {
        let s = Session::inference(store, Mode::Train);
        let out = forward(&s, &Var::constant(input.clone()))?;
        Ok(out.value().data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
    };
    let mut t = Tracker { cfg, checked: 0, kinks: 0, max_rel: 0.0, max_abs: 0.0, worst: String::new() };

    let coords: Vec<usize> = match cfg.input_samples {
        Some(k) if k < input.len() => {
            let mut v = sample(&mut rng, input.len(), k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..input.len()).collect(),
    };
    let probe = input.clone();
    for &i in &coords {
        let orig = probe.data()[i];
        let fd = |h: f64| -> Result<f64> {
            let mut p = probe.clone();
            p.data_mut()[i] = orig + h;
            let plus = eval(store, &p)?;
            p.data_mut()[i] = orig - h;
            Ok((plus - eval(store, &p)?) / (2.0 * h))
        };
        t.judge(input_grad.data()[i], fd, || format!("input{:?}", input.unravel(i)))?;
    }

    let mut work = store.clone();
    for (id, g) in &param_grads {
        let n = g.len();
        let picks = sample(&mut rng, n, cfg.param_samples.min(n)).into_vec();
        for j in picks {
            let fd = |h: f64| perturbed_difference(&mut work, *id, j, h, &eval, input);
            t.judge(g.data()[j], fd, || format!("{}[{}]", store.entry(*id).name, j))?;
        }
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        checked: t.checked,
        kinks: t.kinks,
        max_rel_error: t.max_rel,
        max_abs_error: t.max_abs,
        worst: t.worst,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn perturbed_difference(
    work: &mut ParamStore<f64>,
    id: ParamId,
    j: usize,
    h: f64,
    eval: &impl Fn(&ParamStore<f64>, &Tensor<f64>) -> Result<f64>,
    input: &Tensor<f64>,
) -> Result<f64> {
    let orig = work.get(id).data()[j];
    work.get_mut(id).data_mut()[j] = orig + h;
    let plus = eval(work, input);
    work.get_mut(id).data_mut()[j] = orig - h;
    let minus = eval(work, input);
    work.get_mut(id).data_mut()[j] = orig;
    Ok((plus? - minus?) / (2.0 * h))
}

fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-scale..scale))
}

/// Sets every residual-scale parameter (named `gamma`, one element) to `v` so
/// the attention paths carry gradient.
fn open_gammas(store: &mut ParamStore<f64>, v: f64) {
    let ids: Vec<ParamId> = store
        .ids()
        .filter(|&id| {
            let e = store.entry(id);
            e.name.rsplit('.').next() == Some("gamma") && e.value.len() == 1
        })
        .collect();
    for id in ids {
        store.set(id, Tensor::new(vec![1], vec![v]).expect("one element"));
    }
}

fn block_check<B>(
    name: &str,
    cfg: &GradCheckConfig,
    shape: [usize; 4],
    build: impl FnOnce(&mut BuildState) -> B,
    forward: impl Fn(&B, &Session<'_, f64>, &Var<f64>) -> Result<Var<f64>>,
) -> Result<GradCheckReport> {
    let mut st = BuildState::new(cfg.seed + 11);
    let block = build(&mut st);
    let mut store = st.finish();
    open_gammas(&mut store, 0.5);
    let input = random_tensor(&shape, cfg.seed + 23, 1.0);
    check(name, &store, &input, cfg, |s, x| forward(&block, s, x))
}

/// Names of every check in [`run_suite`], in order.
pub fn suite_names() -> Vec<String> {
    let mut v: Vec<String> = ["pam", "cam", "channel_gate", "position_gate"].map(String::from).to_vec();
    v.extend(MipcVariant::ALL.iter().map(|m| format!("mipc[{}]", m.label())));
    v.extend(["pc_block", "residual_tail", "da_block", "micro_model", "soft_dice_loss", "combined_loss"].map(String::from));
    v
}

/// Runs the checks whose name passes `filter`.
pub fn run_suite(cfg: &GradCheckConfig, filter: impl Fn(&str) -> bool) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    let c = 16;
    let feat = [2, c, 5, 5];
    let mut run = |name: &str, f: &mut dyn FnMut() -> Result<GradCheckReport>| -> Result<()> {
        if filter(name) {
            out.push(f()?);
        }
        Ok(())
    };
    run("pam", &mut || block_check("pam", cfg, feat, |st| Pam::new(&mut st.root().child("pam"), c), |b, s, x| b.forward(s, x)))?;
    run("cam", &mut || block_check("cam", cfg, feat, |st| Cam::new(&mut st.root().child("cam")), |b, s, x| b.forward(s, x)))?;
    run("channel_gate", &mut || {
        block_check("channel_gate", cfg, feat, |st| ChannelGate::new(&mut st.root().child("gate"), c), |b, s, x| b.forward(s, x))
    })?;
    run("position_gate", &mut || {
        block_check("position_gate", cfg, feat, |st| PositionGate::new(&mut st.root().child("gate")), |b, s, x| b.forward(s, x))
    })?;
    for v in MipcVariant::ALL {
        let name = format!("mipc[{}]", v.label());
        run(&name, &mut || {
            block_check(&name, cfg, feat, |st| MipcBlock::new(&mut st.root().child("mipc"), c, v), |b, s, x| b.forward(s, x))
        })?;
    }
    run("pc_block", &mut || {
        block_check("pc_block", cfg, feat, |st| PcBlock::new(&mut st.root().child("pc"), c), |b, s, x| b.forward(s, x))
    })?;
    run("residual_tail", &mut || {
        block_check("residual_tail", cfg, feat, |st| ResidualTail::new(&mut st.root().child("tail"), c), |b, s, x| b.forward(s, x))
    })?;
    run("da_block", &mut || {
        block_check("da_block", cfg, [2, 8, 5, 5], |st| DaBlock::new(&mut st.root().child("da"), 8), |b, s, x| b.forward(s, x))
    })?;
    run("micro_model", &mut || micro_model_check(cfg))?;
    run("soft_dice_loss", &mut || {
        let labels = random_labels(2 * 6 * 6, 3, cfg.seed + 5);
        let onehot = one_hot::<f64>(&labels, 2, 3, 6, 6)?;
        // strictly positive, unnormalised probabilities keep the check generic
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 6);
        let probs = Tensor::from_fn(vec![2, 3, 6, 6], |_| rng.gen_range(0.05..1.0));
        check("soft_dice_loss", &ParamStore::default(), &probs, cfg, |_, p| soft_dice_loss(p, &onehot))
    })?;
    run("combined_loss", &mut || {
        let labels = random_labels(2 * 6 * 6, 4, cfg.seed + 7);
        let logits = random_tensor(&[2, 4, 6, 6], cfg.seed + 8, 2.0);
        check("combined_loss", &ParamStore::default(), &logits, cfg, |_, l| Ok(combined_loss(l, &labels)?.total))
    })?;
    Ok(out)
}

fn random_labels(n: usize, k: u8, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0..k)).collect()
}

/// End-to-end check of the smallest configuration, all components enabled.
///
/// Batch-norm shifts are randomised: with zero shifts a channel that is dead
/// across the batch normalises to exactly 0 and the following ReLU sits on its
/// kink.
fn micro_model_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mc = ModelConfig::micro();
    let (net, store) = MipcNet::build(&mc, cfg.seed + 31)?;
    let mut store = store;
    open_gammas(&mut store, 0.5);
    let betas: Vec<ParamId> = store.ids().filter(|&id| store.entry(id).name.ends_with(".beta")).collect();
    for (k, id) in betas.into_iter().enumerate() {
        let shape = store.get(id).shape().to_vec();
        store.set(id, random_tensor(&shape, cfg.seed + 41 + k as u64, 0.2));
    }
    let input = random_tensor(&[2, mc.in_channels, mc.input_size, mc.input_size], cfg.seed + 37, 1.0);
    let cfg = GradCheckConfig { input_samples: cfg.input_samples.or(Some(256)), ..cfg.clone() };
    check("micro_model", &store, &input, &cfg, |s, x| net.forward(s, x))
}

/// Fails with the first report above `tolerance`.
pub fn require(reports: &[GradCheckReport], tolerance: f64) -> Result<()> {
    match reports.iter().find(|r| !r.passed(tolerance)) {
        Some(r) => Err(Error::Training(format!(
            "gradient check {} failed: relative error {:.3e} (tolerance {tolerance:.0e}) at {}, {} of {} coordinates at kinks",
            r.name, r.max_rel_error, r.worst, r.kinks, r.checked
        ))),
        None => Ok(()),
    }
}
