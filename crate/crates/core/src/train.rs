//! Losses on the DG quadratic forms, the training loops, evaluation
//! metrics, dataset generation and the warm-start benchmark.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dg::{dg_error, exact_error, solve_dg, DgConfig, DgError, DgOperators, Norm, Source};
use crate::mesh::{build_mesh, image_to_vector, vector_to_image, DofLayout, MeshError};
use crate::nn::{adam_step, build_unet, cosine_lr, AdamHyper, AdamState, NnError, Tensor, UNet, UNetConfig};
use crate::sparse::{gauss_seidel, SolveReport, SparseError};
use crate::symbolic::{parse_expr, random_solution, BankKind, Manufactured, SymbolBank, SymbolicError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dg(#[from] DgError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteBatchLoss { epoch: usize, batch: usize, value: f64 },
    #[error("non-finite loss {value} at step {step}")]
    NonFiniteStepLoss { step: usize, value: f64 },
}

/// Quadrature points per direction for errors against analytic solutions.
pub const EXACT_QUAD_ORDER: usize = 5;

// ---------------------------------------------------------------------------
// data

/// One training or test function on a fixed mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// manufactured solution `u`, in the expression grammar
    pub expr: String,
    /// coefficient image of the L2 projection of `f`, `2n x 2n`
    pub input: Vec<f64>,
    pub load: Vec<f64>,
    /// DG solution coefficients
    pub label: Vec<f64>,
}

/// Dataset flag: samples were drawn from the test symbol bank.
pub const FLAG_TEST_BANK: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub config: DgConfig,
    pub flags: u32,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn bank(&self) -> BankKind {
        if self.flags & FLAG_TEST_BANK != 0 {
            BankKind::Test
        } else {
            BankKind::Train
        }
    }

    pub fn check(&self) -> Result<(), TrainError> {
        let dofs = 4 * self.n * self.n;
        for (i, s) in self.samples.iter().enumerate() {
            if s.input.len() != dofs || s.load.len() != dofs || s.label.len() != dofs {
                return Err(TrainError::Dimension(format!("sample {i} does not match a {0}x{0} mesh", self.n)));
            }
        }
        Ok(())
    }
}

/// Source data and DG label for the manufactured solution `u`.
pub fn make_sample(ops: &DgOperators, u: &crate::symbolic::Expr) -> Result<Sample, TrainError> {
    let m = Manufactured::new(u.clone());
    let rhs = ops.rhs(&Source::Expr(m.f))?;
    let label = solve_dg(ops, &rhs)?;
    let layout = ops.mesh.layout();
    Ok(Sample {
        expr: u.to_string(),
        input: vector_to_image(&rhs.proj_coeffs, layout)?,
        load: rhs.load,
        label: label.coeffs,
    })
}

/// `count` random functions from `bank` with their DG labels.
pub fn generate_dataset(n: usize, count: usize, bank: BankKind, config: DgConfig, seed: u64) -> Result<Dataset, TrainError> {
    let mesh = build_mesh(n)?;
    let ops = DgOperators::assemble(&mesh, config);
    let symbols = SymbolBank::new(bank);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let u = random_solution(&mut rng, &symbols)?;
        samples.push(make_sample(&ops, &u)?);
    }
    Ok(Dataset {
        n,
        config,
        flags: if bank == BankKind::Test { FLAG_TEST_BANK } else { 0 },
        samples,
    })
}

// ---------------------------------------------------------------------------
// losses

fn check_len(what: &str, v: &[f64], n: usize) -> Result<(), TrainError> {
    if v.len() != n {
        return Err(TrainError::Dimension(format!("{what} has {} entries, expected {n}", v.len())));
    }
    Ok(())
}

/// `β δᵀ(M+K)δ + (1-β)‖Aα̂ - load‖²` with `δ = α̂ - α`, and its gradient in `α̂`.
pub fn supervised_loss_grad(
    pred: &[f64],
    label: &[f64],
    load: &[f64],
    ops: &DgOperators,
    beta: f64,
) -> Result<(f64, Vec<f64>), TrainError> {
    let n = ops.num_dofs();
    check_len("prediction", pred, n)?;
    check_len("label", label, n)?;
    check_len("load", load, n)?;
    let delta: Vec<f64> = pred.iter().zip(label).map(|(p, q)| p - q).collect();
    let md = ops.mass.spmv(&delta)?;
    let kd = ops.stiffness.spmv(&delta)?;
    let ap = ops.a.spmv(pred)?;
    let r: Vec<f64> = ap.iter().zip(load).map(|(p, q)| p - q).collect();
    let atr = ops.a.spmv_transpose(&r)?;
    let energy: f64 = delta.iter().zip(md.iter().zip(&kd)).map(|(d, (m, k))| d * (m + k)).sum();
    let residual: f64 = r.iter().map(|v| v * v).sum();
    let loss = beta * energy + (1.0 - beta) * residual;
    let grad = (0..n)
        .map(|i| 2.0 * beta * (md[i] + kd[i]) + 2.0 * (1.0 - beta) * atr[i])
        .collect();
    Ok((loss, grad))
}

/// `β‖Bα̂ - c‖² + (1-β) η α̂ᵀJα̂` and its gradient; `c` holds `∫_E f` per element.
pub fn unsupervised_loss_grad(
    pred: &[f64],
    ops: &DgOperators,
    element_source: &[f64],
    beta: f64,
    eta: f64,
) -> Result<(f64, Vec<f64>), TrainError> {
    check_len("prediction", pred, ops.num_dofs())?;
    check_len("element source", element_source, ops.mesh.num_elements())?;
    let bp = ops.mass_error.spmv(pred)?;
    let m: Vec<f64> = bp.iter().zip(element_source).map(|(p, q)| p - q).collect();
    let btm = ops.mass_error.spmv_transpose(&m)?;
    let jp = ops.jump.spmv(pred)?;
    let mass: f64 = m.iter().map(|v| v * v).sum();
    let jump: f64 = pred.iter().zip(&jp).map(|(p, q)| p * q).sum();
    let loss = beta * mass + (1.0 - beta) * eta * jump;
    let grad = btm
        .iter()
        .zip(&jp)
        .map(|(b, j)| 2.0 * beta * b + 2.0 * (1.0 - beta) * eta * j)
        .collect();
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// training

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedConfig {
    pub beta: f64,
    pub epochs: usize,
    /// `None` means `min(32, dataset size)`
    pub batch_size: Option<usize>,
    pub lr0: f64,
    pub seed: u64,
    pub clip_norm: f64,
    pub weight_decay: f64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        let adam = AdamHyper::default();
        Self {
            beta: 0.5,
            epochs: 150,
            batch_size: None,
            lr0: 1e-3,
            seed: 0,
            clip_norm: adam.clip_norm,
            weight_decay: adam.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnsupervisedConfig {
    pub beta: f64,
    /// penalty of the operators the loss is built on
    pub sigma: f64,
    pub eta: f64,
    pub steps: usize,
    pub lr0: f64,
    pub seed: u64,
    pub clip_norm: f64,
    pub weight_decay: f64,
}

impl Default for UnsupervisedConfig {
    fn default() -> Self {
        let adam = AdamHyper::default();
        Self {
            beta: 0.5,
            sigma: 1.0,
            eta: 2.0,
            steps: 5000,
            lr0: 1e-3,
            seed: 0,
            clip_norm: adam.clip_norm,
            weight_decay: adam.weight_decay,
        }
    }
}

fn check_beta(beta: f64) -> Result<(), TrainError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(TrainError::Config(format!("beta must lie in [0, 1], got {beta}")));
    }
    Ok(())
}

fn check_net(net_cfg: &UNetConfig, layout: DofLayout) -> Result<(), TrainError> {
    if net_cfg.input_side != layout.side() {
        return Err(TrainError::Config(format!(
            "network input side {} does not match the {}x{} DOF image",
            net_cfg.input_side,
            layout.side(),
            layout.side()
        )));
    }
    Ok(())
}

/// Stack DOF images of `side x side` into a `(B, 1, side, side)` tensor.
fn stack_images<'a>(images: impl Iterator<Item = &'a [f64]>, side: usize) -> Result<Tensor, TrainError> {
    let mut data = Vec::new();
    let mut count = 0;
    for img in images {
        check_len("input image", img, side * side)?;
        data.extend_from_slice(img);
        count += 1;
    }
    Ok(Tensor::from_vec([count, 1, side, side], data)?)
}

/// Result of a supervised run: the final weights, the mean training loss
/// of every epoch and the optimizer moments.
#[derive(Debug, Clone)]
pub struct SupervisedRun {
    pub net: UNet,
    pub epoch_losses: Vec<f64>,
    pub optimizer: AdamState,
}

pub fn train_supervised(
    dataset: &Dataset,
    ops: &DgOperators,
    cfg: &SupervisedConfig,
    net_cfg: UNetConfig,
) -> Result<SupervisedRun, TrainError> {
    train_supervised_with(dataset, ops, cfg, net_cfg, |_, _| {})
}

/// As [`train_supervised`], calling `on_epoch(epoch, mean_loss)` after every epoch.
pub fn train_supervised_with(
    dataset: &Dataset,
    ops: &DgOperators,
    cfg: &SupervisedConfig,
    net_cfg: UNetConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<SupervisedRun, TrainError> {
    check_beta(cfg.beta)?;
    if dataset.samples.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    if dataset.n != ops.mesh.n() {
        return Err(TrainError::Config(format!("dataset is on N={}, operators on N={}", dataset.n, ops.mesh.n())));
    }
    dataset.check()?;
    let layout = ops.mesh.layout();
    check_net(&net_cfg, layout)?;
    let count = dataset.samples.len();
    let batch = cfg.batch_size.unwrap_or(32).min(count);
    if batch == 0 {
        return Err(TrainError::Config("batch size must be positive".into()));
    }
    let batches = count.div_ceil(batch);
    let total = cfg.epochs * batches;
    let side = layout.side();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = build_unet(net_cfg, &mut rng)?;
    let mut state = AdamState::new(&net);
    let mut hyper = AdamHyper {
        clip_norm: cfg.clip_norm,
        weight_decay: cfg.weight_decay,
        ..AdamHyper::default()
    };
    let mut order: Vec<usize> = (0..count).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for (bi, chunk) in order.chunks(batch).enumerate() {
            let x = stack_images(chunk.iter().map(|&i| dataset.samples[i].input.as_slice()), side)?;
            let (y, cache) = net.forward_with_cache(&x)?;
            let scale = 1.0 / chunk.len() as f64;
            let mut g_img = Vec::with_capacity(y.len());
            let mut batch_loss = 0.0;
            for (k, &i) in chunk.iter().enumerate() {
                let s = &dataset.samples[i];
                let pred = image_to_vector(&y.data()[k * side * side..(k + 1) * side * side], layout)?;
                let (loss, grad) = supervised_loss_grad(&pred, &s.label, &s.load, ops, cfg.beta)?;
                batch_loss += loss * scale;
                let grad: Vec<f64> = grad.iter().map(|g| g * scale).collect();
                g_img.extend(vector_to_image(&grad, layout)?);
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteBatchLoss { epoch, batch: bi, value: batch_loss });
            }
            let g = Tensor::from_vec(y.shape(), g_img)?;
            let mut grads = net.backward(&cache, &g)?;
            hyper.lr = cosine_lr(step, total, cfg.lr0);
            adam_step(&mut net, &mut grads, &mut state, &hyper)?;
            step += 1;
            epoch_total += batch_loss * chunk.len() as f64;
        }
        let mean = epoch_total / count as f64;
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
    }
    Ok(SupervisedRun {
        net,
        epoch_losses,
        optimizer: state,
    })
}

/// Outcome of one unsupervised optimization.
#[derive(Debug, Clone)]
pub struct UnsupervisedRun {
    /// best prediction as a DOF vector
    pub best: Vec<f64>,
    pub best_loss: f64,
    pub best_step: usize,
    /// loss of the prediction at every step
    pub losses: Vec<f64>,
    /// running minimum of `losses`
    pub best_losses: Vec<f64>,
    pub net: UNet,
}

/// Optimize a freshly initialized network on a single source: the
/// prediction with the lowest loss over all steps is returned.
pub fn train_unsupervised(
    input_image: &[f64],
    ops: &DgOperators,
    element_source: &[f64],
    cfg: &UnsupervisedConfig,
    net_cfg: UNetConfig,
) -> Result<UnsupervisedRun, TrainError> {
    train_unsupervised_with(input_image, ops, element_source, cfg, net_cfg, |_, _| {})
}

pub fn train_unsupervised_with(
    input_image: &[f64],
    ops: &DgOperators,
    element_source: &[f64],
    cfg: &UnsupervisedConfig,
    net_cfg: UNetConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<UnsupervisedRun, TrainError> {
    check_beta(cfg.beta)?;
    if !(cfg.sigma > 0.0) || !(cfg.eta >= 0.0) {
        return Err(TrainError::Config(format!("need sigma > 0 and eta >= 0, got {} and {}", cfg.sigma, cfg.eta)));
    }
    if ops.config.sigma != cfg.sigma {
        return Err(TrainError::Config(format!(
            "loss operators use sigma {}, run configured with {}",
            ops.config.sigma, cfg.sigma
        )));
    }
    let layout = ops.mesh.layout();
    check_net(&net_cfg, layout)?;
    let side = layout.side();
    let x = stack_images(std::iter::once(input_image), side)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = build_unet(net_cfg, &mut rng)?;
    let mut state = AdamState::new(&net);
    let mut hyper = AdamHyper {
        clip_norm: cfg.clip_norm,
        weight_decay: cfg.weight_decay,
        ..AdamHyper::default()
    };
    let mut best = vec![0.0; layout.len()];
    let mut best_loss = f64::INFINITY;
    let mut best_step = 0;
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut best_losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (y, cache) = net.forward_with_cache(&x)?;
        let pred = image_to_vector(y.data(), layout)?;
        let (loss, grad) = unsupervised_loss_grad(&pred, ops, element_source, cfg.beta, cfg.eta)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteStepLoss { step, value: loss });
        }
        if loss < best_loss {
            best_loss = loss;
            best_step = step;
            best = pred;
        }
        losses.push(loss);
        best_losses.push(best_loss);
        on_step(step, loss);
        let g = Tensor::from_vec(y.shape(), vector_to_image(&grad, layout)?)?;
        let mut grads = net.backward(&cache, &g)?;
        hyper.lr = cosine_lr(step, cfg.steps, cfg.lr0);
        adam_step(&mut net, &mut grads, &mut state, &hyper)?;
    }
    Ok(UnsupervisedRun {
        best,
        best_loss,
        best_step,
        losses,
        best_losses,
        net,
    })
}

/// Network predictions as DOF vectors, evaluated in batches of `batch`.
pub fn predict(net: &UNet, images: &[&[f64]], layout: DofLayout, batch: usize) -> Result<Vec<Vec<f64>>, TrainError> {
    let side = layout.side();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let x = stack_images(chunk.iter().copied(), side)?;
        let y = net.forward(&x)?;
        for k in 0..chunk.len() {
            out.push(image_to_vector(&y.data()[k * side * side..(k + 1) * side * side], layout)?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// metrics

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMetrics {
    pub id: usize,
    pub l2_exact: f64,
    pub h1_exact: f64,
    pub l2_dg: f64,
    pub h1_dg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// population standard deviation
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        Some(Self {
            mean,
            std: var.sqrt(),
            median,
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    L2Exact,
    H1Exact,
    L2Dg,
    H1Dg,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::L2Exact, Metric::H1Exact, Metric::L2Dg, Metric::H1Dg];

    pub fn column(self) -> &'static str {
        match self {
            Metric::L2Exact => "L2_vs_exact",
            Metric::H1Exact => "H1_vs_exact",
            Metric::L2Dg => "L2_vs_dg",
            Metric::H1Dg => "H1_vs_dg",
        }
    }

    fn of(self, m: &SampleMetrics) -> f64 {
        match self {
            Metric::L2Exact => m.l2_exact,
            Metric::H1Exact => m.h1_exact,
            Metric::L2Dg => m.l2_dg,
            Metric::H1Dg => m.h1_dg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub n: usize,
    pub rows: Vec<SampleMetrics>,
}

impl MetricsTable {
    pub fn values(&self, metric: Metric) -> Vec<f64> {
        self.rows.iter().map(|r| metric.of(r)).collect()
    }

    pub fn aggregate(&self, metric: Metric) -> Option<Aggregate> {
        Aggregate::of(&self.values(metric))
    }

    pub fn median(&self, metric: Metric) -> f64 {
        self.aggregate(metric).map_or(f64::NAN, |a| a.median)
    }
}

/// Errors of `predictions[i]` against the analytic solution and the DG
/// label of `samples[i]`.
pub fn evaluate(ops: &DgOperators, samples: &[Sample], predictions: &[Vec<f64>]) -> Result<MetricsTable, TrainError> {
    if samples.len() != predictions.len() {
        return Err(TrainError::Dimension(format!(
            "{} samples but {} predictions",
            samples.len(),
            predictions.len()
        )));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for (id, (s, p)) in samples.iter().zip(predictions).enumerate() {
        let exact = Manufactured::new(parse_expr(&s.expr)?);
        rows.push(SampleMetrics {
            id,
            l2_exact: exact_error(&ops.mesh, &exact, p, Norm::L2, EXACT_QUAD_ORDER)?,
            h1_exact: exact_error(&ops.mesh, &exact, p, Norm::H1, EXACT_QUAD_ORDER)?,
            l2_dg: dg_error(ops, &s.label, p, Norm::L2)?,
            h1_dg: dg_error(ops, &s.label, p, Norm::H1)?,
        });
    }
    Ok(MetricsTable { n: ops.mesh.n(), rows })
}

/// One line of a rate table: medians at `n` and observed orders against
/// the previous (coarser) row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub l2: f64,
    pub h1: f64,
    pub l2_rate: Option<f64>,
    pub h1_rate: Option<f64>,
}

/// Rates `log2(e_coarse / e_fine)` between consecutive `(n, l2, h1)` entries.
pub fn rate_table(levels: &[(usize, f64, f64)]) -> Result<Vec<RateRow>, TrainError> {
    let mut out = Vec::with_capacity(levels.len());
    for (k, &(n, l2, h1)) in levels.iter().enumerate() {
        let (l2_rate, h1_rate) = if k == 0 {
            (None, None)
        } else {
            let (pn, pl2, ph1) = levels[k - 1];
            if n != 2 * pn {
                return Err(TrainError::Config(format!("rates need successive refinements, got N={pn} then N={n}")));
            }
            (
                Some(crate::dg::convergence_rate(pl2, l2)?),
                Some(crate::dg::convergence_rate(ph1, h1)?),
            )
        };
        out.push(RateRow { n, l2, h1, l2_rate, h1_rate });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// warm start

/// Bilinear resampling of a square image to side `out_side`, with
/// half-pixel sample centers.
pub fn resize_image(image: &[f64], side: usize, out_side: usize) -> Result<Vec<f64>, TrainError> {
    check_len("image", image, side * side)?;
    if side == 0 || out_side == 0 {
        return Err(TrainError::Config("image sides must be positive".into()));
    }
    let scale = out_side as f64 / side as f64;
    let taps: Vec<(usize, usize, f64)> = (0..out_side)
        .map(|o| {
            let src = ((o as f64 + 0.5) / scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(side - 1);
            let i1 = (i0 + 1).min(side - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect();
    let mut out = vec![0.0; out_side * out_side];
    for (oy, &(y0, y1, ly)) in taps.iter().enumerate() {
        for (ox, &(x0, x1, lx)) in taps.iter().enumerate() {
            let top = (1.0 - lx) * image[y0 * side + x0] + lx * image[y0 * side + x1];
            let bottom = (1.0 - lx) * image[y1 * side + x0] + lx * image[y1 * side + x1];
            out[oy * out_side + ox] = (1.0 - ly) * top + ly * bottom;
        }
    }
    Ok(out)
}

/// Interpolate a coarse DOF vector onto an `n_fine` mesh through the images.
pub fn interpolate_prediction(coarse: &[f64], n_coarse: usize, n_fine: usize) -> Result<Vec<f64>, TrainError> {
    let coarse_layout = DofLayout::new(n_coarse);
    let fine_layout = DofLayout::new(n_fine);
    let img = vector_to_image(coarse, coarse_layout)?;
    let fine = resize_image(&img, coarse_layout.side(), fine_layout.side())?;
    Ok(image_to_vector(&fine, fine_layout)?)
}

#[derive(Debug, Clone)]
pub struct WarmstartRun {
    pub name: String,
    pub report: SolveReport,
}

/// Gauss-Seidel from each named initial guess.
pub fn warmstart_benchmark(
    ops: &DgOperators,
    load: &[f64],
    guesses: &[(String, Vec<f64>)],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<WarmstartRun>, TrainError> {
    guesses
        .iter()
        .map(|(name, x0)| {
            Ok(WarmstartRun {
                name: name.clone(),
                report: gauss_seidel(&ops.a, load, x0, tol, max_iter)?,
            })
        })
        .collect()
}
