//! Alternating minimization of the unified objective.
//!
//! Each outer round runs two sub-steps:
//!
//! 1. `W, B` with embeddings fixed. `W` takes projected-subgradient steps with
//!    a backtracking line search; `B` is re-solved exactly by block-coordinate
//!    descent (the objective is separable in `W` and `B`).
//! 2. All embedding blocks with `W, B` fixed, again by projected subgradient
//!    with backtracking.
//!
//! Every accepted move strictly decreases the objective, so the recorded
//! objective is non-increasing across sub-steps.

mod grid;
mod projection;
mod ridge;
mod sparse_code;
mod transfer;

use std::time::Instant;

use ndarray::{Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Taxonomy};
use crate::model::{EmbeddingModel, Hyperparams, Params, Regularization};
use crate::objective::{objective_and_gradient, total_objective, LossBreakdown};
use crate::{Error, Result};

pub use grid::{grid_search, Grid, GridPoint};
pub use projection::{project_box, project_column_norm};
pub use ridge::{fit_ridge, RidgeModel};
pub use sparse_code::solve_b;
pub use transfer::{transfer_fit, TransferDictionary};

pub(crate) use projection::project_all;

const MAX_HALVINGS: usize = 30;
const INITIAL_STEP: f64 = 1.0;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    WB,
    U,
}

/// One recorded sub-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubStep {
    pub outer: usize,
    pub phase: Phase,
    pub before: f64,
    pub after: f64,
    /// The line search found no decrease at some point during the sub-step.
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective at initialization.
    pub initial: LossBreakdown,
    /// Objective after every outer round.
    pub history: Vec<LossBreakdown>,
    pub steps: Vec<SubStep>,
    pub converged: bool,
    /// Last accepted step sizes for `W` and the embeddings.
    pub final_step_w: f64,
    pub final_step_u: f64,
    /// Wall-clock seconds; the only non-deterministic field.
    pub wall_time_secs: f64,
}

/// Result of a single sub-step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub params: Params,
    pub before: f64,
    pub after: f64,
    pub stalled: bool,
    pub step_size: f64,
}

/// Which parameters may move. Frozen entries keep their initial values.
#[derive(Debug, Clone)]
pub(crate) struct Trainable {
    pub w: bool,
    pub u_cat: bool,
    pub u_sup: bool,
    pub u_attr: bool,
    /// Per node (zero-based); roots are always frozen at zero.
    pub b_cols: Vec<bool>,
}

impl Trainable {
    pub fn all(taxonomy: &Taxonomy) -> Self {
        Trainable {
            w: true,
            u_cat: true,
            u_sup: true,
            u_attr: true,
            b_cols: vec![true; taxonomy.len()],
        }
    }
}

#[derive(Clone, Copy)]
enum Block {
    W,
    U,
}

pub(crate) struct Trainer<'a> {
    dataset: &'a Dataset,
    hyper: &'a Hyperparams,
    trainable: Trainable,
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + x * y)
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, hyper: &'a Hyperparams, trainable: Trainable) -> Self {
        Trainer {
            dataset,
            hyper,
            trainable,
        }
    }

    fn objective(&self, p: &Params) -> Result<LossBreakdown> {
        let lb = total_objective(p, self.dataset, self.hyper)?;
        if !lb.total.is_finite() {
            return Err(Error::Divergence(format!("objective became {}", lb.total)));
        }
        Ok(lb)
    }

    /// Zeroes gradient entries outside `block` or frozen.
    fn mask(&self, g: &mut Params, block: Block) {
        let t = &self.trainable;
        let keep_w = matches!(block, Block::W) && t.w;
        let is_u = matches!(block, Block::U);
        if !keep_w {
            g.w.fill(0.0);
        }
        if !(is_u && t.u_cat) {
            g.u_cat.fill(0.0);
        }
        if !(is_u && t.u_sup) {
            g.u_sup.fill(0.0);
        }
        if !(is_u && t.u_attr) {
            g.u_attr.fill(0.0);
        }
        g.b.fill(0.0);
    }

    fn apply(&self, p: &Params, g: &Params, eta: f64, block: Block) -> Params {
        let mut c = p.clone();
        let h = self.hyper;
        match block {
            Block::W => {
                c.w.scaled_add(-eta, &g.w);
                projection::clamp_columns(&mut c.w, h.lambda);
            }
            Block::U => {
                c.u_cat.scaled_add(-eta, &g.u_cat);
                c.u_sup.scaled_add(-eta, &g.u_sup);
                c.u_attr.scaled_add(-eta, &g.u_attr);
                projection::clamp_columns(&mut c.u_cat, h.lambda);
                projection::clamp_columns(&mut c.u_sup, h.lambda);
                projection::clamp_columns(&mut c.u_attr, h.attr_bound());
            }
        }
        c
    }

    fn displacement_dot(&self, p: &Params, c: &Params, g: &Params, block: Block) -> (f64, bool) {
        match block {
            Block::W => {
                let dw = &p.w - &c.w;
                (dot(&g.w, &dw), dw.iter().all(|v| *v == 0.0))
            }
            Block::U => {
                let a = &p.u_cat - &c.u_cat;
                let b = &p.u_sup - &c.u_sup;
                let d = &p.u_attr - &c.u_attr;
                let still = a.iter().chain(b.iter()).chain(d.iter()).all(|v| *v == 0.0);
                (
                    dot(&g.u_cat, &a) + dot(&g.u_sup, &b) + dot(&g.u_attr, &d),
                    still,
                )
            }
        }
    }

    /// Up to `inner_iters` line-searched projected-subgradient moves on one
    /// block. Returns `(params, stalled, last step size)`.
    fn descend(&self, mut p: Params, block: Block, mut eta: f64) -> Result<(Params, bool, f64)> {
        let mut stalled = false;
        for _ in 0..self.hyper.inner_iters.max(1) {
            let (lb, mut g) = objective_and_gradient(&p, self.dataset, self.hyper)?;
            if !lb.total.is_finite() {
                return Err(Error::Divergence(format!("objective became {}", lb.total)));
            }
            self.mask(&mut g, block);
            if g.w
                .iter()
                .chain(g.u_cat.iter())
                .chain(g.u_sup.iter())
                .chain(g.u_attr.iter())
                .all(|v| *v == 0.0)
            {
                break;
            }
            let mut trial = (2.0 * eta).min(INITIAL_STEP);
            let mut accepted = None;
            let mut stationary = false;
            for _ in 0..=MAX_HALVINGS {
                let cand = self.apply(&p, &g, trial, block);
                let (decrease, still) = self.displacement_dot(&p, &cand, &g, block);
                if still {
                    stationary = true;
                    break;
                }
                let f = total_objective(&cand, self.dataset, self.hyper)?.total;
                if f.is_finite() && f < lb.total && f <= lb.total - ARMIJO * decrease {
                    accepted = Some(cand);
                    break;
                }
                trial *= 0.5;
            }
            match accepted {
                Some(c) => {
                    p = c;
                    eta = trial;
                }
                None => {
                    stalled = !stationary;
                    break;
                }
            }
        }
        Ok((p, stalled, eta))
    }

    /// `W` descent plus exact `B` re-solve, embeddings fixed.
    pub fn step_wb(&self, p: Params, eta: f64) -> Result<StepOutcome> {
        let before = self.objective(&p)?.total;
        let (mut p, stalled, eta) = if self.trainable.w {
            self.descend(p, Block::W, eta)?
        } else {
            (p, false, eta)
        };
        let h = self.hyper;
        let taxonomy = self.dataset.taxonomy();
        let b =
            sparse_code::solve_b_masked(&p, taxonomy, h.gamma1, h.gamma2, &self.trainable.b_cols);
        if sparse_code::reg_at(&p, &b, taxonomy, h.gamma2)
            < sparse_code::reg_at(&p, &p.b, taxonomy, h.gamma2)
        {
            p.b = b;
        }
        let after = self.objective(&p)?.total;
        Ok(StepOutcome {
            params: p,
            before,
            after,
            stalled,
            step_size: eta,
        })
    }

    /// Descent on the embedding blocks, `W` and `B` fixed.
    pub fn step_u(&self, p: Params, eta: f64) -> Result<StepOutcome> {
        let before = self.objective(&p)?.total;
        let (p, stalled, eta) = self.descend(p, Block::U, eta)?;
        let after = self.objective(&p)?.total;
        Ok(StepOutcome {
            params: p,
            before,
            after,
            stalled,
            step_size: eta,
        })
    }

    pub fn run(&self, mut p: Params) -> Result<(Params, TrainReport)> {
        let start = Instant::now();
        let initial = self.objective(&p)?;
        let mut report = TrainReport {
            initial,
            history: Vec::new(),
            steps: Vec::new(),
            converged: false,
            final_step_w: INITIAL_STEP / 2.0,
            final_step_u: INITIAL_STEP / 2.0,
            wall_time_secs: 0.0,
        };
        let mut prev = initial.total;
        for outer in 0..self.hyper.outer_iters {
            let wb = self.step_wb(p, report.final_step_w)?;
            report.final_step_w = wb.step_size;
            report.steps.push(SubStep {
                outer,
                phase: Phase::WB,
                before: wb.before,
                after: wb.after,
                stalled: wb.stalled,
            });
            let u = self.step_u(wb.params, report.final_step_u)?;
            report.final_step_u = u.step_size;
            report.steps.push(SubStep {
                outer,
                phase: Phase::U,
                before: u.before,
                after: u.after,
                stalled: u.stalled,
            });
            p = u.params;
            let lb = self.objective(&p)?;
            report.history.push(lb);
            let change = (prev - lb.total).abs();
            prev = lb.total;
            if change <= self.hyper.tol * lb.total.abs().max(f64::MIN_POSITIVE) {
                report.converged = true;
                break;
            }
        }
        report.wall_time_secs = start.elapsed().as_secs_f64();
        Ok((p, report))
    }
}

fn check_inputs(dataset: &Dataset, hyper: &Hyperparams) -> Result<()> {
    hyper.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Samples a `rows x cols` matrix whose columns lie uniformly on the sphere of
/// the given radius.
pub(crate) fn sphere_columns(
    rng: &mut impl Rng,
    rows: usize,
    cols: usize,
    radius: f64,
) -> Array2<f64> {
    let mut m = Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal));
    for mut col in m.axis_iter_mut(Axis(1)) {
        let n = col.dot(&col).sqrt();
        if n > 0.0 {
            col *= radius / n;
        }
    }
    m
}

/// Data embedding seeded from the ridge regressor: the top `d_e` right
/// singular directions scaled by their singular values.
fn ridge_warm_start(dataset: &Dataset, hyper: &Hyperparams) -> Result<Array2<f64>> {
    let ridge = fit_ridge(dataset, hyper.lambda)?;
    let coef = ridge
        .coef
        .slice(ndarray::s![..ridge.num_leaves, ..])
        .to_owned();
    let (_, sigma, vt) = crate::linalg::svd_sorted(&coef);
    let mut w = Array2::zeros((hyper.embed_dim, dataset.dim()));
    for k in 0..hyper.embed_dim.min(sigma.len()) {
        w.row_mut(k).assign(&(&vt.row(k) * sigma[k]));
    }
    projection::clamp_columns(&mut w, hyper.lambda);
    Ok(w)
}

/// Initial parameters: ridge-seeded `W`, embeddings on the sphere of radius
/// `sqrt(lambda)` (attributes then clamped to their tighter ball), `B` solved
/// for those embeddings.
pub(crate) fn initialize(dataset: &Dataset, hyper: &Hyperparams) -> Result<Params> {
    let t = dataset.taxonomy();
    let (c, s, a) = (
        t.num_leaves(),
        t.num_supers(),
        dataset.attributes().num_attributes(),
    );
    let de = hyper.embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let radius = hyper.lambda.sqrt();
    let mut p = Params::zeros(de, dataset.dim(), c, s, a);
    p.u_cat = sphere_columns(&mut rng, de, c, radius);
    p.u_sup = sphere_columns(&mut rng, de, s, radius);
    p.u_attr = sphere_columns(&mut rng, de, a, radius);
    p.w = ridge_warm_start(dataset, hyper)?;
    project_all(&mut p, hyper, t);
    p.b = sparse_code::solve_b_masked(&p, t, hyper.gamma1, hyper.gamma2, &vec![true; t.len()]);
    Ok(p)
}

/// Trains a unified semantic embedding.
pub fn fit(dataset: &Dataset, hyper: &Hyperparams) -> Result<(EmbeddingModel, TrainReport)> {
    check_inputs(dataset, hyper)?;
    let params = initialize(dataset, hyper)?;
    let trainer = Trainer::new(dataset, hyper, Trainable::all(dataset.taxonomy()));
    let (params, report) = trainer.run(params)?;
    let model = EmbeddingModel::new(
        params,
        dataset.taxonomy().clone(),
        dataset.attributes().names().to_vec(),
        hyper.clone(),
    )?;
    Ok((model, report))
}

/// Large-margin embedding baseline: category loss plus Frobenius penalties on
/// `W` and `U`, no supercategory, attribute or semantic terms.
pub fn fit_lme(dataset: &Dataset, hyper: &Hyperparams) -> Result<(EmbeddingModel, TrainReport)> {
    fit(dataset, &lme_hyperparams(hyper))
}

/// The hyperparameters [`fit_lme`] actually trains with.
pub fn lme_hyperparams(hyper: &Hyperparams) -> Hyperparams {
    Hyperparams {
        mu1: 0.0,
        mu2: 0.0,
        regularization: Regularization::Penalty,
        ..hyper.clone()
    }
}

/// One `W, B` sub-step on `params` with every parameter trainable.
pub fn step_wb(params: &Params, dataset: &Dataset, hyper: &Hyperparams) -> Result<StepOutcome> {
    check_inputs(dataset, hyper)?;
    Trainer::new(dataset, hyper, Trainable::all(dataset.taxonomy()))
        .step_wb(params.clone(), INITIAL_STEP / 2.0)
}

/// One embedding sub-step on `params` with every parameter trainable.
pub fn step_u(params: &Params, dataset: &Dataset, hyper: &Hyperparams) -> Result<StepOutcome> {
    check_inputs(dataset, hyper)?;
    Trainer::new(dataset, hyper, Trainable::all(dataset.taxonomy()))
        .step_u(params.clone(), INITIAL_STEP / 2.0)
}
