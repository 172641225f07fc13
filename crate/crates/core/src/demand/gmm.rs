//! Two-step GMM with linear parameters concentrated out.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConsumerDraws, DemandParams, Instruments, MarketDemand, Xi, CONTRACTION_MAX_ITER, CONTRACTION_TOL};
use crate::error::{Error, Result};
use crate::linalg;
use crate::market_data::{MarketConfig, WicAssignment, DEMO_INCOME};

const NONLINEAR_NAMES: [&str; 3] = ["sigma_price", "sigma_const", "pi_income"];
const FAILED_OBJECTIVE: f64 = 1e20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    /// Which of (sigma_price, sigma_const, pi_income) are searched; the rest stay at `init`.
    pub estimate_nonlinear: [bool; 3],
    pub max_iter: u64,
    pub contraction_tol: f64,
    /// Overrides the mean of market median incomes as the income center.
    pub income_center: Option<f64>,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            estimate_nonlinear: [true, true, true],
            max_iter: 400,
            contraction_tol: CONTRACTION_TOL,
            income_center: None,
        }
    }
}

impl GmmOptions {
    pub fn linear_only() -> Self {
        Self { estimate_nonlinear: [false; 3], ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketXi {
    pub market_id: String,
    pub product_ids: Vec<String>,
    pub xi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandEstimate {
    pub params: DemandParams,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    /// `None` for parameters fixed or without support in the data.
    pub std_errors: Vec<Option<f64>>,
    pub objective: f64,
    pub n_obs: usize,
    pub instrument_names: Vec<String>,
    pub xi: Vec<MarketXi>,
}

impl DemandEstimate {
    pub fn xi_for(&self, market_id: &str) -> Option<Xi> {
        self.xi.iter().find(|m| m.market_id == market_id).map(|m| Xi(m.xi.clone()))
    }
}

struct Problem<'a> {
    markets: &'a [MarketConfig],
    draws: &'a [ConsumerDraws],
    z: &'a DMatrix<f64>,
    x: DMatrix<f64>,
    template: DemandParams,
    free: Vec<usize>,
    tol: f64,
}

struct Evaluation {
    delta: DVector<f64>,
    theta1: DVector<f64>,
    xi: DVector<f64>,
    objective: f64,
}

impl Problem<'_> {
    fn params_at(&self, theta2: &[f64]) -> DemandParams {
        let mut p = self.template.clone();
        for (v, idx) in theta2.iter().zip(&self.free) {
            match idx {
                0 => p.sigma_price = v.abs(),
                1 => p.sigma_const = v.abs(),
                _ => p.pi_income = *v,
            }
        }
        p
    }

    fn deltas(&self, params: &DemandParams) -> Result<DVector<f64>> {
        let parts: Vec<Result<Vec<f64>>> = self
            .markets
            .par_iter()
            .zip(self.draws.par_iter())
            .map(|(m, d)| {
                let xi = Xi::zeros(m.product_count());
                let md = MarketDemand::new(params, m, &xi, &WicAssignment::from_option(m.winner.as_deref()), d)?;
                md.invert(&m.shares, &m.prices, self.tol, CONTRACTION_MAX_ITER)
            })
            .collect();
        let mut out = Vec::with_capacity(self.z.nrows());
        for p in parts {
            out.extend(p?);
        }
        Ok(DVector::from_vec(out))
    }

    fn evaluate(&self, theta2: &[f64], w: &DMatrix<f64>) -> Result<Evaluation> {
        let delta = self.deltas(&self.params_at(theta2))?;
        let theta1 = linear_iv(&self.x, self.z, w, &delta)?;
        let xi = &delta - &self.x * &theta1;
        let n = self.z.nrows() as f64;
        let g = self.z.transpose() * &xi / n;
        let objective = (g.transpose() * w * &g)[(0, 0)];
        Ok(Evaluation { delta, theta1, xi, objective })
    }
}

struct Objective<'a> {
    problem: &'a Problem<'a>,
    w: &'a DMatrix<f64>,
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta2: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(match self.problem.evaluate(theta2, self.w) {
            Ok(e) if e.objective.is_finite() => e.objective,
            _ => FAILED_OBJECTIVE,
        })
    }
}

fn linear_iv(x: &DMatrix<f64>, z: &DMatrix<f64>, w: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let zx = z.transpose() * x;
    let zy = z.transpose() * y;
    let a = zx.transpose() * w * &zx;
    let b = zx.transpose() * w * zy;
    linalg::solve(&a, &b, "linear IV normal equations")
}

fn minimize(problem: &Problem, w: &DMatrix<f64>, start: &[f64], max_iter: u64) -> Result<Vec<f64>> {
    if start.is_empty() {
        return Ok(Vec::new());
    }
    let mut simplex = vec![start.to_vec()];
    for k in 0..start.len() {
        let mut v = start.to_vec();
        v[k] += (0.5 * v[k].abs()).max(0.1);
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-10).map_err(|e| Error::Numerical(e.to_string()))?;
    let res = Executor::new(Objective { problem, w }, solver)
        .configure(|st| st.max_iters(max_iter))
        .run()
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let best =
        res.state().best_param.clone().ok_or_else(|| Error::Numerical("optimizer returned no parameter".into()))?;
    Ok(best)
}

/// Design columns: characteristics, −price, win-firm dummy, win-auction-brand dummy.
fn design(markets: &[MarketConfig]) -> (DMatrix<f64>, Vec<String>) {
    let k = markets[0].characteristic_names.len();
    let n: usize = markets.iter().map(|m| m.product_count()).sum();
    let mut x = DMatrix::zeros(n, k + 3);
    let mut row = 0;
    for m in markets {
        for (j, p) in m.products.iter().enumerate() {
            for c in 0..k {
                x[(row, c)] = p.characteristics[c];
            }
            x[(row, k)] = -m.prices[j];
            let won = m.winner.as_deref() == Some(p.firm_id.as_str());
            if won {
                x[(row, k + 1)] = 1.0;
                if p.is_auction_brand {
                    x[(row, k + 2)] = 1.0;
                }
            }
            row += 1;
        }
    }
    let mut names: Vec<String> = markets[0].characteristic_names.iter().map(|n| format!("beta_{n}")).collect();
    names.extend(["alpha", "delta0", "delta1"].map(String::from));
    (x, names)
}

/// Design of exogenous regressors (all design columns except price).
pub fn exogenous_columns(markets: &[MarketConfig]) -> (DMatrix<f64>, Vec<String>) {
    let (x, names) = design(markets);
    let k = markets[0].characteristic_names.len();
    let keep: Vec<usize> = (0..x.ncols()).filter(|c| *c != k).collect();
    (x.select_columns(keep.iter()), keep.iter().map(|c| names[*c].clone()).collect())
}

pub fn gmm_estimate(
    markets: &[MarketConfig],
    instruments: &Instruments,
    draws: &[ConsumerDraws],
    init: &DemandParams,
    options: &GmmOptions,
) -> Result<DemandEstimate> {
    if markets.is_empty() {
        return Err(Error::invalid("no markets to estimate on"));
    }
    if draws.len() != markets.len() {
        return Err(Error::dimension("consumer draws per market", markets.len(), draws.len()));
    }
    for m in markets {
        m.validate()?;
    }
    let (x_full, names_full) = design(markets);
    let n = x_full.nrows();
    let z = &instruments.z;
    if z.nrows() != n {
        return Err(Error::dimension("instrument rows", n, z.nrows()));
    }
    // columns with no support (e.g. no market has a winner) are not estimable
    let supported: Vec<usize> = (0..x_full.ncols()).filter(|c| x_full.column(*c).iter().any(|v| *v != 0.0)).collect();
    let x = x_full.select_columns(supported.iter());
    let free: Vec<usize> = (0..3).filter(|i| options.estimate_nonlinear[*i]).collect();

    let z_rank = linalg::column_rank(z);
    if z_rank < z.ncols() {
        return Err(Error::RankDeficient { what: "instrument matrix", rank: z_rank, required: z.ncols() });
    }
    let required = x.ncols() + free.len();
    if z.ncols() < required {
        return Err(Error::RankDeficient { what: "instrument count", rank: z.ncols(), required });
    }
    let zx_rank = linalg::column_rank(&(z.transpose() * &x));
    if zx_rank < x.ncols() {
        return Err(Error::RankDeficient { what: "Z'X", rank: zx_rank, required: x.ncols() });
    }

    let mut template = init.clone();
    template.validate(markets[0].characteristic_names.len())?;
    template.income_center = options.income_center.unwrap_or_else(|| {
        markets.iter().map(|m| m.demographics.get(DEMO_INCOME).copied().unwrap_or(0.0)).sum::<f64>()
            / markets.len() as f64
    });
    let problem = Problem { markets, draws, z, x, template, free: free.clone(), tol: options.contraction_tol };
    let start: Vec<f64> = free
        .iter()
        .map(|i| match i {
            0 => init.sigma_price,
            1 => init.sigma_const,
            _ => init.pi_income,
        })
        .collect();

    let nf = n as f64;
    let w1 = linalg::inverse(&(z.transpose() * z / nf), "first-step weighting matrix")?;
    let theta_a = minimize(&problem, &w1, &start, options.max_iter)?;
    let first = problem.evaluate(&theta_a, &w1)?;
    let s1 = moment_covariance(z, &first.xi);
    let w2 = linalg::inverse(&s1, "second-step weighting matrix")?;
    let theta_b = minimize(&problem, &w2, &theta_a, options.max_iter)?;
    let fin = problem.evaluate(&theta_b, &w2)?;
    let params = problem.params_at(&theta_b);

    // sandwich covariance over (supported linear, free nonlinear)
    let s = moment_covariance(z, &fin.xi);
    let mut g = DMatrix::zeros(z.ncols(), problem.x.ncols() + free.len());
    let zx = -(z.transpose() * &problem.x) / nf;
    g.view_mut((0, 0), zx.shape()).copy_from(&zx);
    if !free.is_empty() {
        let dd = delta_derivatives(&problem, &params, &fin.delta)?;
        let zd = z.transpose() * dd.select_columns(free.iter()) / nf;
        g.view_mut((0, problem.x.ncols()), zd.shape()).copy_from(&zd);
    }
    let gwg = g.transpose() * &w2 * &g;
    let bread = linalg::inverse(&gwg, "GMM Hessian G'WG")?;
    let meat = g.transpose() * &w2 * &s * &w2 * &g;
    let v = &bread * meat * &bread / nf;

    let k = markets[0].characteristic_names.len();
    let mut out = params.clone();
    let mut estimates = vec![0.0; names_full.len()];
    let mut std_errors: Vec<Option<f64>> = vec![None; names_full.len()];
    for (pos, col) in supported.iter().enumerate() {
        estimates[*col] = fin.theta1[pos];
        std_errors[*col] = Some(v[(pos, pos)].max(0.0).sqrt());
    }
    out.beta = estimates[..k].to_vec();
    out.alpha = estimates[k];
    out.delta0 = estimates[k + 1];
    out.delta1 = estimates[k + 2];
    let mut names = names_full;
    for (t, idx) in [out.sigma_price, out.sigma_const, out.pi_income].iter().zip(0..3) {
        names.push(NONLINEAR_NAMES[idx].to_string());
        estimates.push(*t);
        std_errors.push(free.iter().position(|f| *f == idx).map(|p| {
            let d = problem.x.ncols() + p;
            v[(d, d)].max(0.0).sqrt()
        }));
    }
    if !(out.alpha > 0.0) {
        return Err(Error::Numerical(format!("estimated alpha {} is not positive", out.alpha)));
    }

    let mut xi = Vec::with_capacity(markets.len());
    let mut row = 0;
    for m in markets {
        let j = m.product_count();
        xi.push(MarketXi {
            market_id: m.market_id.clone(),
            product_ids: m.products.iter().map(|p| p.product_id.clone()).collect(),
            xi: fin.xi.rows(row, j).iter().copied().collect(),
        });
        row += j;
    }

    Ok(DemandEstimate {
        params: out,
        names,
        estimates,
        std_errors,
        objective: fin.objective,
        n_obs: n,
        instrument_names: instruments.names.clone(),
        xi,
    })
}

fn moment_covariance(z: &DMatrix<f64>, xi: &DVector<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let mut s = DMatrix::zeros(z.ncols(), z.ncols());
    for r in 0..n {
        let zr = z.row(r).transpose();
        s += (&zr * zr.transpose()) * (xi[r] * xi[r]);
    }
    s / n as f64
}

/// `∂delta/∂(sigma_price, sigma_const, pi_income)` by the implicit function theorem.
fn delta_derivatives(problem: &Problem, params: &DemandParams, delta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = delta.len();
    let mut out = DMatrix::zeros(n, 3);
    let mut row = 0;
    for (m, d) in problem.markets.iter().zip(problem.draws) {
        let j = m.product_count();
        let md = MarketDemand::new(params, m, &Xi::zeros(j), &WicAssignment::from_option(m.winner.as_deref()), d)?;
        let dm: Vec<f64> = delta.rows(row, j).iter().copied().collect();
        let ds_dd = md.delta_jacobian(&dm, &m.prices);
        let ds_dt = md.nonlinear_jacobian(&dm, &m.prices);
        let sol = ds_dd
            .lu()
            .solve(&ds_dt)
            .ok_or_else(|| Error::Singular(format!("share Jacobian of market {}", m.market_id)))?;
        out.view_mut((row, 0), (j, 3)).copy_from(&(-sol));
        row += j;
    }
    Ok(out)
}
