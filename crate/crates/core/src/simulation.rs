//! Monte Carlo comparison of exact matching and propensity weighting on simulated
//! pairs of studies.
//!
//! Each pair draws block-correlated Gaussian covariates for two studies (the second
//! with shifted means), simulates a response and cuts some covariates into ordered
//! categories. Every replication owns its random stream, keyed by the master seed and
//! the replication index, so results do not depend on scheduling or thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::data::{encode, Covariate, CovariateSchema, CovariateTable, Value};
use crate::matching::{self, ess, match_weights, MatchSpec};
use crate::numerics::{cholesky, CholeskyFactor, Matrix};
use crate::propensity::{self, fit_logistic, pooled_weights, Nu};
use crate::qp;
use crate::response::{difference_summary, DistributionSummary};

pub const RNG_NAME: &str =
    "ChaCha8 (rand_chacha); seed_from_u64(master seed), stream = replication index";

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        message: message.into(),
    }
}

/// A latent variable cut into ordered levels `A, B, …` at normal quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutRule {
    /// 0-based index of the latent variable.
    pub variable: usize,
    /// Cut points as standard-normal probabilities; level A is `x ≤ Φ⁻¹(p₁)`.
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseScale {
    /// Response drawn from the covariates before they are categorized.
    LatentContinuous,
    /// Categorized covariates enter through their level scores.
    PostCategorization,
}

impl ResponseScale {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponseScale::LatentContinuous => "latent_continuous",
            ResponseScale::PostCategorization => "post_categorization",
        }
    }
}

/// Numeric score of level `i` out of `k` used on the post-categorization scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LevelScores {
    /// `i / (k − 1)`, so binary variables score 0/1.
    #[default]
    UnitInterval,
    /// `i`
    Index,
}

impl LevelScores {
    fn score(self, level: usize, levels: usize) -> f64 {
        match self {
            LevelScores::UnitInterval => level as f64 / (levels - 1) as f64,
            LevelScores::Index => level as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_obs: [usize; 2],
    pub block_sizes: Vec<usize>,
    pub rho: Vec<f64>,
    /// Mean of the second study, one entry per latent variable.
    pub shift: Vec<f64>,
    pub cuts: Vec<CutRule>,
    /// Response coefficients, one per latent variable.
    pub coefficients: Vec<f64>,
    pub noise_sd: f64,
    pub response_scales: Vec<ResponseScale>,
    pub level_scores: LevelScores,
    pub replications: usize,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let mut shift = vec![0.0; 15];
        shift[0] = 1.0;
        shift[7] = 1.0;
        shift[14] = 1.0;
        let mut coefficients = vec![0.0; 15];
        for (i, b) in [(0, 0.3), (2, 0.2), (7, 0.3), (8, 0.1), (10, 0.2), (14, 0.1)] {
            coefficients[i] = b;
        }
        let cut = |variable: usize, probabilities: &[f64]| CutRule {
            variable,
            probabilities: probabilities.to_vec(),
        };
        Self {
            n_obs: [300, 300],
            block_sizes: vec![5, 5, 5],
            rho: vec![0.3, 0.5, 0.7],
            shift,
            cuts: vec![
                cut(0, &[0.238]),
                cut(1, &[0.312]),
                cut(2, &[0.12, 0.335, 0.68]),
                cut(5, &[0.439]),
                cut(6, &[0.581]),
                cut(7, &[0.23, 0.56]),
                cut(10, &[0.607]),
                cut(11, &[0.712]),
                cut(12, &[0.842]),
                cut(13, &[0.18, 0.3, 0.56, 0.72]),
            ],
            coefficients,
            noise_sd: 1.0,
            response_scales: vec![
                ResponseScale::LatentContinuous,
                ResponseScale::PostCategorization,
            ],
            level_scores: LevelScores::UnitInterval,
            replications: 1000,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn n_variables(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = self.n_variables();
        if self.n_obs.iter().any(|&n| n < 2) {
            return Err(invalid("n_obs", "each study needs at least 2 patients"));
        }
        if p == 0 || self.block_sizes.contains(&0) {
            return Err(invalid("block_sizes", "blocks must be non-empty"));
        }
        if self.rho.len() != self.block_sizes.len() {
            return Err(invalid("rho", "need one correlation per block"));
        }
        for (i, (&r, &size)) in self.rho.iter().zip(&self.block_sizes).enumerate() {
            // compound symmetry is positive definite iff −1/(size−1) < ρ < 1
            let lower = if size > 1 {
                -1.0 / (size - 1) as f64
            } else {
                -1.0
            };
            if !(r.is_finite() && r.abs() < 1.0 && r > lower) {
                return Err(invalid(
                    format!("rho[{i}]"),
                    format!("{r} gives a non-positive-definite block"),
                ));
            }
        }
        if self.shift.len() != p {
            return Err(invalid("shift", format!("expected {p} entries")));
        }
        if self.coefficients.len() != p {
            return Err(invalid("coefficients", format!("expected {p} entries")));
        }
        if self
            .shift
            .iter()
            .chain(&self.coefficients)
            .any(|v| !v.is_finite())
        {
            return Err(invalid("shift/coefficients", "non-finite entry"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(invalid("noise_sd", "must be finite and ≥ 0"));
        }
        let mut seen = vec![false; p];
        for (i, c) in self.cuts.iter().enumerate() {
            let field = format!("cuts[{i}]");
            if c.variable >= p {
                return Err(invalid(
                    field,
                    format!("variable {} out of range", c.variable),
                ));
            }
            if std::mem::replace(&mut seen[c.variable], true) {
                return Err(invalid(field, "variable cut twice"));
            }
            if c.probabilities.is_empty() || c.probabilities.len() > 25 {
                return Err(invalid(field, "need between 1 and 25 cut points"));
            }
            if c.probabilities.iter().any(|q| !(*q > 0.0 && *q < 1.0))
                || c.probabilities.windows(2).any(|w| w[0] >= w[1])
            {
                return Err(invalid(
                    field,
                    "cut probabilities must be strictly increasing in (0, 1)",
                ));
            }
        }
        if self.response_scales.is_empty() {
            return Err(invalid("response_scales", "at least one scale required"));
        }
        if self.replications == 0 {
            return Err(invalid("replications", "must be at least 1"));
        }
        Ok(())
    }

    /// Block compound-symmetric correlation matrix.
    pub fn correlation(&self) -> Matrix {
        let p = self.n_variables();
        let mut m = Matrix::identity(p);
        let mut start = 0;
        for (&size, &r) in self.block_sizes.iter().zip(&self.rho) {
            for i in start..start + size {
                for j in start..start + size {
                    if i != j {
                        m.set(i, j, r);
                    }
                }
            }
            start += size;
        }
        m
    }

    fn thresholds(&self) -> Vec<Option<Vec<f64>>> {
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let mut out = vec![None; self.n_variables()];
        for c in &self.cuts {
            out[c.variable] = Some(
                c.probabilities
                    .iter()
                    .map(|&q| normal.inverse_cdf(q))
                    .collect(),
            );
        }
        out
    }
}

/// Prepared generator for one configuration.
pub struct Generator {
    cfg: SimulationConfig,
    chol: CholeskyFactor,
    thresholds: Vec<Option<Vec<f64>>>,
    schema: CovariateSchema,
}

pub struct SimulatedPair {
    pub table: CovariateTable,
    /// Latent Gaussian covariates, study 0 rows first.
    pub latent: Vec<Vec<f64>>,
    pub responses: BTreeMap<ResponseScale, Vec<f64>>,
}

impl SimulatedPair {
    /// Response on `scale` split by study.
    pub fn response(&self, scale: ResponseScale) -> Option<[&[f64]; 2]> {
        let y = self.responses.get(&scale)?;
        let n0 = self.table.study_size(0);
        Some([&y[..n0], &y[n0..]])
    }
}

fn level_names(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| {
            let mut s = String::new();
            let mut v = i;
            loop {
                s.insert(0, (b'A' + (v % 26) as u8) as char);
                if v < 26 {
                    break;
                }
                v = v / 26 - 1;
            }
            s
        })
        .collect()
}

impl Generator {
    pub fn new(cfg: &SimulationConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let chol = cholesky(&cfg.correlation()).map_err(|e| invalid("rho", e.to_string()))?;
        let thresholds = cfg.thresholds();
        let covariates = thresholds
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let name = format!("X{}", i + 1);
                match t {
                    None => Covariate::continuous(name),
                    Some(t) if t.len() == 1 => {
                        let mut c = Covariate::binary(name);
                        c.kind = crate::data::CovariateKind::Binary {
                            levels: Some(["A".into(), "B".into()]),
                        };
                        c
                    }
                    Some(t) => Covariate::categorical(name, level_names(t.len() + 1)),
                }
            })
            .collect();
        let schema =
            CovariateSchema::new(covariates).map_err(|e| invalid("cuts", e.to_string()))?;
        Ok(Self {
            cfg: cfg.clone(),
            chol,
            thresholds,
            schema,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.cfg
    }

    pub fn rng_for(&self, replication: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(replication as u64);
        rng
    }

    pub fn generate(&self, replication: usize) -> SimulatedPair {
        self.generate_with(&mut self.rng_for(replication))
    }

    pub fn generate_with<R: Rng>(&self, rng: &mut R) -> SimulatedPair {
        let cfg = &self.cfg;
        let p = cfg.n_variables();
        let n_total = cfg.n_obs[0] + cfg.n_obs[1];
        let lower = self.chol.lower();
        let mut latent = Vec::with_capacity(n_total);
        let mut study = Vec::with_capacity(n_total);
        let mut z = vec![0.0; p];
        for k in 0..2u8 {
            for _ in 0..cfg.n_obs[k as usize] {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let x: Vec<f64> = (0..p)
                    .map(|i| {
                        let row = lower.row(i);
                        let mean = if k == 1 { cfg.shift[i] } else { 0.0 };
                        mean + (0..=i).map(|j| row[j] * z[j]).sum::<f64>()
                    })
                    .collect();
                latent.push(x);
                study.push(k);
            }
        }
        // one noise draw per patient, shared by every response scale
        let noise: Vec<f64> = (0..n_total)
            .map(|_| cfg.noise_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();

        let mut values = Vec::with_capacity(n_total);
        let mut scored = Vec::with_capacity(n_total);
        for x in &latent {
            let mut row = Vec::with_capacity(p);
            let mut s = Vec::with_capacity(p);
            for (i, &v) in x.iter().enumerate() {
                match &self.thresholds[i] {
                    None => {
                        row.push(Value::Number(v));
                        s.push(v);
                    }
                    Some(t) => {
                        let level = t.iter().take_while(|&&c| v > c).count();
                        row.push(if t.len() == 1 {
                            Value::Number(level as f64)
                        } else {
                            Value::Level(level)
                        });
                        s.push(cfg.level_scores.score(level, t.len() + 1));
                    }
                }
            }
            values.push(row);
            scored.push(s);
        }
        let linear = |rows: &[Vec<f64>]| -> Vec<f64> {
            rows.iter()
                .zip(&noise)
                .map(|(x, e)| {
                    x.iter()
                        .zip(&cfg.coefficients)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        + e
                })
                .collect()
        };
        let mut responses = BTreeMap::new();
        for &scale in &cfg.response_scales {
            let y = match scale {
                ResponseScale::LatentContinuous => linear(&latent),
                ResponseScale::PostCategorization => linear(&scored),
            };
            responses.insert(scale, y);
        }
        let primary = responses[&cfg.response_scales[0]].clone();
        let table = CovariateTable::new(self.schema.clone(), study, values, Some(primary))
            .expect("generated rows match the schema")
            .with_study_labels(["IPD A".into(), "IPD B".into()]);
        SimulatedPair {
            table,
            latent,
            responses,
        }
    }
}

/// Simulated pair for replication `r`.
pub fn generate_pair(
    cfg: &SimulationConfig,
    replication: usize,
) -> Result<SimulatedPair, ConfigError> {
    Ok(Generator::new(cfg)?.generate(replication))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Unconstrained,
    Constrained,
    Propensity,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::Unconstrained,
        Method::Constrained,
        Method::Propensity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Unconstrained => "unconstrained",
            Method::Constrained => "constrained",
            Method::Propensity => "propensity",
        }
    }
}

/// What one replication produced for one weighting method; `None` when no weights exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub ess: Option<[f64; 2]>,
    /// Largest weight as a percentage of its study's total weight.
    pub max_standardized_weight: Option<f64>,
    /// Weighted `ȳ₀ − ȳ₁` per response scale.
    pub ydiff: BTreeMap<ResponseScale, f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    /// Unweighted `ȳ₀ − ȳ₁` per response scale.
    pub observed_ydiff: BTreeMap<ResponseScale, f64>,
    pub methods: BTreeMap<Method, MethodOutcome>,
    pub ps_separation: bool,
}

fn mean_diff(y: [&[f64]; 2], w: Option<&[Vec<f64>; 2]>) -> f64 {
    let m = |k: usize| match w {
        None => y[k].iter().sum::<f64>() / y[k].len() as f64,
        Some(w) => {
            y[k].iter().zip(&w[k]).map(|(a, b)| a * b).sum::<f64>() / w[k].iter().sum::<f64>()
        }
    };
    m(0) - m(1)
}

fn outcome(
    pair: &SimulatedPair,
    weights: Option<&[Vec<f64>; 2]>,
    note: Option<String>,
) -> MethodOutcome {
    let Some(w) = weights else {
        return MethodOutcome {
            ess: None,
            max_standardized_weight: None,
            ydiff: BTreeMap::new(),
            note,
        };
    };
    let ess_k = match (ess(&w[0]), ess(&w[1])) {
        (Ok(a), Ok(b)) => Some([a, b]),
        _ => None,
    };
    let max_std = (0..2)
        .flat_map(|k| {
            let total: f64 = w[k].iter().sum();
            w[k].iter().map(move |v| 100.0 * v / total)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let ydiff = pair
        .responses
        .keys()
        .map(|&s| {
            (
                s,
                mean_diff(pair.response(s).expect("scale present"), Some(w)),
            )
        })
        .collect();
    MethodOutcome {
        ess: ess_k,
        max_standardized_weight: Some(max_std),
        ydiff,
        note,
    }
}

/// Runs the three weighting methods on one simulated pair.
pub fn run_replication(generator: &Generator, index: usize) -> ReplicationRecord {
    let pair = generator.generate(index);
    let dm = encode(&pair.table);
    let observed_ydiff = pair
        .responses
        .keys()
        .map(|&s| (s, mean_diff(pair.response(s).expect("scale present"), None)))
        .collect();
    let mut methods = BTreeMap::new();
    for (method, spec) in [
        (Method::Unconstrained, MatchSpec::unconstrained()),
        (Method::Constrained, MatchSpec::constrained()),
    ] {
        let o = match match_weights(&dm, &spec) {
            Ok(s) if s.is_matched() => outcome(&pair, Some(&s.weights), None),
            Ok(_) => outcome(&pair, None, Some("no_solution".into())),
            Err(e) => outcome(&pair, None, Some(e.to_string())),
        };
        methods.insert(method, o);
    }
    let mut ps_separation = false;
    let ps = fit_logistic(&dm).and_then(|m| {
        ps_separation = m.separation;
        pooled_weights(&m, Nu::Observed, None)
    });
    let o = match ps {
        Ok(w) => outcome(&pair, Some(&w.weights), None),
        Err(e) => outcome(&pair, None, Some(e.to_string())),
    };
    methods.insert(Method::Propensity, o);
    ReplicationRecord {
        index,
        observed_ydiff,
        methods,
        ps_separation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub ess: [DistributionSummary; 2],
    pub max_standardized_weight: DistributionSummary,
    pub ydiff: BTreeMap<ResponseScale, DistributionSummary>,
    /// Replications without weights (no exact solution or a failed fit).
    pub no_solution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetadata {
    pub tool_version: String,
    pub rng: String,
    pub seed: u64,
    pub replications: usize,
    pub propensity_nu: String,
    pub max_weight_scale: String,
    pub ydiff_sign: String,
    pub qp_feasibility_tol: f64,
    pub qp_dependence_tol: f64,
    pub row_dependence_tol: f64,
    pub score_tol: f64,
    pub ps_separation_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub config: SimulationConfig,
    pub observed_ydiff: BTreeMap<ResponseScale, DistributionSummary>,
    pub methods: BTreeMap<Method, MethodSummary>,
    pub metadata: SummaryMetadata,
}

pub struct StudyRun {
    pub summary: SimulationSummary,
    pub records: Vec<ReplicationRecord>,
}

/// Runs every replication on the current rayon pool; `progress` sees the number of
/// completed replications at every multiple of 100 and at the end.
pub fn run_study_with_progress(
    cfg: &SimulationConfig,
    progress: impl Fn(usize) + Sync,
) -> Result<StudyRun, ConfigError> {
    let generator = Generator::new(cfg)?;
    let done = AtomicUsize::new(0);
    let records: Vec<ReplicationRecord> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let rec = run_replication(&generator, r);
            let d = done.fetch_add(1, Ordering::Relaxed) + 1;
            if d.is_multiple_of(100) || d == cfg.replications {
                progress(d);
            }
            rec
        })
        .collect();
    let summary = summarize(cfg, &records);
    Ok(StudyRun { summary, records })
}

pub fn run_study(cfg: &SimulationConfig) -> Result<StudyRun, ConfigError> {
    run_study_with_progress(cfg, |_| {})
}

/// Aggregates records (in replication order) into a summary.
pub fn summarize(cfg: &SimulationConfig, records: &[ReplicationRecord]) -> SimulationSummary {
    let scales = &cfg.response_scales;
    let observed_ydiff = scales
        .iter()
        .map(|&s| {
            let v: Vec<Option<f64>> = records
                .iter()
                .map(|r| r.observed_ydiff.get(&s).copied())
                .collect();
            (s, difference_summary(&v))
        })
        .collect();
    let methods = Method::ALL
        .iter()
        .map(|&m| {
            let outs: Vec<&MethodOutcome> = records.iter().map(|r| &r.methods[&m]).collect();
            let ess_k = [0, 1].map(|k| {
                difference_summary(&outs.iter().map(|o| o.ess.map(|e| e[k])).collect::<Vec<_>>())
            });
            let maxw = difference_summary(
                &outs
                    .iter()
                    .map(|o| o.max_standardized_weight)
                    .collect::<Vec<_>>(),
            );
            let ydiff = scales
                .iter()
                .map(|&s| {
                    (
                        s,
                        difference_summary(
                            &outs
                                .iter()
                                .map(|o| o.ydiff.get(&s).copied())
                                .collect::<Vec<_>>(),
                        ),
                    )
                })
                .collect();
            let summary = MethodSummary {
                ess: ess_k,
                max_standardized_weight: maxw,
                ydiff,
                no_solution: outs
                    .iter()
                    .filter(|o| o.max_standardized_weight.is_none())
                    .count(),
            };
            (m, summary)
        })
        .collect();
    SimulationSummary {
        config: cfg.clone(),
        observed_ydiff,
        methods,
        metadata: SummaryMetadata {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            rng: RNG_NAME.into(),
            seed: cfg.seed,
            replications: records.len(),
            propensity_nu: "observed".into(),
            max_weight_scale: "percent of the study's total weight".into(),
            ydiff_sign: "study 0 mean minus study 1 mean".into(),
            qp_feasibility_tol: qp::FEASIBILITY_TOL,
            qp_dependence_tol: qp::DEPENDENCE_TOL,
            row_dependence_tol: matching::ROW_DEPENDENCE_TOL,
            score_tol: propensity::SCORE_TOL,
            ps_separation_count: records.iter().filter(|r| r.ps_separation).count(),
        },
    }
}

const STATS_HEADER: &str = "count,na,min,q1,median,mean,q3,max,sd";

fn stats_row(d: &DistributionSummary) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_else(|| "NA".into());
    format!(
        "{},{},{},{},{},{},{},{},{}",
        d.count,
        d.na_count,
        f(d.min),
        f(d.q1),
        f(d.median),
        f(d.mean),
        f(d.q3),
        f(d.max),
        f(d.sd)
    )
}

impl SimulationSummary {
    pub fn ess_csv(&self) -> String {
        let mut out = format!("method,study,{STATS_HEADER}\n");
        for (m, s) in &self.methods {
            for k in 0..2 {
                writeln!(out, "{},{},{}", m.as_str(), k, stats_row(&s.ess[k])).unwrap();
            }
        }
        out
    }

    pub fn max_weights_csv(&self) -> String {
        let mut out = format!("method,{STATS_HEADER}\n");
        for (m, s) in &self.methods {
            writeln!(
                out,
                "{},{}",
                m.as_str(),
                stats_row(&s.max_standardized_weight)
            )
            .unwrap();
        }
        out
    }

    pub fn ydiff_csv(&self) -> String {
        let mut out = format!("scale,method,{STATS_HEADER}\n");
        for (scale, d) in &self.observed_ydiff {
            writeln!(out, "{},observed,{}", scale.as_str(), stats_row(d)).unwrap();
            for (m, s) in &self.methods {
                if let Some(d) = s.ydiff.get(scale) {
                    writeln!(out, "{},{},{}", scale.as_str(), m.as_str(), stats_row(d)).unwrap();
                }
            }
        }
        out
    }
}

/// One line per replication and method.
pub fn replications_csv(records: &[ReplicationRecord]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_else(|| "NA".into());
    let mut out = String::from("replication,method,ess0,ess1,max_standardized_weight,ydiff_latent,ydiff_categorized,note\n");
    for r in records {
        for (m, o) in &r.methods {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.index,
                m.as_str(),
                f(o.ess.map(|e| e[0])),
                f(o.ess.map(|e| e[1])),
                f(o.max_standardized_weight),
                f(o.ydiff.get(&ResponseScale::LatentContinuous).copied()),
                f(o.ydiff.get(&ResponseScale::PostCategorization).copied()),
                o.note.as_deref().unwrap_or("")
            )
            .unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateKind;
    use approx::assert_abs_diff_eq;

    fn big(n: usize) -> SimulationConfig {
        SimulationConfig {
            n_obs: [n, n],
            replications: 1,
            seed: 11,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn default_schema_shapes() {
        let g = Generator::new(&SimulationConfig::default()).unwrap();
        let kinds: Vec<usize> = g
            .schema
            .covariates()
            .iter()
            .map(|c| match &c.kind {
                CovariateKind::Continuous => 0,
                CovariateKind::Binary { .. } => 2,
                CovariateKind::Categorical { levels } => levels.len(),
            })
            .collect();
        assert_eq!(kinds, vec![2, 2, 4, 0, 0, 2, 2, 3, 0, 0, 2, 2, 2, 5, 0]);
    }

    #[test]
    fn null_configuration_is_iid_standard_normal() {
        let cfg = SimulationConfig {
            rho: vec![0.0; 3],
            shift: vec![0.0; 15],
            cuts: vec![],
            ..big(20_000)
        };
        let pair = generate_pair(&cfg, 0).unwrap();
        for k in 0..2 {
            let rows = &pair.latent[k * 20_000..(k + 1) * 20_000];
            for j in [0, 7, 14] {
                let m = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
                let v = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / rows.len() as f64;
                assert!(m.abs() < 0.03, "mean {m}");
                assert!((v - 1.0).abs() < 0.04, "var {v}");
            }
        }
    }

    #[test]
    fn shifted_mean_and_level_proportions() {
        let pair = generate_pair(&big(100_000), 3).unwrap();
        let n = 100_000;
        let b_mean = pair.latent[n..].iter().map(|r| r[0]).sum::<f64>() / n as f64;
        assert!((b_mean - 1.0).abs() < 0.02, "{b_mean}");

        let mut counts = [0usize; 4];
        for row in &pair.table.values()[..n] {
            let Value::Level(l) = row[2] else { panic!() };
            counts[l] += 1;
        }
        for (c, want) in counts.iter().zip([0.12, 0.215, 0.345, 0.32]) {
            assert!((*c as f64 / n as f64 - want).abs() < 0.01);
        }
    }

    #[test]
    fn sample_covariance_matches_sigma() {
        let pair = generate_pair(&big(100_000), 5).unwrap();
        let rows = &pair.latent[..100_000];
        let sigma = SimulationConfig::default().correlation();
        let p = 15;
        let mean: Vec<f64> = (0..p)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
            .collect();
        for i in 0..p {
            for j in 0..=i {
                let c = rows
                    .iter()
                    .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                    .sum::<f64>()
                    / rows.len() as f64;
                assert!((c - sigma.get(i, j)).abs() < 0.02, "({i},{j}) {c}");
            }
        }
    }

    #[test]
    fn replications_are_reproducible_and_distinct() {
        let cfg = SimulationConfig::default();
        let g = Generator::new(&cfg).unwrap();
        assert_eq!(g.generate(4).latent, g.generate(4).latent);
        assert_ne!(g.generate(4).latent, g.generate(5).latent);
    }

    #[test]
    fn post_categorization_scores() {
        assert_abs_diff_eq!(LevelScores::UnitInterval.score(2, 5), 0.5);
        assert_abs_diff_eq!(LevelScores::UnitInterval.score(1, 2), 1.0);
        assert_abs_diff_eq!(LevelScores::Index.score(3, 4), 3.0);
    }

    #[test]
    fn validation_names_fields() {
        let bad = |f: fn(&mut SimulationConfig)| {
            let mut c = SimulationConfig::default();
            f(&mut c);
            c.validate().unwrap_err().field
        };
        assert_eq!(bad(|c| c.replications = 0), "replications");
        assert_eq!(bad(|c| c.rho[1] = 1.0), "rho[1]");
        assert_eq!(bad(|c| c.cuts[2].probabilities = vec![0.5, 0.4]), "cuts[2]");
        assert_eq!(bad(|c| c.shift.pop().map(drop).unwrap()), "shift");
    }

    #[test]
    fn config_json_round_trip_with_defaults() {
        let c: SimulationConfig =
            serde_json::from_str(r#"{"replications": 5, "seed": 9}"#).unwrap();
        assert_eq!(c.replications, 5);
        assert_eq!(c.n_obs, [300, 300]);
        let back: SimulationConfig =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<SimulationConfig>(r#"{"replicates": 5}"#).is_err());
    }

    #[test]
    fn one_replication_runs_all_methods() {
        let cfg = SimulationConfig {
            replications: 2,
            seed: 1,
            ..SimulationConfig::default()
        };
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a.summary).unwrap(),
            serde_json::to_string(&b.summary).unwrap()
        );
        let u = &a.records[0].methods[&Method::Unconstrained];
        // uniform weights would give 100/300 percent
        assert!(u.max_standardized_weight.unwrap() >= 100.0 / 300.0);
        assert_eq!(a.summary.ydiff_csv().lines().count(), 1 + 2 * 4);
    }

    #[test]
    fn level_labels() {
        assert_eq!(level_names(3), vec!["A", "B", "C"]);
        assert_eq!(level_names(28)[26..], ["AA".to_string(), "AB".to_string()]);
    }
}
