//! Closed-loop experiments: a hidden plant driven by the data-driven controller.
//!
//! The plant state never reaches the controller. It only sees the offline data and
//! the measured input-output history; the state is used here to compute the oracle
//! metrics (distance to the reference steady state).

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::equilibria::{optimal_reachable_equilibrium, EquilibriumOptions, TargetSetpoint};
use crate::error::{Error, Result};
use crate::hankel::{generate_data, DataTrajectory};
use crate::linalg::quad_form;
use crate::lti::SystemRealization;
use crate::mpc::{Controller, History, MpcConfig, MpcSolution};
use crate::qp::QpStatus;

/// Default settling band on outputs, in the infinity norm.
pub const DEFAULT_SETTLING_BAND: f64 = 0.02;

/// Default instants at which open-loop predictions are stored.
pub const DEFAULT_PREDICTION_INSTANTS: [usize; 5] = [0, 12, 24, 36, 48];

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub len: usize,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEntry {
    pub start: usize,
    pub target: TargetSetpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub plant: SystemRealization,
    pub x0: DVector<f64>,
    /// Inputs applied before control starts; `None` means `n` zero inputs.
    pub warmup: Option<Vec<DVector<f64>>>,
    pub data: DataSpec,
    pub mpc: MpcConfig,
    pub schedule: Vec<ScheduleEntry>,
    pub steps: usize,
    pub prediction_instants: Vec<usize>,
    pub settling_band: f64,
}

impl Experiment {
    pub fn check(&self) -> Result<()> {
        let mut errs = Vec::new();
        match self.schedule.first() {
            None => errs.push("target schedule is empty".to_string()),
            Some(e) if e.start != 0 => errs.push(format!(
                "first schedule entry starts at {} instead of 0",
                e.start
            )),
            _ => {}
        }
        if self.schedule.windows(2).any(|w| w[1].start <= w[0].start) {
            errs.push("schedule start times must be strictly increasing".into());
        }
        if self.x0.len() != self.plant.n() {
            errs.push(format!(
                "x0 has length {}, plant has n = {}",
                self.x0.len(),
                self.plant.n()
            ));
        }
        if let Some(w) = &self.warmup {
            if w.len() != self.mpc.order {
                errs.push(format!(
                    "warmup has {} inputs, the history needs n = {}",
                    w.len(),
                    self.mpc.order
                ));
            }
        }
        if self.steps == 0 {
            errs.push("run length must be positive".into());
        }
        if self.settling_band.is_nan() || self.settling_band <= 0.0 {
            errs.push(format!(
                "settling band must be positive, got {}",
                self.settling_band
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Index of the schedule segment active at step `t`.
    pub fn segment_at(&self, t: usize) -> usize {
        self.schedule
            .iter()
            .rposition(|e| e.start <= t)
            .unwrap_or(0)
    }

    /// End (exclusive) of segment `i`.
    pub fn segment_end(&self, i: usize) -> usize {
        self.schedule
            .get(i + 1)
            .map_or(self.steps, |e| e.start.min(self.steps))
    }
}

/// One closed-loop step as serialized to the report pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub u_applied: Vec<f64>,
    pub y_measured: Vec<f64>,
    pub u_s: Vec<f64>,
    pub y_s: Vec<f64>,
    pub cost_regularized: f64,
    pub cost_unregularized: f64,
    pub solver_iterations: usize,
    pub status: QpStatus,
}

/// Open-loop prediction over `k = 0..=L` stored at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSnapshot {
    pub t: usize,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

/// Reference equilibrium of a schedule segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReference {
    pub start: usize,
    pub end: usize,
    pub target_y: Vec<f64>,
    pub u_sr: Vec<f64>,
    pub y_sr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub step: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopLog {
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
    pub steps: Vec<StepRecord>,
    pub segments: Vec<SegmentReference>,
    /// `||y_t - y_sr||_2` against the active segment reference.
    pub tracking_error: Vec<f64>,
    /// `||y_s*(t) - y_sr||_2`.
    pub equilibrium_distance: Vec<f64>,
    /// Smallest distance of `u_t` to the boundary of `U`; negative when outside.
    pub input_margin: Vec<f64>,
    pub output_margin: Vec<f64>,
    /// `||x_t - x_sr||_2`, computed from the plant state.
    pub state_error: Vec<f64>,
    pub predictions: Vec<PredictionSnapshot>,
    pub abort: Option<AbortRecord>,
}

impl ClosedLoopLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn segment_of(&self, t: usize) -> usize {
        self.segments
            .iter()
            .rposition(|s| s.start <= t)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub r_squared: f64,
    /// Number of samples in the fitted transient.
    pub samples: usize,
    /// The series was at the floor too early to fit anything.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub start: usize,
    pub end: usize,
    /// `||y - y_sr||_inf` at the last step of the segment.
    pub final_error: f64,
    /// First step from which the output stays inside the band until segment end.
    pub settling_time: Option<usize>,
    pub final_equilibrium_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub completed_steps: usize,
    pub all_optimal: bool,
    pub first_failure: Option<usize>,
    pub final_tracking_error: f64,
    pub settling_time: Option<usize>,
    pub max_input_violation: f64,
    pub max_output_violation: f64,
    /// `J(t+1) - J(t) + stage(t)` of the unregularized cost, within segments.
    pub one_step_decrease: Vec<f64>,
    /// `J(t+n) - J(t)` of the unregularized cost, within segments.
    pub n_step_decrease: Vec<f64>,
    /// Fit of the first segment's state error until it enters the settling band. Below
    /// the band the artificial equilibrium drifts on a slower time scale, which a single
    /// rate does not describe.
    pub decay: DecayFit,
    /// Fit down to `100 * eps_abs`, including that slow tail.
    pub decay_full: DecayFit,
    pub segments: Vec<SegmentMetrics>,
}

impl RunMetrics {
    pub fn max_one_step_increase(&self) -> f64 {
        self.one_step_decrease
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_n_step_increase(&self) -> f64 {
        self.n_step_decrease
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn box_margin(lower: &DVector<f64>, upper: &DVector<f64>, v: &DVector<f64>) -> f64 {
    (0..v.len())
        .map(|i| (v[i] - lower[i]).min(upper[i] - v[i]))
        .fold(f64::INFINITY, f64::min)
}

/// Offline data of the experiment, generated from `x0 = 0`.
pub fn experiment_data(exp: &Experiment) -> Result<DataTrajectory> {
    generate_data(
        &exp.plant,
        &exp.data.lower,
        &exp.data.upper,
        exp.data.len,
        exp.data.seed,
    )
}

/// Reference equilibrium of every schedule segment, from data alone.
pub fn segment_references(
    exp: &Experiment,
    data: &DataTrajectory,
) -> Result<Vec<SegmentReference>> {
    let cfg = &exp.mpc;
    let opts = EquilibriumOptions {
        ridge: 0.0,
        solver: cfg.solver.clone(),
    };
    exp.schedule
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let eq = optimal_reachable_equilibrium(
                data,
                &e.target,
                &cfg.s,
                &cfg.t,
                &cfg.u_s_box,
                &cfg.y_s_box,
                cfg.order,
                &opts,
            )?;
            Ok(SegmentReference {
                start: e.start,
                end: exp.segment_end(i),
                target_y: to_vec(&e.target.y),
                u_sr: to_vec(&eq.u_s),
                y_sr: to_vec(&eq.y_s),
            })
        })
        .collect()
}

/// Runs the receding-horizon loop. A failed solve stops the run; the partial log
/// records the failing step.
pub fn run(exp: &Experiment) -> Result<(ClosedLoopLog, RunMetrics)> {
    exp.check()?;
    let data = experiment_data(exp)?;
    let segments = segment_references(exp, &data)?;
    let mut ctrl = Controller::validate(data, exp.mpc.clone())?;
    let (n, m, p) = (exp.mpc.order, exp.plant.m(), exp.plant.p());

    // Steady states of the references, for the state-error metric only.
    let x_refs = segments
        .iter()
        .map(|s| {
            exp.plant
                .steady_state_from_input(&DVector::from_vec(s.u_sr.clone()))
                .map(|ss| ss.x_s)
        })
        .collect::<Result<Vec<_>>>()?;

    let warmup = exp
        .warmup
        .clone()
        .unwrap_or_else(|| vec![DVector::zeros(m); n]);
    let mut x = exp.x0.clone();
    let mut ys = Vec::with_capacity(n);
    for u in &warmup {
        let (next, y) = exp.plant.step(&x, u)?;
        ys.push(y);
        x = next;
    }
    let mut hist = History::new(warmup, ys)?;

    let mut log = ClosedLoopLog {
        m,
        p,
        horizon: exp.mpc.horizon,
        steps: Vec::with_capacity(exp.steps),
        segments,
        tracking_error: Vec::new(),
        equilibrium_distance: Vec::new(),
        input_margin: Vec::new(),
        output_margin: Vec::new(),
        state_error: Vec::new(),
        predictions: Vec::new(),
        abort: None,
    };

    let mut seg = usize::MAX;
    for t in 0..exp.steps {
        let now = exp.segment_at(t);
        if now != seg {
            seg = now;
            ctrl.set_target(exp.schedule[seg].target.clone())?;
        }
        let (u, sol) = match ctrl.solve_step(&hist) {
            Ok(r) => r,
            Err(e) => {
                log.abort = Some(AbortRecord {
                    step: t,
                    message: e.to_string(),
                });
                break;
            }
        };
        let y_sr = DVector::from_vec(log.segments[seg].y_sr.clone());
        log.state_error.push((&x - &x_refs[seg]).norm());
        let (next, y) = exp.plant.step(&x, &u)?;
        if exp.prediction_instants.contains(&t) {
            log.predictions.push(snapshot(t, &sol));
        }
        log.tracking_error.push((&y - &y_sr).norm());
        log.equilibrium_distance.push((&sol.y_s - &y_sr).norm());
        log.input_margin
            .push(box_margin(exp.mpc.u_box.lower(), exp.mpc.u_box.upper(), &u));
        log.output_margin
            .push(box_margin(exp.mpc.y_box.lower(), exp.mpc.y_box.upper(), &y));
        log.steps.push(StepRecord {
            t,
            u_applied: to_vec(&u),
            y_measured: to_vec(&y),
            u_s: to_vec(&sol.u_s),
            y_s: to_vec(&sol.y_s),
            cost_regularized: sol.cost_regularized,
            cost_unregularized: sol.cost_unregularized,
            solver_iterations: sol.iterations,
            status: sol.status,
        });
        hist.push(u, y);
        x = next;
    }

    let metrics = compute_metrics(exp, &log);
    Ok((log, metrics))
}

fn snapshot(t: usize, sol: &MpcSolution) -> PredictionSnapshot {
    PredictionSnapshot {
        t,
        u: sol.u_future().iter().map(to_vec).collect(),
        y: sol.y_future().iter().map(to_vec).collect(),
    }
}

/// Metrics of a (possibly partial) log.
pub fn compute_metrics(exp: &Experiment, log: &ClosedLoopLog) -> RunMetrics {
    let cfg = &exp.mpc;
    let done = log.len();
    let band = exp.settling_band;
    let inf_err = |t: usize| -> f64 {
        let s = &log.segments[log.segment_of(t)];
        log.steps[t]
            .y_measured
            .iter()
            .zip(&s.y_sr)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };

    let mut segments = Vec::new();
    for s in &log.segments {
        let end = s.end.min(done);
        if s.start >= end {
            continue;
        }
        let mut settle = None;
        for t in (s.start..end).rev() {
            if inf_err(t) > band {
                break;
            }
            settle = Some(t);
        }
        segments.push(SegmentMetrics {
            start: s.start,
            end,
            final_error: inf_err(end - 1),
            settling_time: settle,
            final_equilibrium_distance: log.equilibrium_distance[end - 1],
        });
    }

    let first_failure = log
        .steps
        .iter()
        .find(|r| r.status != QpStatus::Optimal)
        .map(|r| r.t)
        .or(log.abort.as_ref().map(|a| a.step));

    let mut one_step = Vec::new();
    let mut n_step = Vec::new();
    let n = cfg.order;
    for t in 0..done {
        let same = |a: usize| log.segment_of(a) == log.segment_of(t);
        if t + 1 < done && same(t + 1) {
            let r = &log.steps[t];
            let du =
                DVector::from_iterator(log.m, r.u_applied.iter().zip(&r.u_s).map(|(a, b)| a - b));
            // y_t is measured with u_t applied, so it is the realized first predicted output.
            let dy =
                DVector::from_iterator(log.p, r.y_measured.iter().zip(&r.y_s).map(|(a, b)| a - b));
            let stage = quad_form(&cfg.r, &du) + quad_form(&cfg.q, &dy);
            one_step.push(log.steps[t + 1].cost_unregularized - r.cost_unregularized + stage);
        }
        if t + n < done && same(t + n) {
            n_step.push(log.steps[t + n].cost_unregularized - log.steps[t].cost_unregularized);
        }
    }

    let first_end = log.segments.first().map_or(0, |s| s.end.min(done));
    let transient = &log.state_error[..first_end];
    let solver_floor = 100.0 * cfg.solver.eps_abs;
    let decay = fit_decay(transient, DECAY_MIN_WINDOW, solver_floor.max(band));
    let decay_full = fit_decay(transient, DECAY_MIN_WINDOW, solver_floor);

    RunMetrics {
        completed_steps: done,
        all_optimal: first_failure.is_none() && done == exp.steps,
        first_failure,
        final_tracking_error: if done == 0 {
            f64::INFINITY
        } else {
            inf_err(done - 1)
        },
        settling_time: segments.last().and_then(|s| s.settling_time),
        max_input_violation: log
            .input_margin
            .iter()
            .map(|&m| (-m).max(0.0))
            .fold(0.0, f64::max),
        max_output_violation: log
            .output_margin
            .iter()
            .map(|&m| (-m).max(0.0))
            .fold(0.0, f64::max),
        one_step_decrease: one_step,
        n_step_decrease: n_step,
        decay,
        decay_full,
        segments,
    }
}

const DECAY_MIN_WINDOW: usize = 5;

/// Fits `log e_t = a + t log rho` over the transient, i.e. from the start until the
/// series first drops below `floor`. Fewer than `window` samples above the floor give a
/// degenerate fit with `rate = 0`.
pub fn fit_decay(series: &[f64], window: usize, floor: f64) -> DecayFit {
    let window = window.max(2);
    let end = series
        .iter()
        .position(|&e| e.is_nan() || e <= floor)
        .unwrap_or(series.len());
    if end < window {
        return DecayFit {
            rate: 0.0,
            r_squared: 0.0,
            samples: end,
            degenerate: true,
        };
    }
    let k = end as f64;
    let ts: Vec<f64> = (0..end).map(|t| t as f64).collect();
    let ls: Vec<f64> = series[..end].iter().map(|e| e.ln()).collect();
    let mt = ts.iter().sum::<f64>() / k;
    let ml = ls.iter().sum::<f64>() / k;
    let sxx: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    let sxy: f64 = ts.iter().zip(&ls).map(|(t, l)| (t - mt) * (l - ml)).sum();
    let slope = sxy / sxx;
    let ss_tot: f64 = ls.iter().map(|l| (l - ml).powi(2)).sum();
    let ss_res: f64 = ts
        .iter()
        .zip(&ls)
        .map(|(t, l)| (l - ml - slope * (t - mt)).powi(2))
        .sum();
    // A constant series is fitted exactly by a flat line.
    let r_squared = if ss_tot <= 1e-300 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    DecayFit {
        rate: slope.exp(),
        r_squared,
        samples: end,
        degenerate: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeTolerances {
    /// Allowed output-box violation; inputs are checked exactly.
    pub output_tol: f64,
    pub band: f64,
    pub min_r_squared: f64,
    /// Also check the one-step cost inequality (meaningful with `alpha_reg = 0`).
    pub check_cost_decrease: bool,
    pub cost_tol: f64,
}

impl Default for GuaranteeTolerances {
    fn default() -> Self {
        GuaranteeTolerances {
            output_tol: 1e-8,
            band: DEFAULT_SETTLING_BAND,
            min_r_squared: 0.9,
            check_cost_decrease: false,
            cost_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Offending step, when the failure is tied to one.
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeReport {
    pub items: Vec<CheckItem>,
}

impl GuaranteeReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn item(&self, name: &str) -> Option<&CheckItem> {
        self.items.iter().find(|i| i.name == name)
    }
}

/// Checks recursive feasibility, constraint satisfaction and convergence, each on its own.
pub fn verify_guarantees(
    log: &ClosedLoopLog,
    metrics: &RunMetrics,
    tol: &GuaranteeTolerances,
) -> GuaranteeReport {
    let mut items = Vec::new();

    let feasible = metrics.first_failure.is_none() && log.abort.is_none();
    items.push(CheckItem {
        name: "recursive_feasibility".into(),
        passed: feasible,
        detail: match (&log.abort, metrics.first_failure) {
            (Some(a), _) => format!("solve failed at step {}: {}", a.step, a.message),
            (None, Some(t)) => format!("non-optimal solve at step {t}"),
            (None, None) => format!("all {} solves optimal", log.len()),
        },
        step: metrics.first_failure,
    });

    let bad_u = log.input_margin.iter().position(|&m| m < 0.0);
    let bad_y = log.output_margin.iter().position(|&m| m < -tol.output_tol);
    items.push(CheckItem {
        name: "constraint_satisfaction".into(),
        passed: bad_u.is_none() && bad_y.is_none(),
        detail: format!(
            "max input violation {:.3e}, max output violation {:.3e}",
            metrics.max_input_violation, metrics.max_output_violation
        ),
        step: match (bad_u, bad_y) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        },
    });

    let d = metrics.decay;
    let stable = !d.degenerate
        && d.rate < 1.0
        && d.r_squared >= tol.min_r_squared
        && metrics.final_tracking_error <= tol.band;
    items.push(CheckItem {
        name: "exponential_stability".into(),
        passed: stable,
        detail: format!(
            "decay rate {:.4} (R^2 {:.3}, {} samples{}), final error {:.3e}",
            d.rate,
            d.r_squared,
            d.samples,
            if d.degenerate { ", degenerate" } else { "" },
            metrics.final_tracking_error
        ),
        step: None,
    });

    if tol.check_cost_decrease {
        let worst = metrics.max_one_step_increase();
        let at = metrics
            .one_step_decrease
            .iter()
            .position(|&v| v > tol.cost_tol);
        items.push(CheckItem {
            name: "cost_decrease".into(),
            passed: at.is_none() && metrics.max_n_step_increase() <= tol.cost_tol,
            detail: format!(
                "max one-step excess {:.3e}, max n-step change {:.3e}",
                worst,
                metrics.max_n_step_increase()
            ),
            step: at,
        });
    }

    GuaranteeReport { items }
}

/// Runs independent experiments on scoped threads; results are keyed by name.
pub fn run_sweep(
    experiments: &[(String, Experiment)],
) -> BTreeMap<String, Result<(ClosedLoopLog, RunMetrics)>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = experiments
            .iter()
            .map(|(name, exp)| (name.clone(), scope.spawn(move || run(exp))))
            .collect();
        handles
            .into_iter()
            .map(|(name, h)| {
                let r = h.join().unwrap_or_else(|_| {
                    Err(Error::InvalidArgument(format!(
                        "experiment {name} panicked"
                    )))
                });
                (name, r)
            })
            .collect()
    })
}
