//! Feasibility-domain correction for solutions that fail validation.
//!
//! The first `⌊L/2⌋` iterations move the start point toward the centre of
//! the variable box and re-solve. The remaining iterations pick a new
//! convexification strategy and rebuild the whole solve.

use serde::{Deserialize, Serialize};

use super::feasibility::{validate_feasibility, FeasibilityResult};
use super::RefineError;
use crate::convexify::{box_center, project, select_strategy, Strategy};
use crate::curvature::ConvexityReport;
use crate::model::StandardForm;
use crate::solver::Solution;

pub const DEFAULT_L: u32 = 5;
pub const DEFAULT_GAMMA: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FdcStage {
    Adjust,
    Reanalyze,
}

/// Adjust exactly when `l ≤ ⌊L/2⌋`.
pub fn stage_for(l: u32, cap: u32) -> FdcStage {
    if l <= cap / 2 {
        FdcStage::Adjust
    } else {
        FdcStage::Reanalyze
    }
}

/// Attempt index handed to `select_strategy` at a reanalyze iteration.
pub fn reanalysis_attempt(l: u32, cap: u32) -> u32 {
    l - cap / 2 - 1
}

/// Shift of `x0` for the adjust stage: from `x_star` toward the box centre.
pub fn direction_to_center(original: &StandardForm, x_star: &[f64]) -> Vec<f64> {
    original
        .variables
        .iter()
        .zip(x_star)
        .map(|(v, x)| box_center(v) - x)
        .collect()
}

/// `x0 + γ·Δx` projected onto the bounds.
pub fn adjust(original: &StandardForm, x0: &[f64], delta_x: &[f64], gamma: f64) -> Vec<f64> {
    let moved: Vec<f64> = x0.iter().zip(delta_x).map(|(x, d)| x + gamma * d).collect();
    project(&original.variables, &moved)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdcStep {
    pub l: u32,
    pub stage: FdcStage,
    pub x0: Vec<f64>,
    pub strategy: Option<Strategy>,
    pub v: bool,
    /// Why no solution came back, when none did.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdcState {
    pub l: u32,
    pub cap: u32,
    pub stage: FdcStage,
    pub gamma: f64,
    pub delta_x: Vec<f64>,
    pub x0: Vec<f64>,
    pub history: Vec<FdcStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdcResult {
    /// Present only with `V = 1`.
    pub solution: Option<Solution>,
    pub feasibility: Option<FeasibilityResult>,
    pub state: FdcState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdcConfig {
    pub cap: u32,
    pub gamma: f64,
    /// Fixed adjustment direction; recomputed from each new `x*` when absent.
    pub delta_x: Option<Vec<f64>>,
}

impl Default for FdcConfig {
    fn default() -> Self {
        FdcConfig {
            cap: DEFAULT_L,
            gamma: DEFAULT_GAMMA,
            delta_x: None,
        }
    }
}

/// The solve paths the correction drives.
pub trait FdcDriver {
    /// Re-solves from `x0` with the current strategy.
    fn resolve(&mut self, x0: &[f64]) -> Result<Solution, String>;

    /// Reconvexifies with `strategy`, regenerates and executes the code.
    fn reanalyze(&mut self, strategy: &Strategy, x0: &[f64]) -> Result<Solution, String>;
}

/// Runs up to `cap` correction iterations starting from `x0`.
pub fn run_fdc(
    original: &StandardForm,
    report: &ConvexityReport,
    first: &Solution,
    x0: &[f64],
    config: &FdcConfig,
    epsilon: f64,
    driver: &mut dyn FdcDriver,
) -> Result<FdcResult, RefineError> {
    let initial = validate_feasibility(original, &first.x_star, epsilon);
    if initial.v {
        return Err(RefineError::AlreadyFeasible);
    }
    if !(config.gamma > 0.0 && config.gamma.is_finite()) || config.cap == 0 {
        return Err(RefineError::InvalidConfig(format!(
            "need L ≥ 1 and γ > 0, got L = {} and γ = {}",
            config.cap, config.gamma
        )));
    }
    let n = original.variables.len();
    if x0.len() != n || config.delta_x.as_ref().is_some_and(|d| d.len() != n) {
        return Err(RefineError::InvalidConfig(format!("points must have {n} coordinates")));
    }
    let mut state = FdcState {
        l: 0,
        cap: config.cap,
        stage: stage_for(1, config.cap),
        gamma: config.gamma,
        delta_x: config
            .delta_x
            .clone()
            .unwrap_or_else(|| direction_to_center(original, &first.x_star)),
        x0: x0.to_vec(),
        history: Vec::new(),
    };
    let mut last = Some(initial);
    while state.l < state.cap {
        state.l += 1;
        state.stage = stage_for(state.l, state.cap);
        let (strategy, result) = match state.stage {
            FdcStage::Adjust => {
                state.x0 = adjust(original, &state.x0, &state.delta_x, state.gamma);
                (None, driver.resolve(&state.x0))
            }
            FdcStage::Reanalyze => {
                let s = select_strategy(report, reanalysis_attempt(state.l, state.cap));
                let r = driver.reanalyze(&s, &state.x0);
                (Some(s), r)
            }
        };
        let (v, failure) = match &result {
            Ok(s) => {
                let f = validate_feasibility(original, &s.x_star, epsilon);
                let v = f.v;
                last = Some(f);
                if config.delta_x.is_none() {
                    state.delta_x = direction_to_center(original, &s.x_star);
                }
                (v, None)
            }
            Err(e) => (false, Some(e.clone())),
        };
        log::debug!("fdc l={} stage={:?} v={v}", state.l, state.stage);
        state.history.push(FdcStep {
            l: state.l,
            stage: state.stage,
            x0: state.x0.clone(),
            strategy,
            v,
            failure,
        });
        if v {
            return Ok(FdcResult {
                solution: result.ok(),
                feasibility: last,
                state,
            });
        }
    }
    Ok(FdcResult {
        solution: None,
        feasibility: last,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::analyze_problem;
    use crate::model::{parse_expression, Constraint, Variable};
    use crate::solver::{Kkt, Status};

    fn problem() -> StandardForm {
        let v = vec![Variable::continuous("x", 0.0, 4.0)];
        StandardForm {
            objective: parse_expression("-x^2", &v).unwrap(),
            inequalities: vec![Constraint::le(parse_expression("x - 3", &v).unwrap())],
            equalities: vec![],
            variables: v,
            metadata: Default::default(),
        }
    }

    fn at(x: f64) -> Solution {
        Solution {
            x_star: vec![x],
            objective: -x * x,
            status: Status::Optimal,
            kkt: Kkt::failed(),
            iterations: 0,
            inequality_multipliers: vec![],
            equality_multipliers: vec![],
        }
    }

    /// Scripted answers per call, recording what it was asked.
    struct Scripted {
        answers: Vec<Result<Solution, String>>,
        calls: Vec<(Option<Strategy>, Vec<f64>)>,
    }

    impl Scripted {
        fn next(&mut self) -> Result<Solution, String> {
            if self.answers.is_empty() {
                Err("no answer".into())
            } else {
                self.answers.remove(0)
            }
        }
    }

    impl FdcDriver for Scripted {
        fn resolve(&mut self, x0: &[f64]) -> Result<Solution, String> {
            self.calls.push((None, x0.to_vec()));
            self.next()
        }

        fn reanalyze(&mut self, strategy: &Strategy, x0: &[f64]) -> Result<Solution, String> {
            self.calls.push((Some(strategy.clone()), x0.to_vec()));
            self.next()
        }
    }

    #[test]
    fn stage_boundary_for_five() {
        let stages: Vec<FdcStage> = (1..=5).map(|l| stage_for(l, 5)).collect();
        use FdcStage::*;
        assert_eq!(stages, [Adjust, Adjust, Reanalyze, Reanalyze, Reanalyze]);
        assert_eq!((3..=5).map(|l| reanalysis_attempt(l, 5)).collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn feasible_at_first_adjustment() {
        let p = problem();
        let mut d = Scripted {
            answers: vec![Ok(at(2.5))],
            calls: vec![],
        };
        let r = run_fdc(&p, &analyze_problem(&p), &at(4.0), &[4.0], &FdcConfig::default(), 1e-6, &mut d).unwrap();
        assert_eq!(r.solution.unwrap().x_star, vec![2.5]);
        assert_eq!((r.state.l, r.state.stage), (1, FdcStage::Adjust));
        // Δx = 2 - 4, γ = 0.25
        assert_eq!(d.calls, vec![(None, vec![3.5])]);
        assert!(r.feasibility.unwrap().v);
    }

    #[test]
    fn infeasible_throughout() {
        let p = problem();
        let report = analyze_problem(&p);
        let mut d = Scripted {
            answers: vec![Ok(at(4.0)), Err("solver-rejection".into()), Ok(at(3.5)), Ok(at(3.5)), Ok(at(3.5))],
            calls: vec![],
        };
        let r = run_fdc(&p, &report, &at(4.0), &[4.0], &FdcConfig::default(), 1e-6, &mut d).unwrap();
        assert!(r.solution.is_none());
        assert_eq!(r.state.l, 5);
        assert_eq!(r.state.history.len(), 5);
        assert!(!r.feasibility.unwrap().v);
        let strategies: Vec<Option<Strategy>> = d.calls.iter().map(|c| c.0.clone()).collect();
        assert_eq!(
            strategies,
            vec![
                None,
                None,
                Some(select_strategy(&report, 0)),
                Some(select_strategy(&report, 1)),
                Some(select_strategy(&report, 2)),
            ]
        );
        assert_eq!(r.state.history[1].failure.as_deref(), Some("solver-rejection"));
    }

    #[test]
    fn feasible_first_solution_is_a_precondition_error() {
        let p = problem();
        let mut d = Scripted {
            answers: vec![],
            calls: vec![],
        };
        let r = run_fdc(&p, &analyze_problem(&p), &at(1.0), &[1.0], &FdcConfig::default(), 1e-6, &mut d);
        assert_eq!(r, Err(RefineError::AlreadyFeasible));
    }

    #[test]
    fn fixed_direction_is_kept() {
        let p = problem();
        let config = FdcConfig {
            delta_x: Some(vec![-4.0]),
            ..Default::default()
        };
        let mut d = Scripted {
            answers: vec![Ok(at(4.0)), Ok(at(4.0))],
            calls: vec![],
        };
        run_fdc(&p, &analyze_problem(&p), &at(4.0), &[4.0], &config, 1e-6, &mut d).unwrap();
        assert_eq!(d.calls[0].1, vec![3.0]);
        assert_eq!(d.calls[1].1, vec![2.0]);
    }
}
