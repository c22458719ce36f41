//! Experiment configuration: a versioned JSON document, validated and
//! resolved (all "auto" fields expanded) before anything runs.

use serde::{Deserialize, Serialize};

use rkhs_online::online::{finite_horizon_mu, theorem1_schedule};
use rkhs_online::oracle::theorem2_t;

use crate::CliError;

/// Decay exponent used when the divergence experiment's schedule is
/// "auto". Divergence holds for every admissible exponent in (1/2, 1);
/// this one makes the growth visible within the standard step budget.
pub const DIVERGENCE_AUTO_T: f64 = 0.55;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Theorem1,
    Theorem2Table,
    FiniteHorizon,
    Divergence,
    OracleCrosscheck,
}

impl ExperimentKind {
    fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "theorem1" => Ok(Self::Theorem1),
            "theorem2-table" => Ok(Self::Theorem2Table),
            "finite-horizon" => Ok(Self::FiniteHorizon),
            "divergence" => Ok(Self::Divergence),
            "oracle-crosscheck" => Ok(Self::OracleCrosscheck),
            other => Err(CliError::config(format!(
                "unknown experiment kind `{other}`; expected one of theorem1, \
                 theorem2-table, finite-horizon, divergence, oracle-crosscheck"
            ))),
        }
    }

    fn is_monte_carlo(self) -> bool {
        matches!(
            self,
            Self::Theorem1 | Self::FiniteHorizon | Self::OracleCrosscheck
        )
    }
}

fn default_target_scale() -> f64 {
    1.0
}

/// Problem block. `kind` selects between the coefficient-sampling family
/// (`cons`: fields `p`, `n`) and the interval-kernel family (`bridge`:
/// fields `n_quad`, `d`, optional `t_matrix`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub s: f64,
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_target_scale")]
    pub target_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_quad: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleConfig {
    Named(String),
    Explicit(ExplicitSchedule),
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::Named("auto".into())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSchedule {
    pub t: f64,
    pub a: f64,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub averaging: bool,
}

fn default_mode() -> String {
    "regularized".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CheckpointSpec {
    Named(String),
    Explicit(Vec<usize>),
}

impl Default for CheckpointSpec {
    fn default() -> Self {
        Self::Named("geometric".into())
    }
}

/// The raw on-disk document. Unknown and duplicate keys are rejected by
/// the deserializer with their location.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub schema_version: u32,
    pub kind: String,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub sbar: f64,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default)]
    pub base_seed: Option<u64>,
    #[serde(default)]
    pub checkpoints: CheckpointSpec,
    #[serde(default)]
    pub pairs: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub out_dir: Option<String>,
}

/// Fully resolved schedule, echoed into the report header.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedSchedule {
    pub t: f64,
    pub a: f64,
    pub mode: String,
    pub averaging: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

/// A validated configuration with every "auto" expanded.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub problem: ProblemConfig,
    /// Absent for theorem2-table, which derives one schedule per pair.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ResolvedSchedule>,
    pub sbar: f64,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    pub base_seed: u64,
    pub checkpoints: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<(f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

impl ResolvedConfig {
    /// The uniform feature-map bound of the configured problem, available
    /// without building it.
    pub fn lambda_bound(&self) -> f64 {
        problem_lambda_bound(&self.problem)
    }
}

fn problem_lambda_bound(p: &ProblemConfig) -> f64 {
    match p.kind.as_str() {
        "cons" => 1.0,
        _ => {
            let tmax = p
                .t_matrix
                .as_ref()
                .and_then(|rows| spd_from_rows(rows).ok())
                .map(|t| t.max_eigenvalue())
                .unwrap_or(1.0);
            0.25 * tmax
        }
    }
}

/// Build a validated SPD matrix from row-major config data.
pub fn spd_from_rows(rows: &[Vec<f64>]) -> Result<rkhs_online::hilbert::SpdMatrix, CliError> {
    rkhs_online::hilbert::SpdMatrix::from_rows(rows)
        .map_err(|e| CliError::config(format!("problem.t_matrix: {e}")))
}

/// Parse and validate a raw JSON document. Every error names the offending
/// key and the violated precondition; syntax, duplicate-key and
/// unknown-key errors carry the document location.
pub fn validate_config(raw: &str) -> Result<ResolvedConfig, CliError> {
    let raw: RawConfig = serde_json::from_str(raw)
        .map_err(|e| CliError::config(format!("config rejected: {e}")))?;
    if raw.schema_version != 1 {
        return Err(CliError::config(format!(
            "schema_version: expected 1, got {}",
            raw.schema_version
        )));
    }
    let kind = ExperimentKind::parse(&raw.kind)?;
    validate_problem(&raw.problem, kind)?;
    let lambda = problem_lambda_bound(&raw.problem);

    if raw.steps == 0 && kind != ExperimentKind::OracleCrosscheck {
        return Err(CliError::config(
            "steps: must be positive for this experiment kind".into(),
        ));
    }

    let trials = match (kind.is_monte_carlo(), raw.trials) {
        (true, Some(t)) if t >= 2 => Some(t),
        (true, Some(t)) => {
            return Err(CliError::config(format!(
                "trials: Monte-Carlo estimation needs at least 2 trials, got {t}"
            )))
        }
        (true, None) => {
            return Err(CliError::config(
                "trials: required for Monte-Carlo experiment kinds".into(),
            ))
        }
        (false, _) => None,
    };

    let schedule = resolve_schedule(&raw, kind, lambda)?;

    let pairs = match (kind, &raw.pairs) {
        (ExperimentKind::Theorem2Table, Some(ps)) => {
            if ps.is_empty() {
                return Err(CliError::config("pairs: must not be empty".into()));
            }
            let mut out = Vec::with_capacity(ps.len());
            for &[s, sbar] in ps {
                theorem2_t(s, sbar).map_err(|e| {
                    CliError::config(format!("pairs: ({s}, {sbar}) rejected: {e}"))
                })?;
                out.push((s, sbar));
            }
            Some(out)
        }
        (ExperimentKind::Theorem2Table, None) => {
            return Err(CliError::config(
                "pairs: required for the theorem2-table kind".into(),
            ))
        }
        (_, Some(_)) => {
            return Err(CliError::config(
                "pairs: only meaningful for the theorem2-table kind".into(),
            ))
        }
        (_, None) => None,
    };

    if matches!(kind, ExperimentKind::Theorem1 | ExperimentKind::FiniteHorizon) && raw.sbar != 0.0
    {
        return Err(CliError::config(format!(
            "sbar: the certified bounds control the plain feature-space norm; \
             expected 0, got {}",
            raw.sbar
        )));
    }

    let checkpoints = resolve_checkpoints(&raw, kind)?;

    Ok(ResolvedConfig {
        schema_version: raw.schema_version,
        kind,
        problem: raw.problem,
        schedule,
        sbar: raw.sbar,
        steps: raw.steps,
        trials,
        base_seed: raw.base_seed.unwrap_or(0),
        checkpoints,
        pairs,
        out_dir: raw.out_dir,
    })
}

fn validate_problem(p: &ProblemConfig, kind: ExperimentKind) -> Result<(), CliError> {
    match p.kind.as_str() {
        "cons" => {
            let decay = p.p.ok_or_else(|| {
                CliError::config("problem.p: required for the cons problem kind".into())
            })?;
            if !(decay > 1.0) {
                return Err(CliError::config(format!(
                    "problem.p: weights i^(-p) are normalizable only for p > 1, got {decay}"
                )));
            }
            let n = p.n.ok_or_else(|| {
                CliError::config("problem.n: required for the cons problem kind".into())
            })?;
            if n < 2 {
                return Err(CliError::config(
                    "problem.n: need at least two retained modes".into(),
                ));
            }
            for (name, set) in [
                ("problem.n_quad", p.n_quad.is_some()),
                ("problem.d", p.d.is_some()),
                ("problem.t_matrix", p.t_matrix.is_some()),
            ] {
                if set {
                    return Err(CliError::config(format!(
                        "{name}: not a field of the cons problem kind"
                    )));
                }
            }
        }
        "bridge" => {
            let n_quad = p.n_quad.ok_or_else(|| {
                CliError::config("problem.n_quad: required for the bridge problem kind".into())
            })?;
            if n_quad < 100 {
                return Err(CliError::config(format!(
                    "problem.n_quad: quadrature needs at least 100 nodes, got {n_quad}"
                )));
            }
            if p.p.is_some() || p.n.is_some() {
                return Err(CliError::config(
                    "problem.p / problem.n: not fields of the bridge problem kind".into(),
                ));
            }
            let d = p.d.unwrap_or(1);
            if d == 0 {
                return Err(CliError::config(
                    "problem.d: output dimension must be at least 1".into(),
                ));
            }
            if let Some(rows) = &p.t_matrix {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(CliError::config(format!(
                        "problem.t_matrix: must be a {d}x{d} matrix"
                    )));
                }
            }
        }
        other => {
            return Err(CliError::config(format!(
                "problem.kind: unknown problem kind `{other}`; expected cons or bridge"
            )))
        }
    }
    if !(p.sigma >= 0.0 && p.sigma.is_finite()) {
        return Err(CliError::config(format!(
            "problem.sigma: noise deviation must be finite and non-negative, got {}",
            p.sigma
        )));
    }
    if !(p.target_scale >= 0.0 && p.target_scale.is_finite()) {
        return Err(CliError::config(format!(
            "problem.target_scale: must be finite and non-negative, got {}",
            p.target_scale
        )));
    }
    match kind {
        ExperimentKind::Theorem1 | ExperimentKind::OracleCrosscheck => {
            if !(p.s > 0.0 && p.s <= 1.0) {
                return Err(CliError::config(format!(
                    "problem.s: the certified schedule requires 0 < s <= 1, got {}",
                    p.s
                )));
            }
        }
        ExperimentKind::Divergence => {
            if p.kind != "cons" {
                return Err(CliError::config(
                    "problem.kind: the divergence experiment is defined on the cons family"
                        .into(),
                ));
            }
            if p.p != Some(2.0) {
                return Err(CliError::config(
                    "problem.p: the divergence witness uses the quadratic-decay law (p = 2), \
                     whose normalizer is known in closed form"
                        .into(),
                ));
            }
            if p.target_scale == 0.0 {
                return Err(CliError::config(
                    "problem.target_scale: the control run needs a nonzero target".into(),
                ));
            }
        }
        ExperimentKind::Theorem2Table => {
            if p.kind != "cons" {
                return Err(CliError::config(
                    "problem.kind: the theorem2-table experiment is defined on the cons family"
                        .into(),
                ));
            }
            if p.target_scale == 0.0 {
                return Err(CliError::config(
                    "problem.target_scale: rate fitting needs a nonzero target".into(),
                ));
            }
        }
        ExperimentKind::FiniteHorizon => {
            if p.kind != "cons" {
                return Err(CliError::config(
                    "problem.kind: the finite-horizon experiment is defined on the cons family"
                        .into(),
                ));
            }
        }
    }
    Ok(())
}

fn resolve_schedule(
    raw: &RawConfig,
    kind: ExperimentKind,
    lambda: f64,
) -> Result<Option<ResolvedSchedule>, CliError> {
    let auto = match &raw.schedule {
        ScheduleConfig::Named(name) if name == "auto" => true,
        ScheduleConfig::Named(name) => {
            return Err(CliError::config(format!(
                "schedule: unknown schedule name `{name}`; expected \"auto\" or an object"
            )))
        }
        ScheduleConfig::Explicit(_) => false,
    };
    match kind {
        ExperimentKind::Theorem2Table => {
            if !auto {
                return Err(CliError::config(
                    "schedule: theorem2-table derives one schedule per pair; use \"auto\""
                        .into(),
                ));
            }
            Ok(None)
        }
        ExperimentKind::FiniteHorizon => {
            if !auto {
                return Err(CliError::config(
                    "schedule: the finite-horizon step size is fixed by the horizon; use \"auto\""
                        .into(),
                ));
            }
            let mu = finite_horizon_mu(raw.steps, lambda)
                .map_err(|e| CliError::config(format!("steps: {e}")))?;
            Ok(Some(ResolvedSchedule {
                t: 0.0,
                a: mu,
                mode: "finite-horizon".into(),
                averaging: false,
                mu: Some(mu),
            }))
        }
        ExperimentKind::Theorem1 | ExperimentKind::OracleCrosscheck => {
            if auto {
                let sched = theorem1_schedule(raw.problem.s, lambda)
                    .map_err(|e| CliError::config(format!("problem.s: {e}")))?;
                Ok(Some(ResolvedSchedule {
                    t: sched.t(),
                    a: sched.a(),
                    mode: "regularized".into(),
                    averaging: false,
                    mu: None,
                }))
            } else {
                explicit_schedule(raw, lambda)
            }
        }
        ExperimentKind::Divergence => {
            if auto {
                Ok(Some(ResolvedSchedule {
                    t: DIVERGENCE_AUTO_T,
                    a: 1.0 / (2.0 * lambda),
                    mode: "regularized".into(),
                    averaging: false,
                    mu: None,
                }))
            } else {
                let resolved = explicit_schedule(raw, lambda)?;
                if let Some(r) = &resolved {
                    if r.mode != "regularized" {
                        return Err(CliError::config(
                            "schedule.mode: the expected-trajectory analysis assumes the \
                             regularized shrinkage"
                                .into(),
                        ));
                    }
                }
                Ok(resolved)
            }
        }
    }
}

fn explicit_schedule(raw: &RawConfig, lambda: f64) -> Result<Option<ResolvedSchedule>, CliError> {
    let ScheduleConfig::Explicit(e) = &raw.schedule else {
        unreachable!("caller checked")
    };
    match e.mode.as_str() {
        "regularized" | "unregularized" => {}
        other => {
            return Err(CliError::config(format!(
                "schedule.mode: unknown mode `{other}`; expected regularized or unregularized"
            )))
        }
    }
    if !(e.t > 0.5 && e.t < 1.0) {
        return Err(CliError::config(format!(
            "schedule.t: decay exponent must lie in (1/2, 1), got {}",
            e.t
        )));
    }
    if !(e.a > 0.0 && e.a <= 1.0 / (2.0 * lambda) + 1e-12) {
        return Err(CliError::config(format!(
            "schedule.a: step constant must lie in (0, 1/(2 Lambda)] = (0, {}], got {}",
            1.0 / (2.0 * lambda),
            e.a
        )));
    }
    Ok(Some(ResolvedSchedule {
        t: e.t,
        a: e.a,
        mode: e.mode.clone(),
        averaging: e.averaging,
        mu: None,
    }))
}

fn resolve_checkpoints(raw: &RawConfig, kind: ExperimentKind) -> Result<Vec<usize>, CliError> {
    let base = match &raw.checkpoints {
        CheckpointSpec::Named(name) if name == "geometric" => match kind {
            ExperimentKind::FiniteHorizon => vec![raw.steps],
            _ => rkhs_online::harness::geometric_checkpoints(raw.steps),
        },
        CheckpointSpec::Named(name) => {
            return Err(CliError::config(format!(
                "checkpoints: unknown name `{name}`; expected \"geometric\" or a list"
            )))
        }
        CheckpointSpec::Explicit(list) => {
            if list.is_empty() {
                return Err(CliError::config("checkpoints: must not be empty".into()));
            }
            if let Some(&bad) = list.iter().find(|&&m| m > raw.steps) {
                return Err(CliError::config(format!(
                    "checkpoints: {bad} lies beyond steps = {}",
                    raw.steps
                )));
            }
            if kind == ExperimentKind::FiniteHorizon && list.iter().any(|&m| m != raw.steps) {
                return Err(CliError::config(
                    "checkpoints: finite-horizon runs certify only the final iterate".into(),
                ));
            }
            list.clone()
        }
    };
    let mut cps = base;
    if kind == ExperimentKind::Divergence {
        if raw.steps < 100 {
            return Err(CliError::config(
                "steps: the divergence checks anchor at m = 100; use at least 100 steps".into(),
            ));
        }
        cps.push(10.min(raw.steps));
        cps.push(100);
    }
    cps.sort_unstable();
    cps.dedup();
    Ok(cps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_theorem1() -> String {
        r#"{
            "schema_version": 1,
            "kind": "theorem1",
            "problem": {"kind": "cons", "p": 2.0, "n": 50, "s": 1.0, "sigma": 0.3},
            "steps": 100,
            "trials": 4
        }"#
        .to_string()
    }

    #[test]
    fn auto_schedule_resolves_theorem1_parameters() {
        let cfg = validate_config(&base_theorem1()).unwrap();
        let sched = cfg.schedule.unwrap();
        assert!((sched.t - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(sched.a, 0.5); // Lambda = 1 for cons
        assert_eq!(cfg.base_seed, 0);
        assert_eq!(cfg.checkpoints.last(), Some(&100));
    }

    #[test]
    fn smoothness_out_of_range_rejected() {
        let bad = base_theorem1().replace("\"s\": 1.0", "\"s\": 1.5");
        let err = validate_config(&bad).unwrap_err();
        assert!(err.to_string().contains("problem.s"), "{err}");
    }

    #[test]
    fn unknown_key_rejected_with_name() {
        let bad = base_theorem1().replace("\"steps\": 100", "\"steps\": 100, \"stepz\": 5");
        let err = validate_config(&bad).unwrap_err();
        assert!(err.to_string().contains("stepz"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected_with_location() {
        let bad = base_theorem1().replace("\"steps\": 100", "\"steps\": 100, \"steps\": 200");
        let err = validate_config(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate field"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn trials_required_for_monte_carlo_kinds() {
        let bad = base_theorem1().replace(",\n            \"trials\": 4", "");
        let err = validate_config(&bad).unwrap_err();
        assert!(err.to_string().contains("trials"), "{err}");
    }

    #[test]
    fn divergence_constraints() {
        let good = r#"{
            "schema_version": 1,
            "kind": "divergence",
            "problem": {"kind": "cons", "p": 2.0, "n": 100, "s": 1.0, "sigma": 0.0},
            "steps": 1000
        }"#;
        let cfg = validate_config(good).unwrap();
        assert!(cfg.checkpoints.contains(&100));
        let sched = cfg.schedule.unwrap();
        assert_eq!(sched.t, DIVERGENCE_AUTO_T);

        let bad = good.replace("\"p\": 2.0", "\"p\": 3.0");
        assert!(validate_config(&bad).is_err());
    }

    #[test]
    fn theorem2_table_requires_pairs() {
        let good = r#"{
            "schema_version": 1,
            "kind": "theorem2-table",
            "problem": {"kind": "cons", "p": 2.0, "n": 100, "s": 1.0, "sigma": 8.0},
            "steps": 1000,
            "pairs": [[1.0, 0.0], [1.0, -1.0]]
        }"#;
        let cfg = validate_config(good).unwrap();
        assert_eq!(cfg.pairs.as_ref().unwrap().len(), 2);

        let bad = good.replace(",\n            \"pairs\": [[1.0, 0.0], [1.0, -1.0]]", "");
        assert!(validate_config(&bad).unwrap_err().to_string().contains("pairs"));

        // sbar = s violates the table's hypotheses.
        let bad = good.replace("[1.0, 0.0]", "[0.0, 0.0]");
        assert!(validate_config(&bad).is_err());
    }

    #[test]
    fn finite_horizon_checkpoints_fixed_to_horizon() {
        let good = r#"{
            "schema_version": 1,
            "kind": "finite-horizon",
            "problem": {"kind": "cons", "p": 2.0, "n": 50, "s": 1.0, "sigma": 0.3},
            "steps": 64,
            "trials": 4
        }"#;
        let cfg = validate_config(good).unwrap();
        assert_eq!(cfg.checkpoints, vec![64]);
        assert!(cfg.schedule.unwrap().mu.is_some());

        let bad = good.replace("\"trials\": 4", "\"trials\": 4, \"checkpoints\": [32, 64]");
        assert!(validate_config(&bad).is_err());
    }

    #[test]
    fn explicit_schedule_validated_against_lambda() {
        let good = base_theorem1().replace(
            "\"trials\": 4",
            "\"trials\": 4, \"schedule\": {\"t\": 0.75, \"a\": 0.5}",
        );
        assert!(validate_config(&good).is_ok());
        // A beyond 1/(2 Lambda) = 1/2 for cons problems.
        let bad = base_theorem1().replace(
            "\"trials\": 4",
            "\"trials\": 4, \"schedule\": {\"t\": 0.75, \"a\": 0.9}",
        );
        assert!(validate_config(&bad).unwrap_err().to_string().contains("schedule.a"));
    }

    #[test]
    fn bridge_problem_block_accepted() {
        let cfg = r#"{
            "schema_version": 1,
            "kind": "theorem1",
            "problem": {"kind": "bridge", "n_quad": 200, "s": 1.0, "sigma": 0.1},
            "steps": 50,
            "trials": 2
        }"#;
        let resolved = validate_config(cfg).unwrap();
        assert_eq!(resolved.lambda_bound(), 0.25);
        let sched = resolved.schedule.unwrap();
        assert_eq!(sched.a, 2.0); // 1/(2 * 0.25)
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let bad = base_theorem1().replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(validate_config(&bad).unwrap_err().to_string().contains("schema_version"));
    }
}
