//! Command implementations.

use std::path::PathBuf;

use dides_core::corr_core::{sample_choice_frequencies, FrechetParams, SkillSpace};
use dides_core::dynamics::{
    dynamic_hat_counterfactual, invert_transitions, solve_levels_path, welfare_ev, DynamicParams, FundamentalHats,
    Fundamentals, TransitionPanel,
};
use dides_core::estimation::{
    ces_log_share_regression, estimate_dides, euler_regress, EstimateOptions, EulerOptions, EulerPanel, PpmlProblem,
};
use dides_core::hat_algebra::{counterfactual_from_adjusted, group_mobility_gain, invert_shares, wage_index_change};
use dides_core::incidence::{first_order_incidence, Shock};
use dides_core::labor_supply::{effective_elasticity_matrix, elasticity_from_ln_x, Economy, ElasticityMatrix};
use dides_core::spectral::{eigendecompose, exposure_spectrum_report};
use dides_core::synthetic::{ppml_data, PpmlDesign};
use dides_core::DidesError;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{Cli, Command, ExposureKind, FixedEffects, Settings};
use crate::error::CliError;
use crate::output::{num, Output, OutputFile};
use crate::workspace::{Occupation, PeriodTable, ShareTable, TransitionTable, Workspace};

/// What a successful run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub command: Command,
    pub out_dir: PathBuf,
    /// Result files, excluding the manifest.
    pub files: Vec<OutputFile>,
}

/// Resolves settings from the parsed arguments and runs the command.
pub fn run(cli: &Cli) -> Result<RunSummary, CliError> {
    let settings = Settings::resolve(&cli.flags)?;
    run_command(cli.command, &settings)
}

/// Runs `command`, writing result tables and `manifest.json` to `settings.out_dir`.
pub fn run_command(command: Command, s: &Settings) -> Result<RunSummary, CliError> {
    s.validate()?;
    let mut out = Output::new(&s.out_dir)?;
    let (inputs, notes) = if command == Command::Sample {
        sample(s, &mut out)?;
        (Vec::new(), Vec::new())
    } else {
        let ws = Workspace::load(&s.data_dir)?;
        let result = match command {
            Command::Incidence => incidence(&ws, s, &mut out),
            Command::Spectral => spectral(&ws, s, &mut out),
            Command::CounterfactualStatic => counterfactual_static(&ws, s, &mut out),
            Command::DynamicsSimulate => dynamics_simulate(&ws, s, &mut out),
            Command::DynamicsCounterfactual => dynamics_counterfactual(&ws, s, &mut out),
            Command::EstimatePpml => estimate_ppml(&ws, s, &mut out),
            Command::EstimateEuler => estimate_euler(&ws, s, &mut out),
            Command::Report => report(&ws, s, &mut out),
            Command::Sample => unreachable!("handled above"),
        };
        result.map_err(|e| name_occupation(&ws, e))?;
        (ws.inputs.clone(), ws.notes.clone())
    };
    let files = out.finish(command, s, &inputs, &notes)?;
    Ok(RunSummary { command, out_dir: s.out_dir.clone(), files })
}

/// Independent seed for a named random stream.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Replaces occupation indices in model errors by ids.
fn name_occupation(ws: &Workspace, e: CliError) -> CliError {
    let id = |o: usize| ws.occupations.get(o).map_or_else(|| o.to_string(), |x| x.id.clone());
    match e {
        CliError::Model(DidesError::DegenerateShare { occupation }) => {
            CliError::Input(format!("occupation '{}' has a zero share", id(occupation)))
        }
        CliError::Model(DidesError::DegenerateOccupation { occupation }) => {
            CliError::Input(format!("occupation '{}' has no positive skill intensity", id(occupation)))
        }
        other => other,
    }
}

fn skills(ws: &Workspace, s: &Settings) -> Result<SkillSpace, CliError> {
    Ok(SkillSpace::new(ws.omega(), DVector::from_vec(s.rho.clone()))?)
}

fn share_table(ws: &Workspace) -> Result<&ShareTable, CliError> {
    ws.shares.as_ref().ok_or_else(|| CliError::Input("this command needs shares.csv".into()))
}

/// `(group index, period index)` selected by the settings.
fn selection(t: &ShareTable, s: &Settings) -> Result<(usize, usize), CliError> {
    let g = match &s.group {
        Some(name) => t.group_index(name)?,
        None => 0,
    };
    let p = match s.period {
        Some(period) => t.period_index(period)?,
        None => 0,
    };
    Ok((g, p))
}

fn base_shares(ws: &Workspace, s: &Settings) -> Result<DVector<f64>, CliError> {
    let t = share_table(ws)?;
    let (g, p) = selection(t, s)?;
    Ok(t.shares[p].row(g).transpose())
}

struct Supply {
    theta_m: ElasticityMatrix,
}

/// Elasticity matrix at the selected shares. With `delta > 0` the matrix
/// of effective labor is used, with productivities normalized so that the
/// wage index is one.
fn supply(ws: &Workspace, s: &Settings) -> Result<Supply, CliError> {
    let skills = skills(ws, s)?;
    let pi = base_shares(ws, s)?;
    let adj = invert_shares(&pi, &skills)?;
    let ln_pi_tilde = adj.pi_tilde.map(f64::ln);
    let theta_m = if s.delta > 0.0 {
        let period = share_table(ws)?.periods[selection(share_table(ws)?, s)?.1];
        let w = ws
            .wages
            .as_ref()
            .and_then(|t| t.get(period).cloned())
            .unwrap_or_else(|| DVector::from_element(ws.n_occupations(), 1.0));
        let a = DVector::from_fn(pi.len(), |o, _| (ln_pi_tilde[o] - s.theta * w[o].ln()).exp());
        let econ = Economy::new(skills.clone(), FrechetParams::new(s.theta, a)?, w, s.sigma)?;
        effective_elasticity_matrix(&econ, s.delta)?
    } else {
        elasticity_from_ln_x(&ln_pi_tilde, &skills, s.theta)?
    };
    Ok(Supply { theta_m })
}

fn exposure_name(kind: ExposureKind) -> &'static str {
    match kind {
        ExposureKind::Ai => "ai",
        ExposureKind::Automation => "automation",
    }
}

fn incidence(ws: &Workspace, s: &Settings, out: &mut Output) -> Result<(), CliError> {
    let sup = supply(ws, s)?;
    let z = ws.exposure(s.exposure);
    let shock = Shock::exposure(z.clone(), s.shock);
    let d_ln_alpha = shock.to_task_shares(&sup.theta_m, s.sigma)?;
    let res = first_order_incidence(&sup.theta_m, s.sigma, &shock)?;
    let rows: Vec<Vec<String>> = ws
        .occupations
        .iter()
        .enumerate()
        .map(|(o, occ)| {
            vec![
                occ.id.clone(),
                occ.name.clone(),
                num(z[o]),
                num(d_ln_alpha[o]),
                num(res.d_ln_w[o]),
                num(res.d_ln_l[o]),
                num(res.passthrough_share[o]),
                num(res.mobility_gain[o]),
            ]
        })
        .collect();
    out.table(
        "incidence.csv",
        &["occ_id", "name", "exposure", "d_ln_alpha", "d_ln_w", "d_ln_l", "passthrough_share", "mobility_gain"],
        &rows,
    )?;
    out.table("passthrough_matrix.csv", &["row_id", "col_id", "value"], &long_matrix(ws, &res.passthrough_matrix))?;
    Ok(())
}

fn long_matrix(ws: &Workspace, m: &DMatrix<f64>) -> Vec<Vec<String>> {
    let ids = ws.ids();
    let mut rows = Vec::with_capacity(m.len());
    for (i, a) in ids.iter().enumerate() {
        for (j, b) in ids.iter().enumerate() {
            rows.push(vec![a.to_string(), b.to_string(), num(m[(i, j)])]);
        }
    }
    rows
}

fn spectral(ws: &Workspace, s: &Settings, out: &mut Output) -> Result<(), CliError> {
    let sup = supply(ws, s)?;
    let spectrum = eigendecompose(&sup.theta_m)?;
    let n = spectrum.dim();
    let values: Vec<Vec<String>> = (0..n)
        .map(|k| {
            let l = spectrum.eigenvalues[k];
            vec![k.to_string(), num(l), num(s.sigma / (s.sigma + l)), spectrum.is_degenerate(k).to_string()]
        })
        .collect();
    out.table("eigenvalues.csv", &["mode", "eigenvalue", "passthrough_factor", "degenerate"], &values)?;
    let ids = ws.ids();
    let mut vectors = Vec::with_capacity(n * n);
    for k in 0..n {
        for (o, id) in ids.iter().enumerate() {
            vectors.push(vec![k.to_string(), id.to_string(), num(spectrum.right_vectors[(o, k)])]);
        }
    }
    out.table("eigenvectors.csv", &["mode", "occ_id", "value"], &vectors)?;
    let mut modes = Vec::new();
    for kind in [ExposureKind::Ai, ExposureKind::Automation] {
        let rep = exposure_spectrum_report(&spectrum, &ws.exposure(kind))?;
        modes.push(vec![
            exposure_name(kind).into(),
            "0".into(),
            num(spectrum.eigenvalues[0]),
            num(rep.uniform_coefficient),
            num(0.0),
            spectrum.is_degenerate(0).to_string(),
        ]);
        for (k, m) in rep.modes.iter().enumerate() {
            modes.push(vec![
                exposure_name(kind).into(),
                (k + 1).to_string(),
                num(m.eigenvalue),
                num(m.coefficient),
                num(m.variance_share),
                m.degenerate.to_string(),
            ]);
        }
    }
    out.table(
        "exposure_modes.csv",
        &["exposure", "mode", "eigenvalue", "coefficient", "variance_share", "degenerate"],
        &modes,
    )?;
    Ok(())
}

/// Wage changes from the config map, or `exp(shock · z)`.
fn wage_changes(ws: &Workspace, s: &Settings) -> Result<DVector<f64>, CliError> {
    match &s.w_hat {
        Some(map) => {
            for key in map.keys() {
                if !ws.occupations.iter().any(|o| &o.id == key) {
                    return Err(CliError::Input(format!("w_hat names unknown occupation '{key}'")));
                }
            }
            let mut v = DVector::zeros(ws.n_occupations());
            for (o, occ) in ws.occupations.iter().enumerate() {
                v[o] = *map
                    .get(&occ.id)
                    .ok_or_else(|| CliError::Input(format!("w_hat is missing occupation '{}'", occ.id)))?;
            }
            Ok(v)
        }
        None => Ok(ws.exposure(s.exposure).map(|z| (s.shock * z).exp())),
    }
}

fn counterfactual_static(ws: &Workspace, s: &Settings, out: &mut Output) -> Result<(), CliError> {
    let skills = skills(ws, s)?;
    let t = share_table(ws)?;
    let (_, p) = selection(t, s)?;
    let w_hat = wage_changes(ws, s)?;
    let panel = t.panel()?;
    let gains = group_mobility_gain(&panel, p, &w_hat, &skills, s.theta)?;
    let mut share_rows = Vec::new();
    let mut group_rows = Vec::new();
    for (g, group) in t.groups.iter().enumerate() {
        let pi = panel.group_shares(p, g);
        let adj = invert_shares(&pi, &skills)?;
        let (pp, pt) = counterfactual_from_adjusted(&adj, &w_hat, &skills, s.theta)?;
        let w_index = wage_index_change(&adj.pi_tilde, &w_hat, &skills, s.theta)?;
        for (o, occ) in ws.occupations.iter().enumerate() {
            share_rows.push(vec![
                group.clone(),
                occ.id.clone(),
                num(w_hat[o]),
                num(pi[o]),
                num(pp[o]),
                num(adj.pi_tilde[o]),
                num(pt[o]),
            ]);
        }
        group_rows.push(vec![group.clone(), num(w_index), num(gains[g])]);
    }
    out.table(
        "counterfactual_shares.csv",
        &["group", "occ_id", "w_hat", "share", "share_cf", "pi_tilde", "pi_tilde_cf"],
        &share_rows,
    )?;
    out.table("groups.csv", &["group", "wage_index_change", "mobility_gain"], &group_rows)?;
    Ok(())
}

/// Switching costs proportional to the L1 distance between skill profiles.
fn switching_costs(ws: &Workspace, s: &Settings) -> DMatrix<f64> {
    let omega = ws.omega();
    let n = omega.nrows();
    DMatrix::from_fn(n, n, |i, j| s.tau_scale * (omega.row(i) - omega.row(j)).abs().sum())
}

fn dynamic_params(ws: &Workspace, s: &Settings) -> Result<DynamicParams, CliError> {
    Ok(DynamicParams::new(s.beta, s.kappa_ratio, switching_costs(ws, s), skills(ws, s)?)?)
}

fn dynamics_simulate(ws: &Workspace, s: &Settings, out: &mut Output) -> Result<(), CliError> {
    let params = dynamic_params(ws, s)?;
    let pi = base_shares(ws, s)?;
    let n = ws.n_occupations();
    let fundamentals = Fundamentals::constant(DVector::from_element(n, 1.0), pi.clone(), 1.0, s.horizon)?;
    let path = solve_levels_path(&fundamentals, &params, &pi, s.sigma, None, &s.solver())?;
    let periods: Vec<i64> = (0..=s.horizon as i64).collect();
    let mut employment_periods = vec![-1];
    employment_periods.extend(&periods);
    let mut employment = vec![path.panel.l_init.clone()];
    employment.extend(path.panel.l.iter().cloned());
    let sim = Workspace {
        occupations: ws.occupations.clone(),
        transitions: Some(TransitionTable { periods: periods.clone(), mu: path.panel.mu.clone() }),
        wages: Some(PeriodTable { periods, values: path.panel.w.clone() }),
        employment: Some(PeriodTable { periods: employment_periods, values: employment }),
        ..Default::default()
    };
    for file in sim.save(out.dir())? {
        out.register(&file)?;
    }
    out.json(
        "simulation.json",
        &json!({ "outer_iterations": path.iterations, "residual": path.residual, "horizon": s.horizon }),
    )?;
    Ok(())
}

fn observed_panel(ws: &Workspace, s: &Settings) -> Result<(TransitionPanel, Vec<i64>), CliError> {
    let need = |what: &str| CliError::Input(format!("this command needs {what}"));
    let tr = ws.transitions.as_ref().ok_or_else(|| need("transitions.csv"))?;
    let wages = ws.wages.as_ref().ok_or_else(|| need("wages.csv"))?;
    let emp = ws.employment.as_ref().ok_or_else(|| need("employment.csv"))?;
    let l_init = emp.get(-1).ok_or_else(|| CliError::Input("employment.csv needs period -1 (initial employment)".into()))?;
    let mut l = Vec::new();
    let mut w = Vec::new();
    for p in &tr.periods {
        l.push(emp.get(*p).cloned().ok_or_else(|| CliError::Input(format!("employment.csv is missing period {p}")))?);
        w.push(wages.get(*p).cloned().ok_or_else(|| CliError::Input(format!("wages.csv is missing period {p}")))?);
    }
    let panel = TransitionPanel::new(tr.mu.clone(), l, w, None, l_init.clone(), &skills(ws, s)?)?;
    Ok((panel, tr.periods.clone()))
}

fn dynamics_counterfactual(ws: &Workspace, s: &Settings, out: &mut Output) -> Result<(), CliError> {
    let params = dynamic_params(ws, s)?;
    let (panel, periods) = observed_panel(ws, s)?;
    let horizon = panel.horizon();
    let n = ws.n_occupations();
    let z = ws.exposure(s.exposure);
    let ratios: Vec<DVector<f64>> = (0..=horizon)
        .map(|t| {
            let phase = (t as f64 / s.phase_in as f64).min(1.0);
            z.map(|v| (s.shock * v * phase).exp())
        })
        .collect();
    let ones = vec![DVector::from_element(n, 1.0); horizon + 1];
    let hats = FundamentalHats::from_level_ratios(ratios, ones, vec![1.0; horizon + 1])?;
    let path = dynamic_hat_counterfactual(&panel, &hats, &params, s.sigma, &s.solver())?;
    let ev = welfare_ev(&path);
    let mut rows = Vec::new();
    let mut ev_rows = Vec::new();
    for (t, p) in periods.iter().enumerate() {
        for (o, occ) in ws.occupations.iter().enumerate() {
            rows.push(vec![
                p.to_string(),
                occ.id.clone(),
                num(panel.l[t][o]),
                num(path.l_prime[t][o]),
                num(path.w_ratio[t][o]),
                num(path.stay_ratio[t][o]),
            ]);
            if t >= 1 {
                ev_rows.push(vec![p.to_string(), occ.id.clone(), num(ev[t - 1][o])]);
            }
        }
    }
    out.table("path.csv", &["period", "occ_id", "employment", "employment_cf", "wage_ratio", "stay_ratio"], &rows)?;
    out.table("ev.csv", &["period", "occ_id", "ev"], &ev_rows)?;
    Ok(())
}

fn estimate_ppml(ws: &Workspace, s: &Settings, out: &mut Output) -> Result<(), CliError> {
    let t = share_table(ws)?;
    let (_, base) = selection(t, s)?;
    let end = base + 1;
    if end >= t.periods.len() {
        return Err(CliError::Input("estimate-ppml needs a period after the base period in shares.csv".into()));
    }
    let w_hat = match (&s.w_hat, &ws.wages) {
        (Some(_), _) => wage_changes(ws, s)?,
        (None, Some(wages)) => {
            let get = |p: i64| {
                wages.get(p).cloned().ok_or_else(|| CliError::Input(format!("wages.csv is missing period {p}")))
            };
            get(t.periods[end])?.component_div(&get(t.periods[base])?)
        }
        (None, None) => return Err(CliError::Input("estimate-ppml needs wages.csv or w_hat in the config".into())),
    };
    let problem = PpmlProblem::new(t.panel()?, w_hat, ws.omega())?.with_periods(base, end)?;
    let opts = EstimateOptions {
        n_starts: s.n_starts,
        seed: substream(s.seed, "ppml-starts"),
        theta_init: s.theta_init,
        fixed_rho: s.ces.then(|| vec![Some(0.0); 3]),
        ..Default::default()
    };
    let est = estimate_dides(&problem, &opts)?;
    let skill_names = ["rho_cog", "rho_man", "rho_int"];
    let mut rows = vec![vec!["theta".into(), num(est.theta), num(est.se_theta), est.theta_at_bound.to_string()]];
    if !s.ces {
        for (k, name) in skill_names.iter().enumerate() {
            rows.push(vec![name.to_string(), num(est.rho[k]), num(est.se_rho[k]), est.rho_at_bound[k].to_string()]);
        }
    }
    out.table("estimates.csv", &["parameter", "estimate", "std_error", "at_bound"], &rows)?;
    let optima: Vec<Vec<String>> = est
        .local_optima
        .iter()
        .enumerate()
        .map(|(k, o)| {
            vec![
                k.to_string(),
                num(o.theta),
                num(o.rho[0]),
                num(o.rho[1]),
                num(o.rho[2]),
                num(o.deviance),
                o.hits.to_string(),
                o.converged.to_string(),
            ]
        })
        .collect();
    out.table(
        "local_optima.csv",
        &["rank", "theta", "rho_cog", "rho_man", "rho_int", "deviance", "hits", "converged"],
        &optima,
    )?;
    let trace: Vec<Vec<String>> = est.trace.iter().enumerate().map(|(k, d)| vec![k.to_string(), num(*d)]).collect();
    out.table("trace.csv", &["iteration", "deviance"], &trace)?;
    let mut summary = json!({
        "specification": if s.ces { "ces" } else { "dides" },
        "deviance": est.deviance,
        "dispersion": est.dispersion,
        "converged": est.converged,
        "iterations": est.iterations,
        "n_groups": t.groups.len(),
        "n_occupations": ws.n_occupations(),
        "base_period": t.periods[base],
        "end_period": t.periods[end],
    });
    if s.ces {
        summary["log_share_regression_theta"] = json!(ces_log_share_regression(&problem).ok());
    }
    out.json("estimate.json", &summary)?;
    Ok(())
}

fn estimate_euler(ws: &Workspace, s: &Settings, out: &mut Output) -> Result<(), CliError> {
    let skills = skills(ws, s)?;
    let tr = ws.transitions.as_ref().ok_or_else(|| CliError::Input("this command needs transitions.csv".into()))?;
    let wages = ws.wages.as_ref().ok_or_else(|| CliError::Input("this command needs wages.csv".into()))?;
    let n = ws.n_occupations();
    let mut mu_tilde = Vec::with_capacity(tr.periods.len());
    let mut w = Vec::with_capacity(tr.periods.len());
    for (k, p) in tr.periods.iter().enumerate() {
        let mut m = DMatrix::zeros(n, n);
        for o in 0..n {
            let row = invert_transitions(&tr.mu[k].row(o).transpose(), &skills)?;
            m.set_row(o, &row.transpose());
        }
        mu_tilde.push(m);
        w.push(wages.get(*p).cloned().ok_or_else(|| CliError::Input(format!("wages.csv is missing period {p}")))?);
    }
    let panel = EulerPanel::new(mu_tilde, w, s.beta)?;
    let (pair_fe, fe_origin, fe_destination) = match s.fixed_effects {
        FixedEffects::None => (false, false, false),
        FixedEffects::Pair => (true, false, false),
        FixedEffects::Origin => (false, true, false),
        FixedEffects::Destination => (false, false, true),
        FixedEffects::TwoWay => (false, true, true),
    };
    let mut rows = Vec::new();
    let estimators: &[bool] = if s.use_iv { &[false, true] } else { &[false] };
    for &use_iv in estimators {
        let est = euler_regress(&panel, &EulerOptions { use_iv, pair_fe, fe_origin, fe_destination })?;
        let (lo, hi) = est.ci95();
        let opt = |v: Option<f64>| v.map_or_else(String::new, num);
        rows.push(vec![
            if use_iv { "2sls" } else { "ols" }.into(),
            num(est.ratio),
            num(est.se),
            num(lo),
            num(hi),
            est.n_obs.to_string(),
            est.n_absorbed.to_string(),
            opt(est.first_stage_f),
            opt(est.first_stage_partial_r2),
        ]);
    }
    out.table(
        "euler.csv",
        &["estimator", "ratio", "std_error", "ci_low", "ci_high", "n_obs", "n_absorbed", "first_stage_f", "partial_r2"],
        &rows,
    )?;
    Ok(())
}

fn sample(s: &Settings, out: &mut Output) -> Result<(), CliError> {
    if s.sample_occupations < 2 || s.sample_groups == 0 {
        return Err(CliError::Input("sample needs at least two occupations and one group".into()));
    }
    let design = PpmlDesign {
        n_occupations: s.sample_occupations,
        n_groups: s.sample_groups,
        theta: s.theta,
        rho: DVector::from_vec(s.rho.clone()),
        wage_spread: s.sample_wage_spread,
        noise: s.sample_noise,
    };
    let data = ppml_data(&mut dides_core::synthetic::rng(substream(s.seed, "workspace")), &design)?;
    let mut exposure_rng = dides_core::synthetic::rng(substream(s.seed, "exposure"));
    let width = s.sample_occupations.to_string().len();
    let occupations: Vec<Occupation> = (0..s.sample_occupations)
        .map(|o| Occupation {
            id: format!("occ{:0width$}", o + 1),
            name: format!("Occupation {}", o + 1),
            omega_cog: data.omega[(o, 0)],
            omega_man: data.omega[(o, 1)],
            omega_int: data.omega[(o, 2)],
            z_automation: exposure_rng.random::<f64>(),
            z_ai: exposure_rng.random::<f64>(),
        })
        .collect();
    let panel = &data.panel;
    let ws = Workspace {
        occupations,
        shares: Some(ShareTable {
            groups: panel.groups().to_vec(),
            periods: vec![0, 1],
            shares: vec![panel.shares(0).clone(), panel.shares(1).clone()],
        }),
        wages: Some(PeriodTable {
            periods: vec![0, 1],
            values: vec![DVector::from_element(s.sample_occupations, 1.0), data.w_hat.clone()],
        }),
        ..Default::default()
    };
    for file in ws.save(out.dir())? {
        out.register(&file)?;
    }
    // Monte-Carlo check of the first group's base shares.
    let skills = SkillSpace::new(data.omega.clone(), DVector::from_vec(s.rho.clone()))?;
    let pi = panel.group_shares(0, 0);
    let adj = invert_shares(&pi, &skills)?;
    let frechet = FrechetParams::new(s.theta, adj.pi_tilde.clone())?;
    let ones = DVector::from_element(pi.len(), 1.0);
    let freq = sample_choice_frequencies(&frechet, &skills, &ones, s.draws, substream(s.seed, "sampler"))?;
    let rows: Vec<Vec<String>> =
        ws.occupations.iter().enumerate().map(|(o, occ)| vec![occ.id.clone(), num(pi[o]), num(freq[o])]).collect();
    out.table("sample_frequencies.csv", &["occ_id", "share", "simulated_share"], &rows)?;
    Ok(())
}

fn report(ws: &Workspace, s: &Settings, out: &mut Output) -> Result<(), CliError> {
    let names = ["cognitive", "manual", "interpersonal"];
    let within: Vec<Vec<String>> = (0..3)
        .map(|k| {
            let e = s.theta / (1.0 - s.rho[k]);
            vec![names[k].into(), num(s.rho[k]), num(e), format!("{e:.1}")]
        })
        .collect();
    out.table("within_skill.csv", &["skill", "rho", "elasticity", "rounded"], &within)?;
    let mut summary = json!({
        "n_occupations": ws.n_occupations(),
        "theta": s.theta,
        "rho": s.rho,
        "sigma": s.sigma,
        "ces_passthrough": s.sigma / (s.sigma + s.theta),
    });
    if let Some(t) = &ws.shares {
        summary["groups"] = json!(t.groups);
        summary["periods"] = json!(t.periods);
        let sup = supply(ws, s)?;
        let spectrum = eigendecompose(&sup.theta_m)?;
        let n = spectrum.dim();
        let pi = base_shares(ws, s)?;
        let rows: Vec<Vec<String>> = ws
            .occupations
            .iter()
            .enumerate()
            .map(|(o, occ)| {
                vec![occ.id.clone(), occ.name.clone(), num(pi[o]), num(sup.theta_m.theta_matrix[(o, o)])]
            })
            .collect();
        out.table("own_elasticities.csv", &["occ_id", "name", "share", "own_elasticity"], &rows)?;
        summary["max_row_sum"] = json!(sup.theta_m.max_row_sum());
        summary["eigenvalue_min_nonzero"] = json!(if n > 1 { spectrum.eigenvalues[1] } else { f64::NAN });
        summary["eigenvalue_max"] = json!(spectrum.eigenvalues[n - 1]);
        summary["eigenvector_condition"] = json!(spectrum.condition);
    }
    out.json("report.json", &summary)?;
    Ok(())
}
