use std::fs;
use std::path::Path;

use livecap_core::allocation::{
    admission_control, equal_experience_arrivals, equal_experience_rate, max_users_max_resolution,
    static_share_arrivals, two_class_split, AllocationPlan, CellConfig, ExpectationMethod,
    GridOptions, TwoClassSplit, User,
};
use livecap_core::channel::{estimate_pmf, split_by_user};
use livecap_core::playout::{evaluate, max_playout_rate, PlayoutSolution, QoeConstraints};
use livecap_core::queueing::{ArrivalPmf, SolverReport};
use livecap_core::sim::{
    simulate, trace_playback_arrivals, write_frames_csv, AbrParams, ArrivalSource, Policy,
    RunStats, SimConfig,
};
use livecap_core::Error;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{file_stem, write_rows, Report};
use crate::scenario::{load_mapping, load_mcs, load_trace, PolicyKind, Scenario};

// ---------------------------------------------------------------- ingest

#[derive(Debug, Serialize)]
pub struct IngestRow {
    pub user: String,
    pub samples: usize,
    pub mean_rate_bps: f64,
    pub file: String,
}

#[derive(Debug, Serialize)]
pub struct IngestReport {
    pub users: Vec<IngestRow>,
}

impl Report for IngestReport {
    fn write_csv(&self, w: &mut csv::Writer<Vec<u8>>) -> CliResult<()> {
        write_rows(w, &self.users)
    }
}

/// Writes one rate PMF per user of the trace into `out`.
pub fn ingest(trace: &Path, mcs: Option<&Path>, mapping: Option<&Path>, out: &Path) -> CliResult<IngestReport> {
    let table = load_mcs(mcs)?;
    let map = load_mapping(mapping)?;
    let records = load_trace(trace)?;
    if records.is_empty() {
        return Err(Error::NoSamples.into());
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut users = Vec::new();
    for (id, recs) in split_by_user(records) {
        let pmf = estimate_pmf(&recs, &table, &map).map_err(CliError::for_user(&id))?;
        let path = out.join(format!("{}.json", file_stem(&id)));
        let text = serde_json::to_string_pretty(&pmf).map_err(|e| CliError::Output(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        log::info!("user {id}: {} samples -> {}", recs.len(), path.display());
        users.push(IngestRow {
            user: id,
            samples: recs.len(),
            mean_rate_bps: pmf.mean(),
            file: path.display().to_string(),
        });
    }
    Ok(IngestReport { users })
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Clone, Serialize)]
pub struct PlayoutRow {
    pub id: String,
    pub share: Option<f64>,
    pub mean_arrivals: f64,
    #[serde(rename = "S")]
    pub service: usize,
    #[serde(rename = "U_bps")]
    pub rate_bps: f64,
    pub outage: f64,
    pub drop: f64,
    pub meets_targets: bool,
}

impl PlayoutRow {
    fn new(id: &str, share: Option<f64>, arrivals: &ArrivalPmf, sol: &PlayoutSolution, c: &QoeConstraints) -> Self {
        PlayoutRow {
            id: id.to_string(),
            share,
            mean_arrivals: arrivals.mean(),
            service: sol.service,
            rate_bps: sol.rate_bps,
            outage: sol.outage,
            drop: sol.drop,
            meets_targets: c.satisfied_by(sol.outage, sol.drop),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub kind: &'static str,
    pub epsilon: f64,
    pub delta0: f64,
    pub buffer_packets: usize,
    pub users: Vec<PlayoutRow>,
    /// Full solver output per user (`--full`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<Vec<SolverReport>>,
}

impl Report for AnalyzeReport {
    fn write_csv(&self, w: &mut csv::Writer<Vec<u8>>) -> CliResult<()> {
        write_rows(w, &self.users)
    }
}

fn user_arrivals(sc: &Scenario, cell: &CellConfig) -> CliResult<Vec<(String, f64, ArrivalPmf)>> {
    cell.users
        .iter()
        .zip(sc.shares())
        .map(|(u, share)| {
            let a = static_share_arrivals(cell, &u.pmf, share).map_err(CliError::for_user(&u.id))?;
            Ok((u.id.clone(), share, a))
        })
        .collect()
}

/// Maximum constant playout rate of every user at its static share.
pub fn analyze(sc: &Scenario, full: bool) -> CliResult<AnalyzeReport> {
    let cell = sc.cell()?;
    let c = sc.constraints()?;
    let frame = sc.frame()?;
    let mut users = Vec::new();
    let mut solver = Vec::new();
    for (id, share, a) in user_arrivals(sc, &cell)? {
        log::info!("user {id}: share {share:.4}, mean arrivals {:.3}", a.mean());
        let sol = max_playout_rate(&a, sc.buffer_packets, &frame, &c).map_err(CliError::for_user(&id))?;
        if full {
            solver.push(SolverReport::solve(&a, sol.service, sc.buffer_packets).map_err(CliError::for_user(&id))?);
        }
        users.push(PlayoutRow::new(&id, Some(share), &a, &sol, &c));
    }
    Ok(AnalyzeReport {
        kind: "analyze",
        epsilon: c.epsilon,
        delta0: c.delta0,
        buffer_packets: sc.buffer_packets,
        users,
        solver: full.then_some(solver),
    })
}

// ---------------------------------------------------------------- allocate

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Every user gets the same playout rate (blocks shared inversely to rates).
    Equal,
    /// Guarantee `u_min_bps` to everyone, upgrade as many users as possible to `u_max_bps`.
    MaxUsers,
    /// Admit as many users as possible at `u_min_bps`.
    Admission,
    /// Premium and regular classes with a fixed rate ratio.
    TwoClass,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassRow {
    pub class: &'static str,
    pub blocks: u32,
    pub formula_bps: f64,
    #[serde(rename = "S")]
    pub service: usize,
    #[serde(rename = "U_bps")]
    pub rate_bps: f64,
    pub outage: f64,
    pub drop: f64,
    pub meets_targets: bool,
}

#[derive(Debug, Serialize)]
pub struct AllocateReport {
    pub kind: &'static str,
    pub objective: Objective,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<AllocationPlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub admitted: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upgraded: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<TwoClassSplit>,
    pub users: Vec<PlayoutRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<ClassRow>,
}

impl Report for AllocateReport {
    fn write_csv(&self, w: &mut csv::Writer<Vec<u8>>) -> CliResult<()> {
        if self.classes.is_empty() {
            write_rows(w, &self.users)
        } else {
            write_rows(w, &self.classes)
        }
    }
}

fn required(value: Option<f64>, name: &str, objective: &str) -> CliResult<f64> {
    value.ok_or_else(|| CliError::Scenario(format!("objective {objective} needs {name}")))
}

/// Operating point of a user holding `share` and playing out `rate_bps`.
fn static_row(cell: &CellConfig, user: &User, share: f64, rate_bps: f64, c: &QoeConstraints) -> CliResult<PlayoutRow> {
    let a = static_share_arrivals(cell, &user.pmf, share).map_err(CliError::for_user(&user.id))?;
    let s = cell.frame.packets_per_frame(rate_bps).clamp(1, cell.buffer - 1);
    let (outage, drop) = evaluate(&a, s, cell.buffer).map_err(CliError::for_user(&user.id))?;
    let sol = PlayoutSolution {
        service: s,
        rate_bps: cell.frame.rate_bps(s),
        outage,
        drop,
    };
    Ok(PlayoutRow::new(&user.id, Some(share), &a, &sol, c))
}

fn share_of(plan: &AllocationPlan, id: &str) -> Option<f64> {
    plan.shares.iter().find(|s| s.id == id).map(|s| s.share)
}

/// Best playout point, or the closest one when the targets are out of reach.
fn best_effort(a: &ArrivalPmf, cell: &CellConfig, c: &QoeConstraints) -> livecap_core::Result<PlayoutSolution> {
    match max_playout_rate(a, cell.buffer, &cell.frame, c) {
        Err(Error::Unsatisfiable {
            best_service,
            best_outage,
            best_drop,
        }) => Ok(PlayoutSolution {
            service: best_service,
            rate_bps: cell.frame.rate_bps(best_service),
            outage: best_outage,
            drop: best_drop,
        }),
        other => other,
    }
}

pub fn allocate(sc: &Scenario, objective: Objective) -> CliResult<AllocateReport> {
    let cell = sc.cell()?;
    let c = sc.constraints()?;
    let mut report = AllocateReport {
        kind: "allocate",
        objective,
        plan: None,
        admitted: None,
        rejected: None,
        upgraded: None,
        split: None,
        users: Vec::new(),
        classes: Vec::new(),
    };
    match objective {
        Objective::Equal => {
            let options = GridOptions::default();
            let a = equal_experience_arrivals(&cell, &options)?;
            let sol = equal_experience_rate(&cell, &c, &options)?;
            report.plan = Some(AllocationPlan::dynamic());
            report.users = cell
                .users
                .iter()
                .map(|u| PlayoutRow::new(&u.id, None, &a, &sol, &c))
                .collect();
        }
        Objective::Admission => {
            let u_min = required(sc.u_min_bps, "u_min_bps", "admission")?;
            let adm = admission_control(&cell, u_min, c.delta0)?;
            for u in cell.users.iter().filter(|u| adm.admitted.contains(&u.id)) {
                let share = share_of(&adm.plan, &u.id).expect("admitted users hold a share");
                report.users.push(static_row(&cell, u, share, u_min, &c)?);
            }
            report.admitted = Some(adm.admitted);
            report.rejected = Some(adm.rejected);
            report.plan = Some(adm.plan);
        }
        Objective::MaxUsers => {
            let u_min = required(sc.u_min_bps, "u_min_bps", "max-users")?;
            let u_max = required(sc.u_max_bps, "u_max_bps", "max-users")?;
            let res = max_users_max_resolution(&cell, u_min, u_max, c.delta0)?;
            for u in &cell.users {
                let share = share_of(&res.plan, &u.id).expect("every user holds a share");
                let rate = if res.upgraded.contains(&u.id) { u_max } else { u_min };
                report.users.push(static_row(&cell, u, share, rate, &c)?);
            }
            report.upgraded = Some(res.upgraded);
            report.plan = Some(res.plan);
        }
        Objective::TwoClass => {
            let cfg = sc.two_class_config()?;
            let split = two_class_split(&cfg, cell.blocks, ExpectationMethod::default())?;
            let premium_ids = &sc.two_class.as_ref().expect("checked by two_class_config").premium;
            let classes = [
                ("premium", true, split.blocks_premium, split.rate_premium, cfg.epsilon_premium, cfg.delta_premium),
                ("regular", false, split.blocks_regular, split.rate_regular, cfg.epsilon_regular, cfg.delta_regular),
            ];
            for (name, premium, blocks, formula, eps, delta) in classes {
                let users: Vec<User> = cell
                    .users
                    .iter()
                    .filter(|u| premium_ids.contains(&u.id) == premium)
                    .cloned()
                    .collect();
                let class_cell = CellConfig::new(users, blocks, cell.frame, cell.buffer)?;
                let class_c = QoeConstraints::new(eps, delta)?;
                let a = equal_experience_arrivals(&class_cell, &GridOptions::default())?;
                let sol = best_effort(&a, &class_cell, &class_c)?;
                for u in &class_cell.users {
                    report.users.push(PlayoutRow::new(&u.id, None, &a, &sol, &class_c));
                }
                report.classes.push(ClassRow {
                    class: name,
                    blocks,
                    formula_bps: formula,
                    service: sol.service,
                    rate_bps: sol.rate_bps,
                    outage: sol.outage,
                    drop: sol.drop,
                    meets_targets: class_c.satisfied_by(sol.outage, sol.drop),
                });
            }
            report.split = Some(split);
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Serialize)]
pub struct SimRow {
    pub id: String,
    pub share: f64,
    pub policy: PolicyKind,
    /// Constant-policy batch; empty for ABR.
    #[serde(rename = "S")]
    pub service: Option<usize>,
    /// Mean playout rate.
    #[serde(rename = "U_bps")]
    pub rate_bps: f64,
    pub outage: f64,
    pub drop: f64,
    pub qoe: f64,
    pub playout_variance: f64,
    pub outage_std_error: Option<f64>,
    pub drop_std_error: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct SimUser {
    #[serde(flatten)]
    pub row: SimRow,
    pub runs: Vec<RunStats>,
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub kind: &'static str,
    pub frames: usize,
    pub runs: usize,
    pub seed: u64,
    pub users: Vec<SimUser>,
}

impl Report for SimulateReport {
    fn write_csv(&self, w: &mut csv::Writer<Vec<u8>>) -> CliResult<()> {
        let rows: Vec<&SimRow> = self.users.iter().map(|u| &u.row).collect();
        write_rows(w, &rows)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SimOverrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub frames: Option<usize>,
    pub policy: Option<PolicyKind>,
}

/// Simulates every user at its static share; `frames_dir` receives a
/// per-frame dump of the first replication of each user.
pub fn simulate_users(sc: &Scenario, overrides: SimOverrides, frames_dir: Option<&Path>) -> CliResult<SimulateReport> {
    let cell = sc.cell()?;
    let c = sc.constraints()?;
    let frame = sc.frame()?;
    let mut cfg = SimConfig::new(
        overrides.frames.unwrap_or(sc.sim.frames),
        overrides.seed.unwrap_or(sc.sim.seed),
        overrides.runs.unwrap_or(sc.sim.runs),
        sc.buffer_packets,
        frame,
    );
    cfg.packets = sc.packet_sizes();
    cfg.eta = sc.sim.eta;
    let policy_kind = overrides.policy.unwrap_or(sc.sim.policy);
    let trace = sc.trace()?;

    let abr_start = match (policy_kind, sc.sim.abr.u_init_bps) {
        (PolicyKind::Abr, None) => Some(equal_experience_rate(&cell, &c, &GridOptions::default())?.rate_bps),
        (_, rate) => rate,
    };

    let mut users = Vec::new();
    for ((id, share, a), user) in user_arrivals(sc, &cell)?.into_iter().zip(&cell.users) {
        let source = match &trace {
            Some((records, mcs, map)) => {
                let recs = records.get(&id).ok_or_else(|| {
                    CliError::Scenario(format!("user {id} does not appear in the trace"))
                })?;
                let blocks = cell.blocks as f64 * share;
                ArrivalSource::Trace(
                    trace_playback_arrivals(recs, mcs, map, blocks, &frame).map_err(CliError::for_user(&id))?,
                )
            }
            None => ArrivalSource::Iid(a.clone()),
        };
        let policy = match policy_kind {
            PolicyKind::Constant => {
                let service = match sc.sim.service {
                    Some(s) => s,
                    None => {
                        max_playout_rate(&a, sc.buffer_packets, &frame, &c)
                            .map_err(CliError::for_user(&id))?
                            .service
                    }
                };
                Policy::Constant { service }
            }
            PolicyKind::Abr => Policy::Abr(AbrParams::with_fractions(
                sc.buffer_packets,
                sc.sim.abr.low,
                sc.sim.abr.high,
                sc.sim.abr.theta,
                abr_start.expect("set for ABR"),
                &frame,
            )),
        };
        log::info!("user {}: simulating {} x {} frames", user.id, cfg.runs, cfg.frames);
        let report = simulate(&source, &policy, &cfg).map_err(CliError::for_user(&id))?;
        if let Some(dir) = frames_dir {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            let path = dir.join(format!("frames_{}.csv", file_stem(&id)));
            let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
            write_frames_csv(std::io::BufWriter::new(file), &source, &policy, &cfg, 0)
                .map_err(CliError::for_user(&id))?;
        }
        users.push(SimUser {
            row: SimRow {
                id,
                share,
                policy: policy_kind,
                service: match policy {
                    Policy::Constant { service } => Some(service),
                    Policy::Abr(_) => None,
                },
                rate_bps: report.mean_playout_bps,
                outage: report.empirical_outage,
                drop: report.empirical_drop,
                qoe: report.qoe,
                playout_variance: report.playout_variance,
                outage_std_error: report.outage_std_error,
                drop_std_error: report.drop_std_error,
            },
            runs: report.runs,
        });
    }
    Ok(SimulateReport {
        kind: "simulate",
        frames: cfg.frames,
        runs: cfg.runs,
        seed: cfg.seed,
        users,
    })
}
