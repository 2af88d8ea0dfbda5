use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use descspace::channels::{harden, Estimate, HardChannel, HardenConfig, SoftEncoder};
use descspace::infotheory::{
    description_joint, pointwise_o, pointwise_tc, quantity_of, sort_by_contribution, subsystem_points,
    PointwiseReport, Quantity,
};
use descspace::objective::{Direction, ObjectiveSpec};
use descspace::sampling::{
    histogram, mean_std, random_bsc_survey, rejection_sample_hard, InformationBand, HISTOGRAM_BIN_BITS,
    LOW_ACCEPTANCE_RATE,
};
use descspace::systems::{JointTable, SystemSpec};
use descspace::trainer::{best_of, best_of_scans, ScanRecord, TrainConfig};

use crate::args::*;
use crate::io::*;
use crate::svg::{HistogramChart, ScatterChart};

/// Terminal output that tolerates a closed pipe.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

pub const SCAN_CSV: &str = "scan.csv";
pub const POINT_CSV: &str = "point.csv";
pub const SURVEY_CSV: &str = "survey.csv";
pub const HARD_SAMPLES_CSV: &str = "hard_samples.csv";
pub const HISTOGRAM_CSV: &str = "histogram.csv";
pub const SUBSYSTEMS_CSV: &str = "subsystems.csv";
pub const HARD_JSON: &str = "hard.json";

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Scan(a) => cmd_train(cmd, a, None),
        Command::Point(a) => cmd_train(cmd, &a.train, Some(a.iin)),
        Command::Harden(a) => cmd_harden(cmd, a),
        Command::Sample(a) => cmd_sample(cmd, a),
        Command::Subsystems(a) => cmd_subsystems(cmd, a),
        Command::Plot(a) => cmd_plot(cmd, a),
        Command::Replay(a) => cmd_replay(a),
    }
}

/// Resolves every input path, then writes the manifest before any work.
fn begin(cmd: &Command, manifest_path: &Path) -> Result<Command> {
    let mut resolved = cmd.clone();
    let (system, objective, config, seed, out) = match &mut resolved {
        Command::Scan(a) | Command::Point(PointArgs { train: a, .. }) => {
            a.system = existing(&a.system)?;
            a.objective = existing(&a.objective)?;
            a.config = a.config.as_deref().map(existing).transpose()?;
            a.out = absolute(&a.out)?;
            (Some(a.system.clone()), Some(a.objective.clone()), a.config.clone(), a.seed, a.out.clone())
        }
        Command::Harden(a) => {
            a.snapshot = existing(&a.snapshot)?;
            a.system = a.system.as_deref().map(existing).transpose()?;
            a.out = absolute(&a.out)?;
            (a.system.clone(), None, None, None, a.out.clone())
        }
        Command::Sample(a) => {
            a.system = existing(&a.system)?;
            a.out = absolute(&a.out)?;
            (Some(a.system.clone()), None, None, Some(a.seed), a.out.clone())
        }
        Command::Subsystems(a) => {
            a.system = existing(&a.system)?;
            a.out = absolute(&a.out)?;
            (Some(a.system.clone()), None, None, None, a.out.clone())
        }
        Command::Plot(a) => {
            for p in a.scan.iter_mut() {
                *p = existing(p)?;
            }
            for p in [&mut a.survey, &mut a.subsystems, &mut a.histogram].into_iter().flatten() {
                *p = existing(p)?;
            }
            a.out = absolute(&a.out)?;
            (None, None, None, None, a.out.clone())
        }
        Command::Replay(_) => unreachable!("replay writes no manifest of its own"),
    };
    let manifest = RunManifest {
        command: cmd.name().to_string(),
        system,
        objective,
        config,
        seed,
        out,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        invocation: resolved.clone(),
    };
    write_json(manifest_path, &manifest)?;
    Ok(resolved)
}

fn load_system(path: &Path) -> Result<(SystemSpec, JointTable)> {
    let spec = SystemSpec::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let table = spec.build(base)?;
    Ok((spec, table))
}

fn default_config(system: &SystemSpec) -> TrainConfig {
    match system {
        SystemSpec::Sudoku { .. } => TrainConfig::sudoku(),
        SystemSpec::Ngrams { .. } => TrainConfig::ngrams(),
        SystemSpec::Ising(_) | SystemSpec::Table(_) => TrainConfig::spins(),
    }
}

/// Soft description saved at a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub system: PathBuf,
    pub direction: Direction,
    pub record: ScanRecord,
}

fn term_name(term: &[usize]) -> String {
    let idx: Vec<String> = term.iter().map(|i| i.to_string()).collect();
    format!("I_{}", idx.join("-"))
}

fn cmd_train(cmd: &Command, args: &TrainArgs, iin: Option<Option<f64>>) -> Result<()> {
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let resolved = begin(cmd, &args.out.join(MANIFEST_FILE))?;
    let args = match &resolved {
        Command::Scan(a) | Command::Point(PointArgs { train: a, .. }) => a,
        _ => unreachable!(),
    };
    let (system, table) = load_system(&args.system)?;
    let mut spec = ObjectiveSpec::load(&args.objective)?;
    if let Some(Some(v)) = iin {
        spec.iin_bits = Some(v);
    }
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => default_config(&system),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.repeats {
        cfg.repeats = r;
    }
    cfg.validate()?;
    let spec = spec.validate(table.n_components())?;
    let point = iin.is_some();
    let mut records = if point {
        vec![best_of(&table, &spec, &cfg, cfg.repeats)?]
    } else {
        best_of_scans(&table, &spec, &cfg, cfg.repeats)?
    };

    for (c, r) in records.iter_mut().enumerate() {
        let rel = if point {
            "snapshot.json".to_string()
        } else {
            format!("snapshots/checkpoint_{c:03}.json")
        };
        r.snapshot_path = Some(rel.clone());
        let snap = Snapshot {
            system: args.system.clone(),
            direction: spec.direction,
            record: r.clone(),
        };
        write_json(&args.out.join(&rel), &snap)?;
    }

    let mut header: Vec<String> = [
        "checkpoint",
        "step",
        "iin_target",
        "i_in_bits",
        "i_in_se",
        "quantity_bits",
        "quantity_se",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for t in &spec.terms {
        header.push(format!("{}_bits", term_name(t)));
        header.push(format!("{}_se", term_name(t)));
    }
    header.push("snapshot".into());
    let rows: Vec<Vec<String>> = records
        .iter()
        .enumerate()
        .map(|(c, r)| {
            let mut row = vec![
                c.to_string(),
                r.step.to_string(),
                num(r.iin_target),
                num(r.i_in.value),
                num(r.i_in.se),
                num(r.quantity.value),
                num(r.quantity.se),
            ];
            for e in &r.estimates {
                row.push(num(e.value));
                row.push(num(e.se));
            }
            row.push(r.snapshot_path.clone().unwrap_or_default());
            row
        })
        .collect();
    let csv = args.out.join(if point { POINT_CSV } else { SCAN_CSV });
    write_csv(&csv, &header, &rows)?;

    say!("{:>6} {:>10} {:>10} {:>8} {:>10} {:>8}", "step", "target", "I_in", "±", "quantity", "±");
    for r in &records {
        say!(
            "{:>6} {:>10} {:>10} {:>8} {:>10} {:>8}",
            r.step,
            bits(r.iin_target),
            bits(r.i_in.value),
            bits(r.i_in.se),
            bits(r.quantity.value),
            bits(r.quantity.se)
        );
    }
    if let Some(cb) = records.last().and_then(|r| r.critic_bits.as_ref()) {
        let shown: Vec<String> = cb.iter().map(|b| bits(*b)).collect();
        say!("critic bounds after further training: {}", shown.join(" "));
    }
    say!("wrote {}", csv.display());
    Ok(())
}

/// Exact report on a hardened description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardReport {
    pub system: PathBuf,
    pub snapshot: PathBuf,
    pub partitions: Vec<Vec<u32>>,
    pub hardening_steps: Vec<usize>,
    /// Largest `min(BC, 1 − BC)` over all outcome pairs after hardening.
    pub max_coefficient_gap: f64,
    pub conflicts: usize,
    pub soft_i_in: Estimate,
    pub soft_quantity: Estimate,
    pub sum_info: f64,
    pub tc: f64,
    pub o: f64,
    pub pointwise_tc_total: f64,
    pub pointwise_o_total: Option<f64>,
}

fn max_gap(encoders: &[SoftEncoder]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for e in encoders {
        for a in 0..e.n_outcomes() {
            for b in (a + 1)..e.n_outcomes() {
                let bc = e.bhattacharyya(a, b)?;
                worst = worst.max(bc.min(1.0 - bc));
            }
        }
    }
    Ok(worst)
}

/// Symbols for the outcomes of one component.
fn outcome_symbol(system: &SystemSpec, x: usize) -> String {
    match system {
        SystemSpec::Ising(_) => if x == 0 { "-" } else { "+" }.to_string(),
        SystemSpec::Sudoku { .. } => (x + 1).to_string(),
        SystemSpec::Ngrams { .. } => ((b'a' + x as u8) as char).to_string(),
        SystemSpec::Table(_) => x.to_string(),
    }
}

/// Renders a code as the outcome group each label stands for, components
/// separated by spaces.
fn code_label(system: &SystemSpec, channels: &[HardChannel], code: &[u32]) -> String {
    let sep = if matches!(system, SystemSpec::Table(_)) { "," } else { "" };
    code.iter()
        .zip(channels)
        .map(|(&u, c)| {
            let members: Vec<String> = (0..c.n_inputs())
                .filter(|&x| c.label(x) == u)
                .map(|x| outcome_symbol(system, x))
                .collect();
            format!("[{}]", members.join(sep))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn pointwise_csv(
    path: &Path,
    system: &SystemSpec,
    channels: &[HardChannel],
    reports: &[PointwiseReport],
) -> Result<()> {
    let header: Vec<String> = ["code", "labels", "mass", "local_bits", "contribution_bits"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                code_label(system, channels, &r.code),
                r.code.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(" "),
                num(r.mass),
                num(r.local_value),
                num(r.contribution),
            ]
        })
        .collect();
    write_csv(path, &header, &rows)
}

fn cmd_harden(cmd: &Command, args: &HardenArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let resolved = begin(cmd, &args.out.join(MANIFEST_FILE))?;
    let Command::Harden(args) = &resolved else { unreachable!() };
    let text = std::fs::read_to_string(&args.snapshot)
        .with_context(|| format!("reading {}", args.snapshot.display()))?;
    let snap: Snapshot = serde_json::from_str(&text)
        .map_err(|e| InputError(format!("{}: {e}", args.snapshot.display())))?;
    let system_path = match &args.system {
        Some(p) => p.clone(),
        // Relative paths in a snapshot are relative to the snapshot itself.
        None => existing(&args.snapshot.parent().unwrap_or(Path::new(".")).join(&snap.system))?,
    };
    let (system, table) = load_system(&system_path)?;
    let encoders = &snap.record.encoders;
    if encoders.len() != table.n_components() {
        anyhow::bail!(InputError(format!(
            "snapshot has {} encoders but the system has {} components",
            encoders.len(),
            table.n_components()
        )));
    }
    let hard = harden(encoders, &HardenConfig::default())?;
    let desc = description_joint(&table, &hard.channels)?;
    let sum_info: f64 = hard
        .channels
        .iter()
        .enumerate()
        .map(|(i, c)| c.exact_mi(&table.component_marginal(i)))
        .sum();
    let tc = quantity_of(&desc, Quantity::Tc)?;
    let o = quantity_of(&desc, Quantity::O)?;

    let mut ptc = pointwise_tc(&desc);
    let ptc_total: f64 = ptc.iter().map(|r| r.contribution).sum();
    sort_by_contribution(&mut ptc);
    pointwise_csv(&args.out.join("pointwise_tc.csv"), &system, &hard.channels, &ptc)?;
    let mut po = if desc.n_components() >= 3 { Some(pointwise_o(&desc)?) } else { None };
    let po_total = po.as_ref().map(|p| p.iter().map(|r| r.contribution).sum::<f64>());
    if let Some(p) = po.as_mut() {
        sort_by_contribution(p);
        pointwise_csv(&args.out.join("pointwise_o.csv"), &system, &hard.channels, p)?;
    }

    let report = HardReport {
        system: system_path.clone(),
        snapshot: args.snapshot.clone(),
        partitions: hard.channels.iter().map(|c| c.labels().to_vec()).collect(),
        hardening_steps: hard.steps.clone(),
        max_coefficient_gap: max_gap(&hard.encoders)?,
        conflicts: hard.conflicts.len(),
        soft_i_in: snap.record.i_in,
        soft_quantity: snap.record.quantity,
        sum_info,
        tc,
        o,
        pointwise_tc_total: ptc_total,
        pointwise_o_total: po_total,
    };
    write_json(&args.out.join(HARD_JSON), &report)?;

    say!("Σ I(X_i;U_i) = {} bits (soft {} ± {})", bits(sum_info), bits(snap.record.i_in.value), bits(snap.record.i_in.se));
    say!("TC(U) = {} bits, Ω(U) = {} bits", bits(tc), bits(o));
    for (i, c) in hard.channels.iter().enumerate() {
        let groups: Vec<String> = (0..c.n_labels() as u32)
            .map(|u| code_label(&system, std::slice::from_ref(c), &[u]))
            .collect();
        say!("component {i}: {}", groups.join(" | "));
    }
    say!("top ΔTC codes:");
    for r in ptc.iter().take(args.top) {
        say!("  {} {}", code_label(&system, &hard.channels, &r.code), bits(r.contribution));
    }
    if let Some(p) = &po {
        say!("top Δω codes:");
        for r in p.iter().take(args.top) {
            say!("  {} {}", code_label(&system, &hard.channels, &r.code), bits(r.contribution));
        }
    }
    if !hard.conflicts.is_empty() {
        eprintln!("warning: {} outcome pairs merged despite distinguishable embeddings", hard.conflicts.len());
    }
    Ok(())
}

/// Summary of a band-conditioned hard sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub band: InformationBand,
    pub acceptance_rate: f64,
    pub samples: usize,
    pub tc_mean: f64,
    pub tc_std: f64,
    pub o_mean: f64,
    pub o_std: f64,
}

fn cmd_sample(cmd: &Command, args: &SampleArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let resolved = begin(cmd, &args.out.join(MANIFEST_FILE))?;
    let Command::Sample(args) = &resolved else { unreachable!() };
    let (_, table) = load_system(&args.system)?;
    let n = table.n_components();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let tail = ["sum_info_bits", "tc_bits", "o_bits"].map(String::from);
    match (args.band_lo, args.band_hi) {
        (Some(lo), Some(hi)) => {
            let band = InformationBand::new(lo, hi)?;
            let s = rejection_sample_hard(&table, band, args.samples, &mut rng)?;
            let mut header: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
            header.extend(tail.iter().cloned());
            let rows: Vec<Vec<String>> = s
                .samples
                .iter()
                .map(|x| {
                    let mut row: Vec<String> = x
                        .partitions
                        .iter()
                        .map(|p| p.iter().map(|l| l.to_string()).collect::<String>())
                        .collect();
                    row.extend([num(x.sum_info), num(x.tc), num(x.o)]);
                    row
                })
                .collect();
            write_csv(&args.out.join(HARD_SAMPLES_CSV), &header, &rows)?;
            let tcs: Vec<f64> = s.samples.iter().map(|x| x.tc).collect();
            let os: Vec<f64> = s.samples.iter().map(|x| x.o).collect();
            let values = match args.quantity {
                Quantity::Tc => &tcs,
                Quantity::O => &os,
            };
            let hist = histogram(values, HISTOGRAM_BIN_BITS);
            let rows: Vec<Vec<String>> = hist.iter().map(|(lo, c)| vec![num(*lo), c.to_string()]).collect();
            write_csv(
                &args.out.join(HISTOGRAM_CSV),
                &["bin_lo_bits".to_string(), "count".to_string()],
                &rows,
            )?;
            let (tc_mean, tc_std) = mean_std(&tcs);
            let (o_mean, o_std) = mean_std(&os);
            let summary = SampleSummary {
                band,
                acceptance_rate: s.acceptance_rate,
                samples: s.samples.len(),
                tc_mean,
                tc_std,
                o_mean,
                o_std,
            };
            write_json(&args.out.join("summary.json"), &summary)?;
            say!(
                "{} hard descriptions in [{}, {}] bits; acceptance rate {:.3e}",
                s.samples.len(),
                bits(lo),
                bits(hi),
                s.acceptance_rate
            );
            if s.acceptance_rate < LOW_ACCEPTANCE_RATE {
                eprintln!(
                    "warning: acceptance rate below {LOW_ACCEPTANCE_RATE:e}; drawn from the exact conditional distribution"
                );
            }
            say!("TC mean {} sd {}; Ω mean {} sd {}", bits(tc_mean), bits(tc_std), bits(o_mean), bits(o_std));
        }
        _ => {
            let pts = random_bsc_survey(&table, args.samples, &mut rng)?;
            let mut header: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
            header.extend(tail.iter().cloned());
            let rows: Vec<Vec<String>> = pts
                .iter()
                .map(|p| {
                    let mut row: Vec<String> = p.flips.iter().map(|e| num(*e)).collect();
                    row.extend([num(p.sum_info), num(p.tc), num(p.o)]);
                    row
                })
                .collect();
            write_csv(&args.out.join(SURVEY_CSV), &header, &rows)?;
            say!("{} binary symmetric descriptions written to {}", pts.len(), args.out.join(SURVEY_CSV).display());
        }
    }
    Ok(())
}

fn cmd_subsystems(cmd: &Command, args: &SubsystemsArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let resolved = begin(cmd, &args.out.join(MANIFEST_FILE))?;
    let Command::Subsystems(args) = &resolved else { unreachable!() };
    let (_, table) = load_system(&args.system)?;
    let points = subsystem_points(&table, args.quantity)?;
    let header: Vec<String> = ["subset", "component_info_bits", "system_info_bits", "quantity_bits"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.subset.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "),
                num(p.component_info),
                num(p.system_info),
                num(p.quantity),
            ]
        })
        .collect();
    write_csv(&args.out.join(SUBSYSTEMS_CSV), &header, &rows)?;
    say!("{} subsystems written to {}", points.len(), args.out.join(SUBSYSTEMS_CSV).display());
    Ok(())
}

fn quantity_column(q: Quantity) -> &'static str {
    match q {
        Quantity::Tc => "tc_bits",
        Quantity::O => "o_bits",
    }
}

fn quantity_label(q: Quantity) -> &'static str {
    match q {
        Quantity::Tc => "TC(U) (bits)",
        Quantity::O => "Ω(U) (bits)",
    }
}

fn pairs(path: &Path, x: &str, y: &str) -> Result<Vec<(f64, f64)>> {
    let cols = read_columns(path, &[x, y])?;
    Ok(cols[0].iter().copied().zip(cols[1].iter().copied()).collect())
}

fn cmd_plot(cmd: &Command, args: &PlotArgs) -> Result<()> {
    let resolved = begin(cmd, &args.out.with_extension("manifest.json"))?;
    let Command::Plot(args) = &resolved else { unreachable!() };
    let title = args.title.clone().unwrap_or_default();
    let svg = match &args.histogram {
        Some(h) => {
            let values = read_columns(h, &[quantity_column(args.quantity)])?.remove(0);
            HistogramChart {
                title,
                x_label: quantity_label(args.quantity).to_string(),
                bin_width: HISTOGRAM_BIN_BITS,
                bins: histogram(&values, HISTOGRAM_BIN_BITS),
                marks: args.mark.clone(),
            }
            .render()
        }
        None => {
            let survey = match &args.survey {
                Some(p) => pairs(p, "sum_info_bits", quantity_column(args.quantity))?,
                None => Vec::new(),
            };
            let subsystems = match &args.subsystems {
                Some(p) => pairs(p, "component_info_bits", "quantity_bits")?,
                None => Vec::new(),
            };
            let boundaries = args
                .scan
                .iter()
                .map(|p| pairs(p, "i_in_bits", "quantity_bits"))
                .collect::<Result<Vec<_>>>()?;
            ScatterChart {
                title,
                x_label: "Σ I(X_i;U_i) (bits)".to_string(),
                y_label: quantity_label(args.quantity).to_string(),
                survey,
                subsystems,
                boundaries,
            }
            .render()
        }
    };
    write_atomic(&args.out, svg.as_bytes())?;
    say!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_replay(args: &ReplayArgs) -> Result<()> {
    let manifest = RunManifest::load(&args.manifest)?;
    let mut cmd = manifest.invocation;
    if let Some(out) = &args.out {
        match &mut cmd {
            Command::Scan(a) | Command::Point(PointArgs { train: a, .. }) => a.out = out.clone(),
            Command::Harden(a) => a.out = out.clone(),
            Command::Sample(a) => a.out = out.clone(),
            Command::Subsystems(a) => a.out = out.clone(),
            Command::Plot(a) => a.out = out.clone(),
            Command::Replay(_) => anyhow::bail!(InputError("a manifest cannot record a replay".into())),
        }
    }
    run(&cmd)
}
