//! Subcommand dispatch and result files.
//!
//! Every successful run writes `results.csv`, `summary.json` and
//! `manifest.json` into the output directory. Failures produce an error
//! document (see [`error_json`]) on stderr and in `error.json`.
//!
//! `results.csv` starts with a `# psqam results schema_version=1` comment
//! line, then a header with the columns of [`CSV_COLUMNS`]. Floats are
//! written with 17 significant digits, so they parse back bit-exactly.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{parse_config, ExperimentConfig, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::harness::{
    compare_policies, optimize_gains, required_snr_prepared, sweep_linewidth, sweep_pilot_ratio, Format, GainChoice,
    RunOutcome, Simulator, SweepRow,
};

pub const TOOL: &str = "psqam";

pub const CSV_COLUMNS: [&str; 17] = [
    "run_id",
    "format",
    "order",
    "entropy_bits",
    "ir_bits",
    "linewidth_hz",
    "snr_db",
    "pilot_ratio",
    "k1",
    "k2",
    "policy",
    "seed",
    "n_payload",
    "gmi",
    "ngmi",
    "air",
    "decision_error_rate",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    SingleRun,
    RequiredSnr,
    SweepLinewidth,
    SweepPilot,
    ComparePolicies,
    OptimizeGains,
    ExportConstellation,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] = [
        Subcommand::SingleRun,
        Subcommand::RequiredSnr,
        Subcommand::SweepLinewidth,
        Subcommand::SweepPilot,
        Subcommand::ComparePolicies,
        Subcommand::OptimizeGains,
        Subcommand::ExportConstellation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subcommand::SingleRun => "single-run",
            Subcommand::RequiredSnr => "required-snr",
            Subcommand::SweepLinewidth => "sweep-linewidth",
            Subcommand::SweepPilot => "sweep-pilot",
            Subcommand::ComparePolicies => "compare-policies",
            Subcommand::OptimizeGains => "optimize-gains",
            Subcommand::ExportConstellation => "export-constellation",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::config("subcommand", format!("unknown subcommand `{s}`")))
    }
}

#[derive(Debug, Clone)]
pub struct RunRequest {
    pub subcommand: Subcommand,
    /// `None` runs with the default config.
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Overrides `master_seed` from the config.
    pub seed: Option<u64>,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
    /// Write per-run PLL traces (`single-run` and `optimize-gains`).
    pub debug_trace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_path: Option<String>,
    pub master_seed: u64,
    pub out_dir: String,
    pub workers: usize,
    pub config_hash: String,
}

/// Output of a subcommand before it is written to disk.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub rows: Vec<SweepRow>,
    pub summary: Value,
    pub warnings: Vec<String>,
    /// Extra files (name, contents).
    pub files: Vec<(String, String)>,
}

/// SHA-256 of the normalized config JSON.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(cfg.normalized_json().as_bytes()))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_csv<W: Write>(rows: &[SweepRow], mut w: W) -> io::Result<()> {
    writeln!(w, "# {TOOL} results schema_version={SCHEMA_VERSION}")?;
    writeln!(w, "{}", CSV_COLUMNS.join(","))?;
    for (i, r) in rows.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            i,
            csv_field(&r.format),
            r.order,
            num(r.entropy_bits),
            num(r.ir_bits),
            num(r.linewidth_hz),
            num(r.snr_db),
            num(r.pilot_ratio),
            num(r.k1),
            num(r.k2),
            r.policy.as_str(),
            r.seed,
            r.n_payload,
            num(r.gmi),
            num(r.ngmi),
            num(r.air),
            num(r.decision_error_rate),
        )?;
    }
    Ok(())
}

pub fn csv_string(rows: &[SweepRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

/// Machine-readable error document.
pub fn error_json(err: &Error) -> String {
    let mut e = json!({ "kind": err.kind(), "message": err.to_string() });
    if let Error::Config { field, .. } = err {
        e["field"] = json!(field);
    }
    let doc = json!({ "schema_version": SCHEMA_VERSION, "tool": TOOL, "error": e });
    serde_json::to_string_pretty(&doc).expect("error JSON serializes")
}

/// Process exit status for an error: 2 for configuration errors, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_config() {
        2
    } else {
        1
    }
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => parse_config(&fs::read_to_string(p).map_err(|e| Error::file(p, e))?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn boundary_warning(format: &str, context: &str) -> String {
    format!("{format}: optimal gains on the grid boundary ({context})")
}

fn mean_of(out: &[RunOutcome], f: impl Fn(&RunOutcome) -> f64) -> f64 {
    crate::harness::mean(&out.iter().map(f).collect::<Vec<_>>())
}

fn trace_files(
    sim: &Simulator<'_>,
    preps: &[crate::harness::PreparedRun],
    snr_db: f64,
    gains: crate::harness::Gains,
    policy: crate::cpr::UpdatePolicy,
    files: &mut Vec<(String, String)>,
) -> Result<()> {
    for (s, prep) in preps.iter().enumerate() {
        let (_, trace) = sim.run_traced(prep, snr_db, gains, policy)?;
        let mut buf = Vec::new();
        trace.write_csv(&prep.draw.phase, &mut buf)?;
        files.push((
            format!("trace_{}_seed{s}.csv", sanitize(&sim.format.name)),
            String::from_utf8(buf).expect("trace CSV is UTF-8"),
        ));
    }
    Ok(())
}

/// Runs `subcommand` on `cfg` without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig, subcommand: Subcommand, debug_trace: bool) -> Result<Outcome> {
    cfg.validate()?;
    let set = cfg.format_set()?;
    let settings = cfg.settings();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut files = Vec::new();
    let summary = match subcommand {
        Subcommand::SingleRun => {
            let gains = cfg.gains.unwrap_or(cfg.default_gains);
            let mut per_format = Vec::new();
            for f in &set.formats {
                let sim = Simulator::new(&settings, f);
                let preps = sim.prepare(cfg.linewidth_hz, cfg.pilot_ratio)?;
                let out = sim.run_all(&preps, cfg.snr_db, gains, cfg.policy)?;
                if debug_trace {
                    trace_files(&sim, &preps, cfg.snr_db, gains, cfg.policy, &mut files)?;
                }
                rows.extend(
                    out.iter()
                        .map(|o| SweepRow::new(f, cfg.linewidth_hz, cfg.snr_db, cfg.pilot_ratio, gains, cfg.policy, o)),
                );
                per_format.push(json!({
                    "format": f.name,
                    "gmi_mean": mean_of(&out, |o| o.gmi),
                    "ngmi_mean": mean_of(&out, |o| o.ngmi),
                    "air_mean": mean_of(&out, |o| o.air),
                    "runs": out,
                }));
            }
            json!({
                "linewidth_hz": cfg.linewidth_hz,
                "snr_db": cfg.snr_db,
                "pilot_ratio": cfg.pilot_ratio.value(),
                "gains": gains,
                "formats": per_format,
            })
        }
        Subcommand::RequiredSnr => {
            let search = cfg.snr_search();
            let results = set
                .formats
                .iter()
                .map(|f| {
                    let sim = Simulator::new(&settings, f);
                    let preps = sim.prepare(cfg.linewidth_hz, cfg.pilot_ratio)?;
                    let req = required_snr_prepared(&sim, &preps, cfg.policy, &search)?;
                    let out = sim.run_all(&preps, req.snr_db, req.gains, cfg.policy)?;
                    Ok((f, req, out))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut per_format = Vec::new();
            for (f, req, out) in results {
                if req.gain_boundary {
                    warnings.push(boundary_warning(&f.name, &format!("linewidth {} Hz", cfg.linewidth_hz)));
                }
                rows.extend(out.iter().map(|o| {
                    SweepRow::new(f, cfg.linewidth_hz, req.snr_db, cfg.pilot_ratio, req.gains, cfg.policy, o)
                }));
                per_format.push(json!({ "format": f.name, "required": req }));
            }
            json!({
                "linewidth_hz": cfg.linewidth_hz,
                "pilot_ratio": cfg.pilot_ratio.value(),
                "ngmi_target": cfg.ngmi_target,
                "formats": per_format,
            })
        }
        Subcommand::SweepLinewidth => {
            let r = sweep_linewidth(
                &settings,
                &set.formats,
                &set.pairs,
                &cfg.linewidths_hz,
                cfg.pilot_ratio,
                cfg.policy,
                &cfg.snr_search(),
            )?;
            let mut extrema = Vec::new();
            for c in &r.curves {
                for p in &c.points {
                    if p.required.gain_boundary {
                        warnings.push(boundary_warning(&c.format, &format!("linewidth {} Hz", p.linewidth_hz)));
                    }
                }
                let snrs: Vec<f64> = c.points.iter().map(|p| p.required.snr_db).collect();
                extrema.push(json!({
                    "format": c.format,
                    "min_required_snr_db": snrs.iter().copied().fold(f64::INFINITY, f64::min),
                    "max_required_snr_db": snrs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }));
            }
            rows = r.rows.clone();
            let mut v = serde_json::to_value(&r)?;
            v["extrema"] = json!(extrema);
            v
        }
        Subcommand::SweepPilot => {
            let search = cfg.snr_search();
            let r = sweep_pilot_ratio(
                &settings,
                &set.formats,
                &set.pairs,
                &cfg.linewidths_hz,
                &cfg.pilot_ratios,
                cfg.snr_db,
                cfg.policy,
                &cfg.gain_choice(),
                cfg.required_snr_vs_pilot.then_some(&search),
            )?;
            rows = r.rows.clone();
            serde_json::to_value(&r)?
        }
        Subcommand::ComparePolicies => {
            let r = compare_policies(
                &settings,
                &set.formats,
                &cfg.linewidths_hz,
                &cfg.pilot_ratios,
                cfg.snr_db,
                &cfg.gain_choice(),
            )?;
            rows = r.rows.clone();
            serde_json::to_value(&r)?
        }
        Subcommand::OptimizeGains => {
            let grid = match cfg.gain_choice() {
                GainChoice::Optimize(g) => g,
                GainChoice::Fixed(g) => crate::harness::GainGrid::single(g),
            };
            let mut per_format = Vec::new();
            for f in &set.formats {
                let sim = Simulator::new(&settings, f);
                let preps = sim.prepare(cfg.linewidth_hz, cfg.pilot_ratio)?;
                let search = optimize_gains(&sim, &preps, cfg.snr_db, cfg.policy, &grid)?;
                if search.on_boundary {
                    warnings.push(boundary_warning(&f.name, &format!("SNR {} dB", cfg.snr_db)));
                }
                let default_ngmi = crate::harness::mean(
                    &sim.run_all(&preps, cfg.snr_db, cfg.default_gains, cfg.policy)?
                        .iter()
                        .map(|o| o.ngmi)
                        .collect::<Vec<_>>(),
                );
                let out = sim.run_all(&preps, cfg.snr_db, search.gains, cfg.policy)?;
                if debug_trace {
                    trace_files(&sim, &preps, cfg.snr_db, search.gains, cfg.policy, &mut files)?;
                }
                rows.extend(out.iter().map(|o| {
                    SweepRow::new(f, cfg.linewidth_hz, cfg.snr_db, cfg.pilot_ratio, search.gains, cfg.policy, o)
                }));
                per_format.push(json!({
                    "format": f.name,
                    "gains": search.gains,
                    "ngmi": search.ngmi,
                    "ngmi_at_default_gains": default_ngmi,
                    "on_boundary": search.on_boundary,
                    "surface": search.surface.iter().map(|(g, v)| json!([g.k1, g.k2, v])).collect::<Vec<_>>(),
                }));
            }
            json!({
                "linewidth_hz": cfg.linewidth_hz,
                "snr_db": cfg.snr_db,
                "pilot_ratio": cfg.pilot_ratio.value(),
                "formats": per_format,
            })
        }
        Subcommand::ExportConstellation => {
            let mut listing = Vec::new();
            let mut points = String::from("format,index,re,im,label,prior\n");
            for f in &set.formats {
                let export = f.constellation.export();
                let name = format!("constellation_{}.json", sanitize(&f.name));
                files.push((name.clone(), serde_json::to_string_pretty(&export)?));
                let c = &f.constellation;
                for (k, p) in c.points().iter().enumerate() {
                    points.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        f.name,
                        k,
                        num(p.re),
                        num(p.im),
                        c.label_string(k),
                        num(c.prior()[k])
                    ));
                }
                listing.push(json!({
                    "format": f.name,
                    "file": name,
                    "entropy_bits": export.entropy_bits,
                    "ir_bits": f.ir_bits,
                    "shaping_factor": export.shaping_factor,
                }));
            }
            files.push(("constellations.csv".into(), points));
            json!({ "formats": listing })
        }
    };
    Ok(Outcome {
        rows,
        summary,
        warnings,
        files,
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::file(&path, e))
}

fn format_names(formats: &[Format]) -> Vec<&str> {
    formats.iter().map(|f| f.name.as_str()).collect()
}

/// Loads the config, runs the subcommand on a pool of `workers` threads and
/// writes the result files.
pub fn run(req: &RunRequest) -> Result<RunManifest> {
    let cfg = load_config(req.config_path.as_deref(), req.seed)?;
    let workers = req
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::config("workers", "must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let outcome = pool.install(|| execute(&cfg, req.subcommand, req.debug_trace))?;

    fs::create_dir_all(&req.out_dir).map_err(|e| Error::file(&req.out_dir, e))?;
    let hash = config_hash(&cfg);
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: req.subcommand.as_str().into(),
        config_path: req.config_path.as_ref().map(|p| p.display().to_string()),
        master_seed: cfg.master_seed,
        out_dir: req.out_dir.display().to_string(),
        workers,
        config_hash: hash.clone(),
    };
    let formats = cfg.format_set()?.formats;
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "subcommand": req.subcommand.as_str(),
        "config_hash": hash,
        "master_seed": cfg.master_seed,
        "formats": format_names(&formats),
        "warnings": outcome.warnings,
        "result": outcome.summary,
        "config": cfg,
    });
    write_file(&req.out_dir, "results.csv", &csv_string(&outcome.rows))?;
    write_file(&req.out_dir, "summary.json", &serde_json::to_string_pretty(&summary)?)?;
    for (name, contents) in &outcome.files {
        write_file(&req.out_dir, name, contents)?;
    }
    write_file(&req.out_dir, "manifest.json", &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Writes `error.json` into `out_dir` if possible; returns the document.
pub fn report_error(err: &Error, out_dir: Option<&Path>) -> String {
    let doc = error_json(err);
    if let Some(dir) = out_dir {
        if fs::create_dir_all(dir).is_ok() {
            let _ = fs::write(dir.join("error.json"), &doc);
        }
    }
    doc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PairSpec;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            pairs: vec![PairSpec { ps_order: 64, us_order: 16 }],
            payload_symbols: 2048,
            settle_guard_symbols: 200,
            seeds_per_point: 2,
            snr_db: 14.0,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn subcommand_names_round_trip() {
        for c in Subcommand::ALL {
            assert_eq!(c.as_str().parse::<Subcommand>().unwrap(), c);
        }
        assert!("sweep".parse::<Subcommand>().is_err());
    }

    #[test]
    fn csv_shape() {
        let out = execute(&tiny(), Subcommand::SingleRun, false).unwrap();
        let text = csv_string(&out.rows);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# psqam results schema_version=1"));
        assert_eq!(lines[1], CSV_COLUMNS.join(","));
        assert_eq!(lines.len(), 2 + 2 * 2);
        for l in &lines[2..] {
            assert_eq!(l.split(',').count(), 17);
        }
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 8.347_123_456_789_012, 1e-300, -2.5e17] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn hash_tracks_semantics() {
        let a = tiny();
        let mut b = tiny();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.snr_db += 0.5;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn error_document() {
        let e = Error::config("pilot_ratio", "bad");
        let v: Value = serde_json::from_str(&error_json(&e)).unwrap();
        assert_eq!(v["error"]["kind"], "config");
        assert_eq!(v["error"]["field"], "pilot_ratio");
        assert_eq!(exit_code(&e), 2);
        assert_eq!(exit_code(&Error::EmptyGainGrid), 1);
    }

    #[test]
    fn export_entropy() {
        let cfg = ExperimentConfig {
            pairs: vec![PairSpec { ps_order: 1024, us_order: 256 }],
            ..ExperimentConfig::default()
        };
        let out = execute(&cfg, Subcommand::ExportConstellation, false).unwrap();
        let (_, text) = out.files.iter().find(|(n, _)| n == "constellation_PS-1024QAM.json").unwrap();
        let v: Value = serde_json::from_str(text).unwrap();
        assert!((v["entropy_bits"].as_f64().unwrap() - 8.347).abs() < 1e-3);
    }
}
