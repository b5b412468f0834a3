//! Human-readable summary and plot-data bundle for a finished artifact
//! directory. Inputs are only read; output goes to a separate directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use lle_core::whitham::fit_decay;
use lle_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::persist::read_index;

const REQUIRED: [&str; 4] = ["index.csv", "metadata.json", "summary.json", "config.toml"];

/// Columns of a CSV file with a header row.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
        let rows = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect()).collect();
        Ok(Table { header, rows })
    }

    fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

fn read_json(root: &Path, rel: &str) -> Option<Value> {
    serde_json::from_str(&fs::read_to_string(root.join(rel)).ok()?).ok()
}

/// Escapes `|` so norms survive inside table cells.
fn cell(s: &str) -> String {
    s.replace('|', "\\|")
}

fn num(v: &Value) -> String {
    v.as_f64().map_or("-".into(), |x| format!("{x:.4}"))
}

#[derive(Debug)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub plot_data: Vec<PathBuf>,
}

/// Writes `summary.md` and `plot/*.csv` under `out` (default `<artifact_dir>/report`).
pub fn emit_report(artifact_dir: &Path, out: Option<&Path>) -> Result<ReportFiles> {
    let missing: Vec<&str> = REQUIRED.iter().copied().filter(|f| !artifact_dir.join(f).is_file()).collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "{} is not a completed artifact directory: missing {} (expected {})",
            artifact_dir.display(),
            missing.join(", "),
            REQUIRED.join(", ")
        )));
    }
    let index = read_index(artifact_dir)?;
    let cfg = ExperimentConfig::load(&artifact_dir.join("config.toml"))?;
    let meta = read_json(artifact_dir, "metadata.json").ok_or_else(|| Error::Config("metadata.json is not valid JSON".into()))?;
    let summary = read_json(artifact_dir, "summary.json").ok_or_else(|| Error::Config("summary.json is not valid JSON".into()))?;
    let out = out.map_or_else(|| artifact_dir.join("report"), Path::to_path_buf);
    fs::create_dir_all(out.join("plot"))?;

    let mut md = String::new();
    let _ = writeln!(md, "# Run summary\n");
    let _ = writeln!(
        md,
        "scenario `{}`, config hash `{}`, {} {}, seed {}\n",
        meta["scenario"].as_str().unwrap_or("?"),
        meta["config_hash"].as_str().unwrap_or("?"),
        meta["tool"].as_str().unwrap_or("?"),
        meta["version"].as_str().unwrap_or("?"),
        meta["seed"]
    );
    if let Some(errs) = meta["errors"].as_array().filter(|e| !e.is_empty()) {
        let _ = writeln!(md, "## Errors\n");
        for e in errs {
            let _ = writeln!(md, "- stage `{}`: {}", e["stage"].as_str().unwrap_or("?"), e["message"].as_str().unwrap_or("?"));
        }
        md.push('\n');
    }
    if let Some(g) = summary.get("gate").filter(|g| !g.is_null()) {
        let _ = writeln!(md, "**{}**\n", g["message"].as_str().unwrap_or("stability gate closed"));
    }

    let _ = writeln!(md, "## Acceptance criteria\n\n| # | criterion | status | detail |\n|---|---|---|---|");
    for c in summary["criteria"].as_array().into_iter().flatten() {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} |",
            c["id"],
            c["name"].as_str().unwrap_or(""),
            c["status"].as_str().unwrap_or(""),
            cell(c["detail"].as_str().unwrap_or(""))
        );
    }
    md.push('\n');

    let mut plots = Vec::new();
    let w = cfg.fit_window();
    let predicted = [
        ("localized", [("v_l2", -0.75), ("v_tilde_l2", -0.25), ("gamma_x_l2", -0.75), ("gamma_l2", -0.25), ("gamma_linf", -0.5)]),
        ("nonlocalized", [("v_l2", -0.25), ("v_tilde_l2", 0.0), ("gamma_x_l2", -0.25), ("gamma_l2", 0.0), ("gamma_linf", 0.0)]),
    ];
    let mut exp_rows = String::new();
    for (run, cols) in predicted {
        let path = artifact_dir.join(run).join("series.csv");
        if !path.is_file() {
            continue;
        }
        let t = Table::read(&path)?;
        let times = t.column("t").unwrap_or_default();
        for (col, pred) in cols {
            let Some(vals) = t.column(col) else { continue };
            let fitted = match fit_decay(col, &times, &vals, w.t_min, Some(pred), w.tolerance) {
                Ok(f) => format!("{:.3} vs predicted {pred:.2} | {}", f.exponent, if f.matches == Some(true) { "yes" } else { "no" }),
                Err(e) => format!("- vs predicted {pred:.2} | {}", cell(&e.to_string())),
            };
            let _ = writeln!(exp_rows, "| {run} | {} | {fitted} |", cell(label(col)));
        }
        plots.extend(write_plot_data(&out, run, &t)?);
    }
    if !exp_rows.is_empty() {
        let _ = writeln!(md, "## Decay exponents over t >= {}\n\n| run | norm | fitted | within +-{} |\n|---|---|---|---|", w.t_min, w.tolerance);
        md.push_str(&exp_rows);
        md.push('\n');
    }

    if let Some(fits) = read_json(artifact_dir, "nonlocalized/asymptotics_fits.json") {
        let _ = writeln!(md, "## Comparison with the heat approximant\n\n| series | fitted | predicted bound |\n|---|---|---|");
        for f in fits.as_array().into_iter().flatten() {
            let fit = &f[1];
            let _ = writeln!(md, "| {} | {} | {} |", f[0].as_str().unwrap_or(""), num(&fit["exponent"]), num(&fit["predicted"]));
        }
        md.push('\n');
        let t = Table::read(&artifact_dir.join("nonlocalized/asymptotics.csv"))?;
        plots.extend(write_plot_data(&out, "asymptotics", &t)?);
    }

    if let Some(d) = read_json(artifact_dir, "damping/feasibility.json") {
        let _ = writeln!(md, "## Damping: feasible theta\n\n| variable | points/period | feasible | best theta | C | largest feasible theta |\n|---|---|---|---|---|---|");
        for r in d.as_array().into_iter().flatten() {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} |",
                r["variable"].as_str().unwrap_or(""),
                r["points_per_period"],
                r["feasible"],
                num(&r["best_theta"]),
                num(&r["best_c"]),
                num(&r["largest_feasible_theta"])
            );
        }
        md.push('\n');
    }

    if let Some(e) = read_json(artifact_dir, "equivalence/summary.json") {
        let lp = &e["lp"];
        let _ = writeln!(md, "## Norm-equivalence corpus\n");
        let _ = writeln!(md, "- violations: {} / {}", lp["violations"], lp["checks"]);
        let _ = writeln!(md, "- samples: {}, max sup gamma_x: {}", lp["samples"], num(&lp["max_sup_gamma_x"]));
        let _ = writeln!(md, "- min slack: {:.3e}", lp["min_slack"].as_f64().unwrap_or(f64::NAN));
        let _ = writeln!(md, "- max inversion defect: {:.3e}", lp["max_inversion_defect"].as_f64().unwrap_or(f64::NAN));
        let _ = writeln!(md, "- H^k constant: {} (doubled grid {})\n", num(&e["hk_constant"]), num(&e["hk_constant_doubled"]));
    }

    let _ = writeln!(md, "## Artifacts\n");
    for (file, kind) in index.iter().filter(|(_, k)| k != "snapshot") {
        let _ = writeln!(md, "- `{file}` ({kind})");
    }
    let snaps = index.iter().filter(|(_, k)| k == "snapshot").count();
    if snaps > 0 {
        let _ = writeln!(md, "- {snaps} snapshot files");
    }

    let summary_path = out.join("summary.md");
    fs::write(&summary_path, md)?;
    Ok(ReportFiles { summary: summary_path, plot_data: plots })
}

fn label(col: &str) -> &str {
    match col {
        "v_l2" => "||v||_L2",
        "v_tilde_l2" => "||v~||_L2",
        "gamma_x_l2" => "||gamma_x||_L2",
        "gamma_l2" => "||gamma||_L2",
        "gamma_linf" => "||gamma||_inf",
        other => other,
    }
}

/// `(t, norm)` and `(log(1 + t), log norm)` files for every norm column.
fn write_plot_data(out: &Path, run: &str, t: &Table) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let Some(times) = t.column("t") else { return Ok(paths) };
    for name in t.header.iter().skip(1) {
        let vals = t.column(name).expect("header column");
        let mut lin = format!("t,{name}\n");
        let mut log = format!("log1p_t,log_{name}\n");
        for (a, b) in times.iter().zip(&vals) {
            let _ = writeln!(lin, "{a:.10e},{b:.12e}");
            if *b > 0.0 {
                let _ = writeln!(log, "{:.12e},{:.12e}", a.ln_1p(), b.ln());
            }
        }
        for (suffix, body) in [("linear", lin), ("loglog", log)] {
            let p = out.join("plot").join(format!("{run}_{name}_{suffix}.csv"));
            fs::write(&p, body)?;
            paths.push(p);
        }
    }
    Ok(paths)
}
