use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use super::RunArtifact;

pub const RUN_FILES: [&str; 6] = [
    "config.json",
    "epochs.jsonl",
    "eval.jsonl",
    "rules_final.json",
    "curves.csv",
    "curves.svg",
];

/// One row per epoch, derived from the epoch reports alone.
pub fn curves_csv(run: &RunArtifact) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "level", "sr", "window_mean", "advanced", "rules", "eval_sr", "eval_spl"])
        .expect("in-memory csv");
    for e in &run.epochs {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        w.write_record([
            e.epoch.to_string(),
            e.level.map_or(String::new(), |l| l.to_string()),
            format!("{:.6}", e.sr),
            opt(e.window_mean_f64),
            (e.advanced as u8).to_string(),
            e.rule_count.to_string(),
            opt(e.eval.as_ref().map(|v| v.metrics.sr)),
            opt(e.eval.as_ref().map(|v| v.metrics.spl)),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

/// Epoch SR (solid), level / 7 (dashed) and held-out SR (dots), one panel.
pub fn curves_svg(run: &RunArtifact) -> String {
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let n = run.epochs.len().max(2) as f64;
    let x = |epoch: usize| pad + (epoch as f64 - 1.0) / (n - 1.0) * (w - 2.0 * pad);
    let y = |v: f64| h - pad - v.clamp(0.0, 1.0) * (h - 2.0 * pad);
    let line = |pts: Vec<(f64, f64)>| pts.iter().map(|(a, b)| format!("{a:.1},{b:.1}")).collect::<Vec<_>>().join(" ");
    let sr = line(run.epochs.iter().map(|e| (x(e.epoch), y(e.sr))).collect());
    let lv = line(
        run.epochs
            .iter()
            .map(|e| (x(e.epoch), y(e.levels_used.iter().max().copied().unwrap_or(0) as f64 / 7.0)))
            .collect(),
    );
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{sr}"/>"#);
    let _ = writeln!(s, r##"<polyline fill="none" stroke="#c44" stroke-dasharray="6 4" points="{lv}"/>"##);
    for e in &run.evals {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="darkgreen"/>"#, x(e.epoch), y(e.metrics.sr));
    }
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="20" font-family="monospace" font-size="12">{} seed {}: epoch SR, level/7, held-out SR</text>"#,
        run.config.condition, run.config.seed
    );
    s.push_str("</svg>\n");
    s
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut f, it)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

pub fn write_run_dir(dir: &Path, run: &RunArtifact) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&run.config)? + "\n")?;
    write_jsonl(&dir.join("epochs.jsonl"), &run.epochs)?;
    write_jsonl(&dir.join("eval.jsonl"), &run.evals)?;
    fs::write(dir.join("rules_final.json"), serde_json::to_string_pretty(&run.rules_final)? + "\n")?;
    fs::write(dir.join("curves.csv"), curves_csv(run))?;
    fs::write(dir.join("curves.svg"), curves_svg(run))?;
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(io::Error::from))
        .collect()
}

/// Loads a directory written by [`write_run_dir`]. The distillation count is
/// not part of the files and reads back as zero.
pub fn read_run_dir(dir: &Path) -> io::Result<RunArtifact> {
    let config = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    let epochs = read_jsonl(&dir.join("epochs.jsonl"))?;
    let evals = read_jsonl(&dir.join("eval.jsonl"))?;
    let rules_final = serde_json::from_str(&fs::read_to_string(dir.join("rules_final.json"))?)?;
    Ok(RunArtifact {
        config,
        epochs,
        evals,
        rules_final,
        distillations: 0,
    })
}

/// Plain-text summary: per-run level schedule with advance epochs marked, and
/// a final held-out table.
pub fn render_report(runs: &[RunArtifact]) -> String {
    let mut s = String::new();
    for r in runs {
        let _ = writeln!(s, "## {} (seed {})", r.config.condition, r.config.seed);
        let levels: Vec<String> = r
            .epochs
            .iter()
            .map(|e| {
                let l = e.level.map_or("r".to_string(), |l| l.to_string());
                if e.advanced {
                    format!("{l}^")
                } else {
                    l
                }
            })
            .collect();
        let _ = writeln!(s, "levels: {}", levels.join(" "));
        let srs: Vec<String> = r.epochs.iter().map(|e| format!("{:.2}", e.sr)).collect();
        let _ = writeln!(s, "epoch SR: {}", srs.join(" "));
        for e in &r.evals {
            let _ = writeln!(
                s,
                "eval@{:>2}: SR {:.3} SPL {:.3} SoftSPL {:.3} nDTW {:.3}",
                e.epoch, e.metrics.sr, e.metrics.spl, e.metrics.softspl, e.metrics.ndtw
            );
        }
        let _ = writeln!(s, "rules: {}\n", r.rules_final.len());
    }
    let _ = writeln!(s, "| condition | seed | SR | SPL | SoftSPL | nDTW | N |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|");
    for r in runs {
        if let Some(e) = r.final_eval() {
            let m = &e.metrics;
            let _ = writeln!(
                s,
                "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {} |",
                r.config.condition, r.config.seed, m.sr, m.spl, m.softspl, m.ndtw, m.n
            );
        }
    }
    s
}
