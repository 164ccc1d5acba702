use log::{info, warn};

use super::{ensure_dir, read_evaluation, record_artifacts, save_manifest, Outcome, RunManifest};
use crate::analysis::{
    ablation_r2, ablation_table, contrast_table, contrasts, failure_rates, fmt4, mean_performance,
    ols_fit, Design, FactorFrame, Factor, Filter, Response, Table, Variable,
};
use crate::nulltest::write_atomic;
use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Extra conditional mean-performance tables, one per filter.
    pub filters: Vec<Filter>,
}

/// The conditional views always reported.
fn standard_filters() -> Vec<Filter> {
    [["fi=fi-0"], ["fi=fi-3"], ["nc>0.25"]]
        .iter()
        .map(|f| Filter::parse(f).expect("static filter"))
        .collect()
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes failure, mean-performance, contrast, OLS and ablation tables under
/// `report/` and their concatenation as `report/report.txt`.
pub fn cmd_report(m: &RunManifest, opts: &ReportOptions) -> Result<Outcome> {
    m.validate()?;
    let layout = m.layout();
    let rows = read_evaluation(&layout.evaluation())?;
    if rows.is_empty() {
        return Err(Error::Empty(format!("{} has no rows", layout.evaluation().display())));
    }
    let alpha = m.model_alpha();
    let mut tables: Vec<(String, Table)> = Vec::new();
    let mut notes: Vec<String> = Vec::new();

    for &a in &m.alphas {
        for f in Factor::CONSTRUCTION {
            let t = failure_rates(&rows, f, a)?.to_table();
            tables.push((format!("failure_{f}_{a}"), t));
        }
    }

    tables.push(("mean_all".into(), mean_performance(&rows, &Filter::default(), alpha)?.to_table()));
    let mut filters = standard_filters();
    for f in &opts.filters {
        if !filters.contains(f) {
            filters.push(f.clone());
        }
    }
    for f in &filters {
        let t = mean_performance(&rows, f, alpha)?.to_table();
        tables.push((format!("mean_{}", slug(&f.to_string())), t));
    }

    for f in [Factor::Rf, Factor::Pd, Factor::Nc, Factor::Fi] {
        let mut all = Vec::new();
        for r in Response::ALL {
            all.extend(contrasts(&rows, f, r, alpha)?);
        }
        let title = format!("Best-detector difference from the {f} control with 0.999 intervals");
        tables.push((format!("contrasts_{f}"), contrast_table(&all, &title)));
    }

    let frame = FactorFrame::from_rows(&rows, alpha)?;
    let mut r2 = Table::new(
        format!("OLS R2 by response and design (alpha = {alpha})"),
        &["response", "design", "n", "r_squared"],
    );
    for r in Response::ALL {
        for design in [Design::Discrete, Design::Real] {
            match ols_fit(&frame, r, &Variable::ALL, design) {
                Ok(fit) => {
                    r2.push(vec![
                        r.to_string(),
                        design.as_str().into(),
                        fit.n.to_string(),
                        fmt4(fit.r_squared),
                    ]);
                    tables.push((format!("ols_{r}_{}", design.as_str()), fit.to_table()));
                }
                Err(e) => notes.push(format!("OLS {r} ({} design) not fitted: {e}", design.as_str())),
            }
        }
        match ablation_r2(&frame, r, Design::Real) {
            Ok(ab) => tables.push((format!("ablation_{r}"), ablation_table(&ab, r, Design::Real))),
            Err(e) => notes.push(format!("ablation for {r} not fitted: {e}")),
        }
    }
    tables.push(("ols_r2".into(), r2));

    let dir = layout.report_dir();
    ensure_dir(&dir)?;
    let mut doc = format!(
        "Anomaly-detection benchmark report\n{} evaluation rows; models and means at alpha = {alpha}\n\n",
        rows.len()
    );
    for (name, t) in &tables {
        write_atomic(&dir.join(format!("{name}.csv")), t.to_csv().as_bytes())?;
        doc.push_str(&t.to_aligned());
        doc.push('\n');
    }
    for n in &notes {
        warn!("{n}");
        doc.push_str(&format!("note: {n}\n"));
    }
    write_atomic(&dir.join("report.txt"), doc.as_bytes())?;
    save_manifest(m)?;
    record_artifacts(&layout.root)?;
    info!("report: {} tables in {}", tables.len(), dir.display());
    Ok(Outcome {
        completed: tables.len(),
        ..Outcome::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{ensure_dir, EVALUATION_FILE};
    use std::fs;

    #[test]
    fn empty_evaluation_is_an_explicit_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            output_root: dir.path().to_path_buf(),
            ..RunManifest::default()
        };
        assert!(cmd_report(&m, &ReportOptions::default()).is_err());
        ensure_dir(dir.path()).unwrap();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["benchmark"]).unwrap();
        fs::write(dir.path().join(EVALUATION_FILE), w.into_inner().unwrap()).unwrap();
        assert!(matches!(cmd_report(&m, &ReportOptions::default()), Err(Error::Empty(_))));
        assert!(!dir.path().join("report").exists());
    }

    #[test]
    fn report_writes_every_table() {
        use crate::analysis::EvalRow;
        use crate::detectors::DetectorKind;
        use crate::sampler::{FiLevel, PdLevel};
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            output_root: dir.path().to_path_buf(),
            ..RunManifest::default()
        };
        let mut rows: Vec<EvalRow> = Vec::new();
        for i in 0..24 {
            for (j, d) in [DetectorKind::Trivial, DetectorKind::Lof, DetectorKind::Loda].into_iter().enumerate() {
                let mut r = crate::analysis::tests::row(&format!("b{i}"), d);
                r.mset = ["a", "b"][i / 8 % 2].into();
                r.pd = PdLevel::new((i % 4) as u8).unwrap();
                r.fi = FiLevel::new((i / 4 % 2 * 3) as u8).unwrap();
                r.anomaly_fraction = 0.01 + 0.01 * (i % 3) as f64;
                r.mean_difficulty = 0.1 + 0.05 * (i % 4) as f64;
                r.clusteredness = Some((i % 5) as f64 * 0.2 - 0.4);
                r.distance_ratio = 1.0 + (i / 4 % 2) as f64;
                r.logit_auc = 2.0 - 0.1 * i as f64 + 0.3 * j as f64 + 0.01 * (i * i % 7) as f64;
                r.log_lift = 1.0 + 0.05 * (i % 5) as f64 - 0.2 * j as f64;
                rows.push(r);
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &rows {
            w.serialize(r).unwrap();
        }
        fs::write(dir.path().join(EVALUATION_FILE), w.into_inner().unwrap()).unwrap();
        let opts = ReportOptions {
            filters: vec![Filter::parse(&["pd=pd-1"]).unwrap()],
        };
        cmd_report(&m, &opts).unwrap();
        let report = dir.path().join("report");
        for f in ["mset", "origin", "rf", "pd", "nc", "fi"] {
            assert!(report.join(format!("failure_{f}_0.001.csv")).exists(), "{f}");
        }
        for name in [
            "mean_all",
            "mean_fi_fi-3",
            "mean_nc_0.25",
            "mean_pd_pd-1",
            "contrasts_fi",
            "ols_logit_auc_real",
            "ols_log_lift_discrete",
            "ablation_log_lift",
            "ols_r2",
        ] {
            assert!(report.join(format!("{name}.csv")).exists(), "{name}");
        }
        let text = fs::read_to_string(report.join("report.txt")).unwrap();
        assert!(text.contains("Benchmark failure rate by pd"));
        assert!(text.contains("filter: pd=pd-1"));
    }
}
